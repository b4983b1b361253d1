#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "infosem/baselines.hpp"
#include "infosem/dataio.hpp"
#include "infosem/models.hpp"
#include "infosem/training.hpp"

namespace infosem {

// Gene-level benchmark split. TFs and TGs are partitioned seen/unseen at 3:1
// (unseen count = max(1, round(n/4))); a gene playing both roles gets one
// coin, so nothing about an unseen gene ever appears in the training edges.
// Edges: unseen x unseen -> unseen_test; seen x seen -> train / seen_test at
// 3:1; mixed edges are dropped.
struct BenchmarkSplit {
    std::vector<std::size_t> seen_tfs, unseen_tfs;
    std::vector<std::size_t> seen_tgs, unseen_tgs;
    LabeledEdges train, seen_test, unseen_test, dropped;
};

BenchmarkSplit make_split(const LabeledEdges& edges, std::uint64_t seed);

void write_split(const BenchmarkSplit& split, const std::string& path,
                 const std::string& config_echo = "");
BenchmarkSplit read_split(const std::string& path, const ExpressionMatrix& genes);

// Per TF, keep a uniform random subset of negatives of the positives' size
// (never upsampling); positives are untouched.
LabeledEdges downsample_negatives(const LabeledEdges& train, std::uint64_t seed);

// Average precision with tied score blocks processed atomically; exact
// prevalence for constant scores, 1 for a perfect ranking. Throws
// DegenerateLabels when one class is absent.
double auprc(const std::vector<int>& labels, const std::vector<double>& scores);

// Fraction of positives among the top ceil(1% of edges) by score; boundary
// ties are broken by stable input order.
double hit_at_1pct(const std::vector<int>& labels, const std::vector<double>& scores);

// Fraction of positive edges with probability strictly above the threshold.
double recall_at_threshold(const std::vector<int>& labels, const std::vector<double>& probabilities,
                           double threshold = 0.5);

// Precision-recall curve as (recall, precision) points, starting at (0, 1),
// one point per tied score block.
std::vector<std::pair<double, double>> pr_curve(const std::vector<int>& labels,
                                                const std::vector<double>& scores);

// Pearson correlation of average-ranked data (ties get average ranks).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// positives / (positives + negatives) per TF, TFs without edges omitted,
// sorted by TF index.
std::vector<std::pair<std::size_t, double>> tf_imbalance(const LabeledEdges& train);

// Spearman correlation between the per-TF LR coefficient and the per-TF
// class imbalance of the training edges.
double bias_analysis(const OneHotLrModel& lr, const LabeledEdges& train);

// --- hyperparameter cross-validation ---

struct HyperGrid {
    std::vector<double> sigma_w{1.0};
    std::vector<double> sigma_l{0.1};
};

struct HyperChoice {
    double sigma_w = 1.0;
    double sigma_l = 0.1;
    double mean_auprc = 0.0;
};

// Trains a scorer for one grid point on one inner fold's training edges and
// returns a P x P score matrix.
using FoldScorer = std::function<Matrix(const PriorConfig& prior, const LabeledEdges& fold_train)>;

// Inner K-fold split of the training edges at the gene-pair level; selects
// the grid point maximizing mean inner-fold AUPRC. Ties go to the first grid
// point in (sigma_w outer, sigma_l inner) order. Folds where the validation
// edges hold one class are skipped with a warning.
HyperChoice cross_validate(Variant variant, const HyperGrid& grid, const LabeledEdges& train,
                           const PriorConfig& base_prior, const FoldScorer& scorer,
                           std::size_t folds, std::uint64_t seed,
                           std::vector<std::string>* warnings = nullptr);

// --- benchmark orchestration ---

enum class BenchModel { Random, OneHotLr, MatComp, DeepSem, InfoSemB, InfoSemBC };

std::string bench_model_name(BenchModel m);
BenchModel bench_model_from_name(const std::string& name);

struct BenchmarkConfig {
    std::size_t repeats = 10;
    std::uint64_t master_seed = 0;
    TrainConfig train;
    PriorConfig prior;
    std::size_t enc_hidden = 16;
    std::size_t dec_hidden = 16;
    // one-hot LR
    double lr_lambda = 0.01;
    double lr_step = 0.5;
    std::size_t lr_iters = 500;
    // matrix completion (rank 0 -> min(16, P/4))
    std::size_t mc_rank = 0;
    double mc_lambda = 0.1;
    std::size_t mc_sweeps = 20;
    bool downsample = false;
    std::size_t jobs = 1;
    BcScoreMode bc_score = BcScoreMode::SigmoidLogits;
};

// Repeats: fresh split, train every requested model, score both test sets,
// aggregate mean +/- SEM. One model failing marks its cells failed and the
// others proceed.
MetricsReport run_benchmark(const ExpressionMatrix& x, const LabeledEdges& labels,
                            const EmbeddingMatrix* embeddings,
                            const std::vector<BenchModel>& models, const BenchmarkConfig& cfg,
                            const std::string& dataset_id = "", const std::string& config_echo = "");

// Labels/scores of an edge list under a P x P score matrix.
void extract_scores(const LabeledEdges& edges, const Matrix& score_matrix,
                    std::vector<int>& labels, std::vector<double>& scores);

} // namespace infosem
