#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "infosem/numkit.hpp"

namespace infosem {

// P x N gene-by-cell expression matrix with gene metadata.
struct ExpressionMatrix {
    std::vector<std::string> gene_symbols; // length P, unique
    std::vector<bool> tf_flags;            // length P
    std::vector<std::string> cell_ids;     // length N
    Matrix values;                         // P x N

    std::size_t gene_count() const { return gene_symbols.size(); }
    std::size_t cell_count() const { return cell_ids.size(); }
    std::optional<std::size_t> gene_index(const std::string& symbol) const;
};

// Partially observed binary adjacency as (tf, tg, label) triples.
struct Edge {
    std::size_t tf = 0;
    std::size_t tg = 0;
    int label = 0; // 0 or 1
};

struct LabeledEdges {
    std::vector<Edge> edges;
    std::vector<std::string> symbols; // index -> symbol; may be empty

    std::size_t size() const { return edges.size(); }
    std::size_t positive_count() const;
    double prevalence() const;
    // Throws DuplicateEdge / InvalidLabel on violated invariants.
    void validate() const;
};

// Per-gene external embedding rows.
struct EmbeddingMatrix {
    std::vector<std::string> gene_symbols; // length P
    Matrix values;                         // P x d

    std::size_t dim() const { return values.cols(); }
};

struct GenConfig {
    std::size_t p = 20;
    std::size_t n = 1000;
    std::size_t n_tfs = 3;
    std::size_t edges_per_tf = 4;
    std::size_t d = 8;
    double rho = 1.0;       // embedding informativeness in [0, 1]
    double noise_std = 1.0; // sigma_z of the latent noise
    double effect_min = 0.5;
    double effect_max = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::string echo_json() const;
};

struct SyntheticDataset {
    ExpressionMatrix expression;
    Matrix true_adjacency;       // P x P, non-TF rows zero, zero diagonal
    LabeledEdges labels;         // complete TF x TG grid
    EmbeddingMatrix embeddings;  // P x d
    Matrix hidden_weights;       // 2d x 1 pair-score weights (verification only)
    std::string config_echo;     // JSON echo of the generator config
};

// --- loaders / writers (CSV and TSV, UTF-8, '.' decimal separator) ---

// CSV with header "gene,is_tf,<cell ids...>", one gene per row.
ExpressionMatrix load_expression(const std::string& path);
void write_expression(const ExpressionMatrix& x, const std::string& path);

// TSV "tf<TAB>tg<TAB>label" with label in {0,1}, no header.
LabeledEdges load_labels(const std::string& path, const ExpressionMatrix& genes);
void write_labels(const LabeledEdges& edges, const std::string& path);

// CSV with header "gene,v1,...,vd". Every model gene must appear; extra
// genes are ignored (a count warning is appended when `warnings` is given).
EmbeddingMatrix load_embeddings(const std::string& path,
                                const ExpressionMatrix& genes,
                                std::optional<std::size_t> d_expected = std::nullopt,
                                std::vector<std::string>* warnings = nullptr);
void write_embeddings(const EmbeddingMatrix& e, const std::string& path);

// P x P matrix CSV with a gene-symbol header row/column.
void write_adjacency(const Matrix& a, const std::vector<std::string>& symbols,
                     const std::string& path);

// Optional ln(1+x), then optional per-gene standardization to mean 0, std 1.
// Constant genes are set to all zeros (with a warning).
ExpressionMatrix preprocess(const ExpressionMatrix& x, bool log1p, bool zscore,
                            std::vector<std::string>* warnings = nullptr);

// Linear-SEM synthetic dataset with controllable embedding informativeness.
SyntheticDataset generate_synthetic(const GenConfig& cfg);

// Power-iteration estimate of the spectral radius (used by the generator's
// rescaling step and its tests).
double spectral_radius_estimate(const Matrix& a, std::size_t iters = 100,
                                std::uint64_t seed = 12345);

// --- benchmark report document ---

struct MetricRow {
    std::string model;
    std::string split_kind; // "seen_test" | "unseen_test"
    std::uint64_t seed = 0;
    std::string metric; // "auprc" | "hit_at_1pct" | "recall_at_0_5"
    double value = 0.0;
};

struct MetricAggregate {
    std::string model;
    std::string split_kind;
    std::string metric;
    double mean = 0.0;
    double sem = 0.0; // NaN when count == 1 (not available)
    std::size_t count = 0;
};

struct MetricsReport {
    std::string dataset_id;
    std::string config_echo; // JSON text of the resolved run configuration
    std::vector<MetricRow> rows;
    std::vector<MetricAggregate> aggregates;
    std::vector<std::string> failures; // "<model> seed=<s>: <message>"
};

// Mean and standard error of the mean per (model, split_kind, metric),
// grouped in first-appearance order.
std::vector<MetricAggregate> aggregate_rows(const std::vector<MetricRow>& rows);

void write_report(const MetricsReport& report, const std::string& path);
MetricsReport read_report(const std::string& path);
// Flat CSV: model,split_kind,seed,metric,value
void write_report_csv(const MetricsReport& report, const std::string& path);

// 17-significant-digit formatting used by every text writer; parsing this
// back reproduces the exact double.
std::string format_double(double v);

} // namespace infosem
