#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "infosem/autodiff.hpp"
#include "infosem/models.hpp"

namespace infosem {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double lr_adjacency = 1e-2;
    double lr_networks = 1e-3;
    std::size_t k1 = 1; // adjacency-phase epochs per cycle
    std::size_t k2 = 1; // network-phase epochs per cycle
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double beta_kl = 1.0;
    std::uint64_t seed = 0;
    std::size_t mc_samples = 1;

    void validate(std::size_t n_cells) const;
    std::string echo_json() const;
};

// Adam moment accumulators, one pair per parameter coordinate.
struct OptState {
    std::vector<double> m, v;
    std::size_t step = 0;
};

struct TraceRow {
    std::size_t epoch = 0;
    std::string phase; // "adjacency" | "networks"
    double elbo = 0.0; // mean full-data ELBO estimate over the epoch's batches
    double seconds = 0.0;
};

struct TrainTrace {
    std::vector<TraceRow> rows;
};

void write_trace_csv(const TrainTrace& trace, const std::string& path);

// Fresh state for the variant: adjacency entries ~ N(0, 1e-4) with a zero
// diagonal, logit factors ~ N(0, 1e-2/sqrt(h)), w = 0, network weights
// ~ N(0, 1/fan_in) with zero biases.
ModelState init_state(Variant variant, std::size_t p, std::size_t n, std::size_t d,
                      const PriorConfig& prior, Rng& rng,
                      std::size_t enc_hidden = 16, std::size_t dec_hidden = 16);

// One ascent step (maximizing the objective). Updates only the coordinates
// listed in `active`; adjacency-family diagonals are re-masked afterwards by
// the caller.
void adam_step(ad::ParamVector& params, const ad::ParamVector& grads, OptState& opt,
               double lr, double beta1, double beta2, double eps,
               const std::vector<std::size_t>& active);

// Alternating maximization of the variant ELBO: k1 epochs on the adjacency
// family (adjacency, low-rank factors, w), then k2 epochs on the encoder and
// decoder. Deterministic given (state, x, y, cfg).
std::pair<ModelState, TrainTrace> train(const ModelState& state, const ExpressionMatrix& x,
                                        const LabeledEdges* y, const TrainConfig& cfg);

// Elementwise mean of edge scores over independently trained restarts.
// Seeds are accumulated in sorted order, so permuting the list cannot
// change the result.
Matrix ensemble_scores(const ModelState& init, const ExpressionMatrix& x, const LabeledEdges* y,
                       const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                       BcScoreMode mode = BcScoreMode::SigmoidLogits);

} // namespace infosem
