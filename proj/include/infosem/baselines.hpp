#pragma once

#include <cstdint>
#include <vector>

#include "infosem/dataio.hpp"
#include "infosem/numkit.hpp"

namespace infosem {

// Logistic regression on concatenated one-hot gene embeddings, stored as a
// TF-side vector, a TG-side vector, and a bias. Never sees expression data.
struct OneHotLrModel {
    std::vector<double> tf_coef; // length P
    std::vector<double> tg_coef; // length P
    double bias = 0.0;
    bool use_bias = true;
    double lambda = 0.0;
};

// Full-batch ascent on the L2-penalized Bernoulli log-likelihood with step
// halving, stopped when the gradient infinity-norm drops below 1e-6. The
// bias is not penalized. Genes absent from the training edges keep their
// zero coefficients.
OneHotLrModel onehot_lr_train(const LabeledEdges& edges, std::size_t p, double lambda, double lr,
                              std::size_t iters, std::uint64_t seed, bool use_bias = true);

// sigma(tf_coef[i] + tg_coef[k] + bias)
double onehot_lr_predict(const OneHotLrModel& model, std::size_t i, std::size_t k);

// Penalized negative log-likelihood (the quantity the trainer decreases).
double onehot_lr_loss(const OneHotLrModel& model, const LabeledEdges& edges);

// Low-rank matrix completion of the observed 0/1 adjacency entries.
struct MatCompModel {
    Matrix u; // P x r
    Matrix v; // P x r
    std::size_t rank = 0;
    double lambda = 0.0;
};

// Alternating least squares on the observed entries:
//   min sum_obs (y_ik - u_i . v_k)^2 + lambda (|U|^2 + |V|^2)
// The objective is non-increasing per half-sweep. Rows and columns with no
// observations stay at zero, so unseen genes predict 0.
MatCompModel matcomp_fit(const LabeledEdges& edges, std::size_t p, std::size_t rank,
                         double lambda, std::size_t sweeps, std::uint64_t seed);

double matcomp_predict(const MatCompModel& model, std::size_t i, std::size_t k);
double matcomp_objective(const MatCompModel& model, const LabeledEdges& edges);

// i.i.d. uniform(0,1) score per edge, in input order.
std::vector<double> random_scores(const LabeledEdges& edges, std::uint64_t seed);

} // namespace infosem
