#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "infosem/autodiff.hpp"
#include "infosem/dataio.hpp"
#include "infosem/numkit.hpp"

namespace infosem {

enum class Variant { DeepSem, InfoSemB, InfoSemBC };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Prior hyperparameters shared by the model family. logit_hi/lo are kept in
// closed form (ln 19 = logit(0.95)).
struct PriorConfig {
    double sigma_a = 1.0;  // Laplace scale on adjacency entries
    double sigma_z = 1.0;  // latent prior std
    double sigma_w = 1.0;  // prior std on the embedding weights
    double sigma_l = 0.1;  // prior std on observed-label logits
    double beta = 1.0;     // KL weight
    std::size_t rank_h = 2;
    double logit_hi = 2.9444389791664403; // ln 19
    double logit_lo = -2.9444389791664403;
};

// Entrywise scalar->scalar network with a shared hidden layer (tanh) and two
// heads: mean (identity output) and spread (softplus output + 1e-6 floor).
// hidden == 0 makes both heads linear in the input.
struct Mlp {
    std::size_t hidden = 16;
    std::vector<double> w1, b1; // hidden layer (size hidden)
    std::vector<double> wm;     // mean head (size max(hidden, 1))
    double bm = 0.0;
    std::vector<double> wv;     // spread head (size max(hidden, 1))
    double bv = 0.0;
};

inline constexpr double kVarianceFloor = 1e-6;

// All learnable quantities of one model variant. Fields not used by the
// variant stay empty.
struct ModelState {
    Variant variant = Variant::DeepSem;
    std::size_t p = 0;
    std::size_t d = 0; // embedding dimension (B, BC)

    Matrix adjacency;           // P x P weighted adjacency (A~ or A~e), zero diagonal
    Matrix logits_a, logits_b;  // P x h and h x P low-rank logit factors (BC)
    std::vector<double> w;      // 2d embedding weights (B, BC)
    Matrix embeddings;          // P x d gene embeddings (B, BC)
    Mlp encoder, decoder;
    PriorConfig prior;

    std::vector<std::string> gene_symbols; // optional, for score alignment
    std::vector<bool> tf_flags;            // optional

    void validate() const;
};

// --- model operations (plain double path) ---

// M = I - A^T
Matrix mixing_matrix(const Matrix& adjacency);

// Entrywise posterior parameters of q(Z^ | X): means and positive stds.
void encode(const Matrix& x, const Mlp& enc, Matrix& mu, Matrix& sd);
// Entrywise likelihood parameters of p(X | Z^): means and positive variances.
void decode(const Matrix& z_hat, const Mlp& dec, Matrix& mean, Matrix& var);

// Z^ = mu + sd * eps with eps ~ N(0, 1)
Matrix reparam_sample(const Matrix& mu, const Matrix& sd, Rng& rng);
Matrix reparam_with_noise(const Matrix& mu, const Matrix& sd, const Matrix& eps);

// Z = (I - A^T) Z^
Matrix latent_noise(const Matrix& z_hat, const Matrix& adjacency);

// sum_ij log N(x_ij; mean_ij, var_ij) for z_hat drawn by reparam_sample
double reconstruction_term(const Matrix& x, const Matrix& z_hat, const Mlp& dec);

// Closed-form KL[ q(Z | X, A) || N(0, sigma_z^2 I) ] on the transformed
// variable Z = M Z^, summed over columns.
double kl_term(const Matrix& mu, const Matrix& sd, const Matrix& adjacency, double sigma_z);

// Monte Carlo cross-check of kl_term; returns (estimate, standard error).
std::pair<double, double> kl_term_monte_carlo(const Matrix& mu, const Matrix& sd,
                                              const Matrix& adjacency, double sigma_z,
                                              std::size_t samples, Rng& rng);

// sum over off-diagonal entries of Laplace(a_ik; 0, sigma_a) log-density
double adjacency_prior_deepsem(const Matrix& adjacency, double sigma_a);

// m_ik = [h_i, h_k] w^T with zero diagonal
Matrix embedding_prior_mean(const Matrix& embeddings, const std::vector<double>& w);

// sum over off-diagonal entries of Laplace(a_ik; m_ik, sigma_a) log-density
double adjacency_prior_infosem_b(const Matrix& adjacency, const Matrix& embeddings,
                                 const std::vector<double>& w, double sigma_a);

// sum_q log N(w_q; 0, sigma_w)
double weight_prior(const std::vector<double>& w, double sigma_w);

// A = A_e * sigmoid(La Lb) elementwise, zero diagonal
Matrix compose_adjacency(const Matrix& effect, const Matrix& logits_a, const Matrix& logits_b);

// Observed labels pull the logits toward logit_hi / logit_lo; unobserved
// entries contribute exactly 0.
double label_prior(const Matrix& logits_a, const Matrix& logits_b, const LabeledEdges& y,
                   double sigma_l, double logit_hi, double logit_lo);

// Single-sample Monte Carlo ELBO of the variant held by state. y is required
// for InfoSEM-BC and ignored otherwise; pass nullptr when absent.
double elbo(const ModelState& state, const ExpressionMatrix& x, const LabeledEdges* y, Rng& rng);

enum class BcScoreMode { SigmoidLogits, ComposedMagnitude };

// Ranking scores: |a_ik| for DeepSEM / InfoSEM-B, sigmoid(l_ik) for
// InfoSEM-BC (interaction probability). Diagonal entries are set to 0, below
// every achievable off-diagonal score, and are excluded from ranking.
Matrix edge_scores(const ModelState& state, BcScoreMode mode = BcScoreMode::SigmoidLogits);

// --- autodiff path ---

// Parameter layout for the variant: adjacency, low-rank factors, embedding
// weights, encoder and decoder head segments.
ad::ParamVector pack_params(const ModelState& state);
void unpack_params(ModelState& state, const ad::ParamVector& params);

// Objective closure computing the variant ELBO on a tape. xbatch holds the
// selected cell columns; eps is fixed noise of the same shape (one sample per
// column); cell_scale multiplies the data-dependent terms (reconstruction and
// KL) to keep minibatch objectives unbiased; priors enter once, unscaled.
ad::Objective make_elbo_objective(const ModelState& shape, Matrix xbatch,
                                  const LabeledEdges* y, Matrix eps, double cell_scale);

// --- serialization ---

// Self-describing JSON document; text round-trip is bit-exact.
std::string serialize_model(const ModelState& state, const std::string& config_echo = "");
ModelState deserialize_model(const std::string& text);
void save_model(const ModelState& state, const std::string& path,
                const std::string& config_echo = "");
ModelState load_model(const std::string& path);
// Config echo recorded at save time ("" when absent).
std::string model_config_echo(const std::string& path);

} // namespace infosem
