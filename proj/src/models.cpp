#include "infosem/models.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace infosem {

using nlohmann::json;

std::string variant_name(Variant v) {
    switch (v) {
    case Variant::DeepSem: return "deepsem";
    case Variant::InfoSemB: return "infosem-b";
    case Variant::InfoSemBC: return "infosem-bc";
    }
    return "deepsem";
}

Variant variant_from_name(const std::string& name) {
    if (name == "deepsem") return Variant::DeepSem;
    if (name == "infosem-b") return Variant::InfoSemB;
    if (name == "infosem-bc") return Variant::InfoSemBC;
    throw Error("unknown model variant '" + name + "'");
}

namespace {

double softplus_of(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_of(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_mlp(const Mlp& m, const char* which) {
    const std::size_t head = std::max<std::size_t>(m.hidden, 1);
    if (m.w1.size() != m.hidden || m.b1.size() != m.hidden || m.wm.size() != head ||
        m.wv.size() != head)
        throw DimensionMismatch(std::string(which) + ": inconsistent layer sizes");
}

} // namespace

void ModelState::validate() const {
    if (adjacency.rows() != p || adjacency.cols() != p)
        throw DimensionMismatch("model: adjacency must be P x P");
    for (std::size_t i = 0; i < p; ++i)
        if (adjacency(i, i) != 0.0)
            throw Error("model: adjacency diagonal must be exactly 0");
    check_mlp(encoder, "encoder");
    check_mlp(decoder, "decoder");
    const bool uses_embeddings = variant != Variant::DeepSem;
    if (uses_embeddings) {
        if (d < 1 || embeddings.rows() != p || embeddings.cols() != d)
            throw MissingInput("model: variant requires P x d embeddings");
        if (w.size() != 2 * d)
            throw DimensionMismatch("model: w must have length 2d");
    } else {
        if (embeddings.size() != 0 || !w.empty())
            throw Error("model: deepsem carries no embedding prior fields");
    }
    if (variant == Variant::InfoSemBC) {
        if (logits_a.rows() != p || logits_a.cols() != prior.rank_h ||
            logits_b.rows() != prior.rank_h || logits_b.cols() != p)
            throw DimensionMismatch("model: logit factors must be P x h and h x P");
    } else if (logits_a.size() != 0 || logits_b.size() != 0) {
        throw Error("model: logit factors are only active for infosem-bc");
    }
}

Matrix mixing_matrix(const Matrix& adjacency) {
    if (adjacency.rows() != adjacency.cols())
        throw DimensionMismatch("mixing_matrix: adjacency must be square");
    Matrix m = Matrix::identity(adjacency.rows());
    for (std::size_t i = 0; i < adjacency.rows(); ++i)
        for (std::size_t j = 0; j < adjacency.cols(); ++j)
            m(i, j) -= adjacency(j, i);
    return m;
}

namespace {

// evaluate the scalar->scalar net on one input
void mlp_entry(const Mlp& m, double x, double& mean, double& spread) {
    double acc_m = m.bm, acc_v = m.bv;
    if (m.hidden == 0) {
        acc_m += m.wm[0] * x;
        acc_v += m.wv[0] * x;
    } else {
        for (std::size_t k = 0; k < m.hidden; ++k) {
            const double h = std::tanh(m.w1[k] * x + m.b1[k]);
            acc_m += m.wm[k] * h;
            acc_v += m.wv[k] * h;
        }
    }
    mean = acc_m;
    spread = softplus_of(acc_v) + kVarianceFloor;
}

} // namespace

void encode(const Matrix& x, const Mlp& enc, Matrix& mu, Matrix& sd) {
    check_mlp(enc, "encoder");
    mu = Matrix(x.rows(), x.cols());
    sd = Matrix(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i)
        mlp_entry(enc, x.data()[i], mu.data()[i], sd.data()[i]);
    if (!mu.all_finite() || !sd.all_finite())
        throw NonFiniteValue("encode: non-finite output");
}

void decode(const Matrix& z_hat, const Mlp& dec, Matrix& mean, Matrix& var) {
    check_mlp(dec, "decoder");
    mean = Matrix(z_hat.rows(), z_hat.cols());
    var = Matrix(z_hat.rows(), z_hat.cols());
    for (std::size_t i = 0; i < z_hat.size(); ++i)
        mlp_entry(dec, z_hat.data()[i], mean.data()[i], var.data()[i]);
    if (!mean.all_finite() || !var.all_finite())
        throw NonFiniteValue("decode: non-finite output");
}

Matrix reparam_sample(const Matrix& mu, const Matrix& sd, Rng& rng) {
    Matrix eps = standard_normal(rng, mu.rows(), mu.cols());
    return reparam_with_noise(mu, sd, eps);
}

Matrix reparam_with_noise(const Matrix& mu, const Matrix& sd, const Matrix& eps) {
    if (!mu.same_shape(sd) || !mu.same_shape(eps))
        throw DimensionMismatch("reparam: shapes do not match");
    Matrix z = mu;
    for (std::size_t i = 0; i < z.size(); ++i)
        z.data()[i] += sd.data()[i] * eps.data()[i];
    return z;
}

Matrix latent_noise(const Matrix& z_hat, const Matrix& adjacency) {
    return matmul(mixing_matrix(adjacency), z_hat);
}

double reconstruction_term(const Matrix& x, const Matrix& z_hat, const Mlp& dec) {
    if (!x.same_shape(z_hat))
        throw DimensionMismatch("reconstruction_term: shapes do not match");
    Matrix mean, var;
    decode(z_hat, dec, mean, var);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        total += gaussian_logpdf(x.data()[i], mean.data()[i], std::sqrt(var.data()[i]));
    return total;
}

double kl_term(const Matrix& mu, const Matrix& sd, const Matrix& adjacency, double sigma_z) {
    if (!mu.same_shape(sd)) throw DimensionMismatch("kl_term: mu/sd shapes do not match");
    if (!(sigma_z > 0.0)) throw InvalidScale("kl_term: sigma_z must be > 0");
    const std::size_t p = mu.rows();
    const std::size_t n = mu.cols();
    if (adjacency.rows() != p) throw DimensionMismatch("kl_term: adjacency size mismatch");

    const Matrix m = mixing_matrix(adjacency);
    const double logdet = log_abs_det(lu_factor(m));

    std::vector<double> colnorm2(p, 0.0);
    for (std::size_t r = 0; r < p; ++r)
        for (std::size_t c = 0; c < p; ++c) colnorm2[c] += m(r, c) * m(r, c);

    const Matrix m_mu = matmul(m, mu);
    const double inv_var = 1.0 / (sigma_z * sigma_z);
    const double log_var = std::log(sigma_z * sigma_z);

    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double trace = 0.0, quad = 0.0, sum_log_s2 = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            const double s = sd(i, j);
            trace += s * s * colnorm2[i];
            quad += m_mu(i, j) * m_mu(i, j);
            sum_log_s2 += std::log(s * s);
        }
        total += 0.5 * (inv_var * (trace + quad) - static_cast<double>(p) +
                        static_cast<double>(p) * log_var - 2.0 * logdet - sum_log_s2);
    }
    return total;
}

std::pair<double, double> kl_term_monte_carlo(const Matrix& mu, const Matrix& sd,
                                              const Matrix& adjacency, double sigma_z,
                                              std::size_t samples, Rng& rng) {
    const std::size_t p = mu.rows();
    const std::size_t n = mu.cols();
    const Matrix m = mixing_matrix(adjacency);
    const double logdet = log_abs_det(lu_factor(m));

    double acc = 0.0, acc2 = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        const Matrix z_hat = reparam_sample(mu, sd, rng);
        const Matrix z = matmul(m, z_hat);
        double term = -static_cast<double>(n) * logdet;
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < n; ++j)
                term += gaussian_logpdf(z_hat(i, j), mu(i, j), sd(i, j)) -
                        gaussian_logpdf(z(i, j), 0.0, sigma_z);
        acc += term;
        acc2 += term * term;
    }
    const double s = static_cast<double>(samples);
    const double mean = acc / s;
    const double sum_sq_dev = std::max(acc2 - s * mean * mean, 0.0);
    const double se = samples > 1 ? std::sqrt(sum_sq_dev / (s - 1.0) / s) : 0.0;
    return {mean, se};
}

double adjacency_prior_deepsem(const Matrix& adjacency, double sigma_a) {
    double total = 0.0;
    for (std::size_t i = 0; i < adjacency.rows(); ++i)
        for (std::size_t k = 0; k < adjacency.cols(); ++k) {
            if (i == k) continue;
            total += laplace_logpdf(adjacency(i, k), 0.0, sigma_a);
        }
    return total;
}

Matrix embedding_prior_mean(const Matrix& embeddings, const std::vector<double>& w) {
    const std::size_t p = embeddings.rows();
    const std::size_t d = embeddings.cols();
    if (w.size() != 2 * d)
        throw DimensionMismatch("embedding_prior_mean: w must have length 2d");
    std::vector<double> tf_part(p, 0.0), tg_part(p, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t q = 0; q < d; ++q) {
            tf_part[i] += embeddings(i, q) * w[q];
            tg_part[i] += embeddings(i, q) * w[d + q];
        }
    Matrix m(p, p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < p; ++k)
            m(i, k) = (i == k) ? 0.0 : tf_part[i] + tg_part[k];
    return m;
}

double adjacency_prior_infosem_b(const Matrix& adjacency, const Matrix& embeddings,
                                 const std::vector<double>& w, double sigma_a) {
    const Matrix m = embedding_prior_mean(embeddings, w);
    if (!m.same_shape(adjacency))
        throw DimensionMismatch("adjacency_prior_infosem_b: shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < adjacency.rows(); ++i)
        for (std::size_t k = 0; k < adjacency.cols(); ++k) {
            if (i == k) continue;
            total += laplace_logpdf(adjacency(i, k), m(i, k), sigma_a);
        }
    return total;
}

double weight_prior(const std::vector<double>& w, double sigma_w) {
    double total = 0.0;
    for (double v : w) total += gaussian_logpdf(v, 0.0, sigma_w);
    return total;
}

Matrix compose_adjacency(const Matrix& effect, const Matrix& logits_a, const Matrix& logits_b) {
    const Matrix l = matmul(logits_a, logits_b);
    if (!l.same_shape(effect))
        throw DimensionMismatch("compose_adjacency: logit product shape mismatch");
    Matrix a = effect;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k)
            a(i, k) = (i == k) ? 0.0 : a(i, k) * sigmoid_of(l(i, k));
    return a;
}

double label_prior(const Matrix& logits_a, const Matrix& logits_b, const LabeledEdges& y,
                   double sigma_l, double logit_hi, double logit_lo) {
    if (!(sigma_l > 0.0)) throw InvalidScale("label_prior: sigma_l must be > 0");
    if (y.edges.empty()) return 0.0;
    const Matrix l = matmul(logits_a, logits_b);
    double total = 0.0;
    for (const Edge& e : y.edges) {
        if (e.tf >= l.rows() || e.tg >= l.cols())
            throw IndexOutOfRange("label_prior: edge index outside matrix");
        const double target = e.label == 1 ? logit_hi : logit_lo;
        total += gaussian_logpdf(l(e.tf, e.tg), target, sigma_l);
    }
    return total;
}

double elbo(const ModelState& state, const ExpressionMatrix& x, const LabeledEdges* y, Rng& rng) {
    state.validate();
    if (state.variant == Variant::InfoSemBC && y == nullptr)
        throw MissingInput("elbo: infosem-bc requires the labeled-edge prior input");
    if (x.gene_count() != state.p)
        throw DimensionMismatch("elbo: expression gene count does not match model");

    Matrix mu, sd;
    encode(x.values, state.encoder, mu, sd);
    const Matrix z_hat = reparam_sample(mu, sd, rng);

    const Matrix adj_used = state.variant == Variant::InfoSemBC
                                ? compose_adjacency(state.adjacency, state.logits_a, state.logits_b)
                                : state.adjacency;

    const double recon = reconstruction_term(x.values, z_hat, state.decoder);
    const double kl = kl_term(mu, sd, adj_used, state.prior.sigma_z);

    double priors = 0.0;
    switch (state.variant) {
    case Variant::DeepSem:
        priors = adjacency_prior_deepsem(state.adjacency, state.prior.sigma_a);
        break;
    case Variant::InfoSemB:
        priors = adjacency_prior_infosem_b(state.adjacency, state.embeddings, state.w,
                                           state.prior.sigma_a) +
                 weight_prior(state.w, state.prior.sigma_w);
        break;
    case Variant::InfoSemBC:
        priors = adjacency_prior_infosem_b(state.adjacency, state.embeddings, state.w,
                                           state.prior.sigma_a) +
                 label_prior(state.logits_a, state.logits_b, *y, state.prior.sigma_l,
                             state.prior.logit_hi, state.prior.logit_lo) +
                 weight_prior(state.w, state.prior.sigma_w);
        break;
    }
    return recon + priors - state.prior.beta * kl;
}

Matrix edge_scores(const ModelState& state, BcScoreMode mode) {
    Matrix s(state.p, state.p);
    if (state.variant == Variant::InfoSemBC) {
        const Matrix l = matmul(state.logits_a, state.logits_b);
        for (std::size_t i = 0; i < state.p; ++i)
            for (std::size_t k = 0; k < state.p; ++k) {
                if (i == k) continue;
                s(i, k) = mode == BcScoreMode::SigmoidLogits
                              ? sigmoid_of(l(i, k))
                              : std::fabs(state.adjacency(i, k) * sigmoid_of(l(i, k)));
            }
    } else {
        for (std::size_t i = 0; i < state.p; ++i)
            for (std::size_t k = 0; k < state.p; ++k) {
                if (i == k) continue;
                s(i, k) = std::fabs(state.adjacency(i, k));
            }
    }
    return s;
}

// --- parameter packing ---

namespace {

void pack_mlp(ad::ParamVector& pv, const std::string& prefix, const Mlp& m) {
    const std::size_t head = std::max<std::size_t>(m.hidden, 1);
    if (m.hidden > 0) {
        pv.add_segment(prefix + "_w1", m.hidden, 1);
        pv.add_segment(prefix + "_b1", m.hidden, 1);
    }
    pv.add_segment(prefix + "_wm", head, 1);
    pv.add_segment(prefix + "_bm", 1, 1);
    pv.add_segment(prefix + "_wv", head, 1);
    pv.add_segment(prefix + "_bv", 1, 1);
}

void fill_mlp(ad::ParamVector& pv, const std::string& prefix, const Mlp& m) {
    const std::size_t head = std::max<std::size_t>(m.hidden, 1);
    auto vec_matrix = [](const std::vector<double>& v) {
        Matrix x(v.size(), 1);
        x.data() = v;
        return x;
    };
    if (m.hidden > 0) {
        pv.set_segment(prefix + "_w1", vec_matrix(m.w1));
        pv.set_segment(prefix + "_b1", vec_matrix(m.b1));
    }
    (void)head;
    pv.set_segment(prefix + "_wm", vec_matrix(m.wm));
    pv.set_segment(prefix + "_bm", Matrix(1, 1, m.bm));
    pv.set_segment(prefix + "_wv", vec_matrix(m.wv));
    pv.set_segment(prefix + "_bv", Matrix(1, 1, m.bv));
}

void unpack_mlp(Mlp& m, const ad::ParamVector& pv, const std::string& prefix) {
    if (m.hidden > 0) {
        m.w1 = pv.segment_matrix(prefix + "_w1").data();
        m.b1 = pv.segment_matrix(prefix + "_b1").data();
    }
    m.wm = pv.segment_matrix(prefix + "_wm").data();
    m.bm = pv.segment_matrix(prefix + "_bm").data()[0];
    m.wv = pv.segment_matrix(prefix + "_wv").data();
    m.bv = pv.segment_matrix(prefix + "_bv").data()[0];
}

} // namespace

ad::ParamVector pack_params(const ModelState& state) {
    ad::ParamVector pv;
    pv.add_segment("adjacency", state.p, state.p);
    if (state.variant == Variant::InfoSemBC) {
        pv.add_segment("logits_a", state.p, state.prior.rank_h);
        pv.add_segment("logits_b", state.prior.rank_h, state.p);
    }
    if (state.variant != Variant::DeepSem) pv.add_segment("w", 2 * state.d, 1);
    pack_mlp(pv, "enc", state.encoder);
    pack_mlp(pv, "dec", state.decoder);

    pv.set_segment("adjacency", state.adjacency);
    if (state.variant == Variant::InfoSemBC) {
        pv.set_segment("logits_a", state.logits_a);
        pv.set_segment("logits_b", state.logits_b);
    }
    if (state.variant != Variant::DeepSem) {
        Matrix wm(state.w.size(), 1);
        wm.data() = state.w;
        pv.set_segment("w", wm);
    }
    fill_mlp(pv, "enc", state.encoder);
    fill_mlp(pv, "dec", state.decoder);
    return pv;
}

void unpack_params(ModelState& state, const ad::ParamVector& params) {
    state.adjacency = params.segment_matrix("adjacency");
    if (state.variant == Variant::InfoSemBC) {
        state.logits_a = params.segment_matrix("logits_a");
        state.logits_b = params.segment_matrix("logits_b");
    }
    if (state.variant != Variant::DeepSem) state.w = params.segment_matrix("w").data();
    unpack_mlp(state.encoder, params, "enc");
    unpack_mlp(state.decoder, params, "dec");
}

// --- graph construction ---

namespace {

struct MlpGraphOut {
    ad::Var mean;
    ad::Var spread; // softplus(raw) + floor
};

MlpGraphOut mlp_graph(ad::Tape& t, const ad::SegmentVars& v, const std::string& prefix,
                      ad::Var xin, std::size_t hidden) {
    ad::Var mean, raw;
    if (hidden == 0) {
        mean = t.broadcast_add(v[prefix + "_bm"], t.broadcast_mul(v[prefix + "_wm"], xin));
        raw = t.broadcast_add(v[prefix + "_bv"], t.broadcast_mul(v[prefix + "_wv"], xin));
    } else {
        ad::Var mean_acc, raw_acc;
        for (std::size_t k = 0; k < hidden; ++k) {
            const ad::Var wk = t.entry(v[prefix + "_w1"], k, 0);
            const ad::Var bk = t.entry(v[prefix + "_b1"], k, 0);
            const ad::Var hk = t.tanh(t.broadcast_add(bk, t.broadcast_mul(wk, xin)));
            const ad::Var mk = t.broadcast_mul(t.entry(v[prefix + "_wm"], k, 0), hk);
            const ad::Var vk = t.broadcast_mul(t.entry(v[prefix + "_wv"], k, 0), hk);
            mean_acc = k == 0 ? mk : t.add(mean_acc, mk);
            raw_acc = k == 0 ? vk : t.add(raw_acc, vk);
        }
        mean = t.broadcast_add(v[prefix + "_bm"], mean_acc);
        raw = t.broadcast_add(v[prefix + "_bv"], raw_acc);
    }
    return {mean, t.add_scalar(t.softplus(raw), kVarianceFloor)};
}

Matrix offdiag_mask(std::size_t p) {
    Matrix m(p, p, 1.0);
    for (std::size_t i = 0; i < p; ++i) m(i, i) = 0.0;
    return m;
}

} // namespace

ad::Objective make_elbo_objective(const ModelState& shape, Matrix xbatch, const LabeledEdges* y,
                                  Matrix eps, double cell_scale) {
    shape.validate();
    if (shape.variant == Variant::InfoSemBC && y == nullptr)
        throw MissingInput("elbo objective: infosem-bc requires labeled edges");
    if (!xbatch.same_shape(eps))
        throw DimensionMismatch("elbo objective: noise shape must match the batch");

    const std::size_t p = shape.p;
    const Variant variant = shape.variant;
    const PriorConfig prior = shape.prior;
    const std::size_t enc_hidden = shape.encoder.hidden;
    const std::size_t dec_hidden = shape.decoder.hidden;
    const std::size_t d = shape.d;
    const Matrix embeddings = shape.embeddings;

    // materialize the observed-label mask and targets once
    Matrix label_mask, label_target;
    std::size_t n_observed = 0;
    if (variant == Variant::InfoSemBC && y != nullptr && !y->edges.empty()) {
        label_mask = Matrix(p, p);
        label_target = Matrix(p, p);
        for (const Edge& e : y->edges) {
            label_mask(e.tf, e.tg) = 1.0;
            label_target(e.tf, e.tg) = e.label == 1 ? prior.logit_hi : prior.logit_lo;
            ++n_observed;
        }
    }

    return [=, xbatch = std::move(xbatch), eps = std::move(eps)](
               ad::Tape& t, const ad::SegmentVars& v) -> ad::Var {
        const std::size_t b = xbatch.cols();
        const double pb = static_cast<double>(p) * static_cast<double>(b);
        const ad::Var x = t.constant(xbatch);
        const ad::Var noise = t.constant(eps);
        const ad::Var mask = t.constant(offdiag_mask(p));

        const ad::Var adj_effect = t.hadamard(v["adjacency"], mask);
        ad::Var adj_used = adj_effect;
        ad::Var logit_product; // BC only
        if (variant == Variant::InfoSemBC) {
            logit_product = t.matmul(v["logits_a"], v["logits_b"]);
            adj_used = t.hadamard(adj_effect, t.sigmoid(logit_product));
        }

        // encoder, reparameterized sample, decoder
        const MlpGraphOut enc = mlp_graph(t, v, "enc", x, enc_hidden);
        const ad::Var z_hat = t.add(enc.mean, t.hadamard(enc.spread, noise));
        const MlpGraphOut dec = mlp_graph(t, v, "dec", z_hat, dec_hidden);

        // reconstruction: sum of Gaussian log-densities with variance head
        const ad::Var diff2 = t.square(t.sub(x, dec.mean));
        ad::Var recon = t.add(t.scale(t.sum(t.log(dec.spread)), -0.5),
                              t.scale(t.sum(t.div(diff2, dec.spread)), -0.5));
        recon = t.add_scalar(recon, -0.5 * pb * std::log(2.0 * std::numbers::pi));

        // KL on the transformed variable Z = M z_hat
        const ad::Var m = t.sub(t.constant(Matrix::identity(p)), t.transpose(adj_used));
        const ad::Var logdet = t.log_abs_det(m);
        const ad::Var colnorm2 = t.matmul(t.constant(Matrix(1, p, 1.0)), t.square(m)); // 1 x P
        const ad::Var s2 = t.square(enc.spread);
        const ad::Var trace_term = t.sum(t.matmul(colnorm2, s2));
        const ad::Var quad_term = t.sum(t.square(t.matmul(m, enc.mean)));
        const double log_var_z = std::log(prior.sigma_z * prior.sigma_z);
        ad::Var kl = t.scale(t.add(trace_term, quad_term), 0.5 / (prior.sigma_z * prior.sigma_z));
        kl = t.add(kl, t.scale(t.sum(t.log(s2)), -0.5));
        kl = t.add(kl, t.scale(logdet, -static_cast<double>(b)));
        kl = t.add_scalar(kl, 0.5 * pb * (log_var_z - 1.0));

        ad::Var objective = t.scale(t.sub(recon, t.scale(kl, prior.beta)), cell_scale);

        // adjacency prior (Laplace around 0 or the embedding-driven mean)
        ad::Var prior_mean_masked; // unused for deepsem
        if (variant != Variant::DeepSem) {
            const ad::Var h = t.constant(embeddings);
            Matrix sel_tf(d, 2 * d), sel_tg(d, 2 * d);
            for (std::size_t q = 0; q < d; ++q) {
                sel_tf(q, q) = 1.0;
                sel_tg(q, d + q) = 1.0;
            }
            const ad::Var w_tf = t.matmul(t.constant(sel_tf), v["w"]); // d x 1
            const ad::Var w_tg = t.matmul(t.constant(sel_tg), v["w"]);
            const ad::Var row_part =
                t.matmul(t.matmul(h, w_tf), t.constant(Matrix(1, p, 1.0))); // P x P
            const ad::Var col_part =
                t.matmul(t.constant(Matrix(p, 1, 1.0)), t.transpose(t.matmul(h, w_tg)));
            prior_mean_masked = t.hadamard(t.add(row_part, col_part), mask);
        }

        const double n_offdiag = static_cast<double>(p) * static_cast<double>(p - 1);
        ad::Var laplace_sum =
            variant == Variant::DeepSem
                ? t.sum(t.abs(adj_effect))
                : t.sum(t.hadamard(mask, t.abs(t.sub(adj_effect, prior_mean_masked))));
        ad::Var adj_prior = t.add_scalar(t.scale(laplace_sum, -1.0 / prior.sigma_a),
                                         -n_offdiag * std::log(2.0 * prior.sigma_a));
        objective = t.add(objective, adj_prior);

        if (variant != Variant::DeepSem) {
            const double dim_w = static_cast<double>(2 * d);
            ad::Var w_prior = t.add_scalar(
                t.scale(t.sum(t.square(v["w"])), -0.5 / (prior.sigma_w * prior.sigma_w)),
                -0.5 * dim_w * std::log(2.0 * std::numbers::pi * prior.sigma_w * prior.sigma_w));
            objective = t.add(objective, w_prior);
        }

        if (variant == Variant::InfoSemBC && n_observed > 0) {
            const ad::Var lmask = t.constant(label_mask);
            const ad::Var ltarget = t.constant(label_target);
            const ad::Var sq = t.square(t.sub(logit_product, ltarget));
            ad::Var lp = t.scale(t.sum(t.hadamard(lmask, sq)),
                                 -0.5 / (prior.sigma_l * prior.sigma_l));
            lp = t.add_scalar(lp, -0.5 * static_cast<double>(n_observed) *
                                      std::log(2.0 * std::numbers::pi * prior.sigma_l * prior.sigma_l));
            objective = t.add(objective, lp);
        }
        return objective;
    };
}

// --- serialization ---

namespace {

constexpr int kModelSchemaVersion = 1;

json mlp_to_json(const Mlp& m) {
    json j;
    j["hidden"] = m.hidden;
    j["w1"] = m.w1;
    j["b1"] = m.b1;
    j["wm"] = m.wm;
    j["bm"] = m.bm;
    j["wv"] = m.wv;
    j["bv"] = m.bv;
    return j;
}

Mlp mlp_from_json(const json& j) {
    Mlp m;
    m.hidden = j.at("hidden").get<std::size_t>();
    m.w1 = j.at("w1").get<std::vector<double>>();
    m.b1 = j.at("b1").get<std::vector<double>>();
    m.wm = j.at("wm").get<std::vector<double>>();
    m.bm = j.at("bm").get<double>();
    m.wv = j.at("wv").get<std::vector<double>>();
    m.bv = j.at("bv").get<double>();
    return m;
}

json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = m.data();
    return j;
}

Matrix matrix_from_json(const json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    if (data.size() != m.size())
        throw SchemaVersionMismatch("model document: matrix payload size mismatch");
    m.data() = std::move(data);
    return m;
}

} // namespace

std::string serialize_model(const ModelState& state, const std::string& config_echo) {
    state.validate();
    json j;
    j["schema_version"] = kModelSchemaVersion;
    j["kind"] = "infosem_model";
    j["variant"] = variant_name(state.variant);
    j["p"] = state.p;
    j["d"] = state.d;
    j["prior"] = {{"sigma_a", state.prior.sigma_a}, {"sigma_z", state.prior.sigma_z},
                  {"sigma_w", state.prior.sigma_w}, {"sigma_l", state.prior.sigma_l},
                  {"beta", state.prior.beta},       {"rank_h", state.prior.rank_h},
                  {"logit_hi", state.prior.logit_hi}, {"logit_lo", state.prior.logit_lo}};
    j["adjacency"] = matrix_to_json(state.adjacency);
    if (state.variant == Variant::InfoSemBC) {
        j["logits_a"] = matrix_to_json(state.logits_a);
        j["logits_b"] = matrix_to_json(state.logits_b);
    }
    if (state.variant != Variant::DeepSem) {
        j["w"] = state.w;
        j["embeddings"] = matrix_to_json(state.embeddings);
    }
    j["encoder"] = mlp_to_json(state.encoder);
    j["decoder"] = mlp_to_json(state.decoder);
    j["gene_symbols"] = state.gene_symbols;
    std::vector<int> flags(state.tf_flags.begin(), state.tf_flags.end());
    j["tf_flags"] = flags;
    j["config_echo"] = config_echo;
    return j.dump(2);
}

ModelState deserialize_model(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError("model document is not valid JSON: " + std::string(e.what()));
    }
    try {
        if (!j.contains("schema_version") || j["schema_version"].get<int>() != kModelSchemaVersion ||
            !j.contains("kind") || j["kind"].get<std::string>() != "infosem_model")
            throw SchemaVersionMismatch("unsupported model document schema");
        ModelState s;
        s.variant = variant_from_name(j.at("variant").get<std::string>());
        s.p = j.at("p").get<std::size_t>();
        s.d = j.at("d").get<std::size_t>();
        const json& jp = j.at("prior");
        s.prior.sigma_a = jp.at("sigma_a").get<double>();
        s.prior.sigma_z = jp.at("sigma_z").get<double>();
        s.prior.sigma_w = jp.at("sigma_w").get<double>();
        s.prior.sigma_l = jp.at("sigma_l").get<double>();
        s.prior.beta = jp.at("beta").get<double>();
        s.prior.rank_h = jp.at("rank_h").get<std::size_t>();
        s.prior.logit_hi = jp.at("logit_hi").get<double>();
        s.prior.logit_lo = jp.at("logit_lo").get<double>();
        s.adjacency = matrix_from_json(j.at("adjacency"));
        if (s.variant == Variant::InfoSemBC) {
            s.logits_a = matrix_from_json(j.at("logits_a"));
            s.logits_b = matrix_from_json(j.at("logits_b"));
        }
        if (s.variant != Variant::DeepSem) {
            s.w = j.at("w").get<std::vector<double>>();
            s.embeddings = matrix_from_json(j.at("embeddings"));
        }
        s.encoder = mlp_from_json(j.at("encoder"));
        s.decoder = mlp_from_json(j.at("decoder"));
        s.gene_symbols = j.at("gene_symbols").get<std::vector<std::string>>();
        for (int f : j.at("tf_flags").get<std::vector<int>>()) s.tf_flags.push_back(f != 0);
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw SchemaVersionMismatch("model document does not match the expected schema: " +
                                    std::string(e.what()));
    }
}

void save_model(const ModelState& state, const std::string& path, const std::string& config_echo) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << serialize_model(state, config_echo) << '\n';
}

ModelState load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize_model(ss.str());
}

std::string model_config_echo(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("model document is not valid JSON: " + std::string(e.what()));
    }
    if (!j.contains("config_echo")) return "";
    return j["config_echo"].get<std::string>();
}

} // namespace infosem
