#include "infosem/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace infosem {

void TrainConfig::validate(std::size_t n_cells) const {
    if (!(lr_adjacency > 0.0) || !(lr_networks > 0.0))
        throw Error("train config: learning rates must be > 0");
    if (k1 < 1 || k2 < 1) throw Error("train config: k1 and k2 must be >= 1");
    if (batch_size < 1 || batch_size > n_cells)
        throw Error("train config: batch size must lie in [1, N]");
    if (mc_samples < 1) throw Error("train config: sample count must be >= 1");
}

std::string TrainConfig::echo_json() const {
    nlohmann::json j;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["lr_adjacency"] = lr_adjacency;
    j["lr_networks"] = lr_networks;
    j["k1"] = k1;
    j["k2"] = k2;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["beta_kl"] = beta_kl;
    j["seed"] = seed;
    j["mc_samples"] = mc_samples;
    return j.dump();
}

void write_trace_csv(const TrainTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << "epoch,phase,elbo,seconds\n";
    for (const TraceRow& r : trace.rows)
        out << r.epoch << ',' << r.phase << ',' << format_double(r.elbo) << ','
            << format_double(r.seconds) << '\n';
}

namespace {

Mlp init_mlp(std::size_t hidden, Rng& rng) {
    Mlp m;
    m.hidden = hidden;
    const std::size_t head = std::max<std::size_t>(hidden, 1);
    const double head_fan_in = hidden > 0 ? static_cast<double>(hidden) : 1.0;
    m.w1.resize(hidden);
    m.b1.assign(hidden, 0.0);
    for (double& v : m.w1) v = rng.normal(); // fan-in 1
    m.wm.resize(head);
    m.wv.resize(head);
    for (double& v : m.wm) v = rng.normal() / std::sqrt(head_fan_in);
    for (double& v : m.wv) v = rng.normal() / std::sqrt(head_fan_in);
    m.bm = 0.0;
    m.bv = 0.0;
    return m;
}

} // namespace

ModelState init_state(Variant variant, std::size_t p, std::size_t n, std::size_t d,
                      const PriorConfig& prior, Rng& rng, std::size_t enc_hidden,
                      std::size_t dec_hidden) {
    (void)n;
    ModelState s;
    s.variant = variant;
    s.p = p;
    s.d = variant == Variant::DeepSem ? 0 : d;
    s.prior = prior;

    s.adjacency = scale(standard_normal(rng, p, p), 1e-2); // variance 1e-4
    for (std::size_t i = 0; i < p; ++i) s.adjacency(i, i) = 0.0;

    if (variant == Variant::InfoSemBC) {
        const std::size_t h = prior.rank_h;
        const double sd = std::sqrt(1e-2 / std::sqrt(static_cast<double>(h)));
        s.logits_a = scale(standard_normal(rng, p, h), sd);
        s.logits_b = scale(standard_normal(rng, h, p), sd);
    }
    if (variant != Variant::DeepSem) s.w.assign(2 * s.d, 0.0);

    s.encoder = init_mlp(enc_hidden, rng);
    s.decoder = init_mlp(dec_hidden, rng);
    return s;
}

void adam_step(ad::ParamVector& params, const ad::ParamVector& grads, OptState& opt, double lr,
               double beta1, double beta2, double eps, const std::vector<std::size_t>& active) {
    if (params.size() != grads.size())
        throw DimensionMismatch("adam_step: gradient size does not match parameters");
    if (opt.m.size() != params.size()) {
        opt.m.assign(params.size(), 0.0);
        opt.v.assign(params.size(), 0.0);
        opt.step = 0;
    }
    ++opt.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step));
    for (std::size_t i : active) {
        const double g = grads.data()[i];
        if (!std::isfinite(g)) throw NonFiniteValue("adam_step: non-finite gradient");
        opt.m[i] = beta1 * opt.m[i] + (1.0 - beta1) * g;
        opt.v[i] = beta2 * opt.v[i] + (1.0 - beta2) * g * g;
        const double m_hat = opt.m[i] / bc1;
        const double v_hat = opt.v[i] / bc2;
        params.data()[i] += lr * m_hat / (std::sqrt(v_hat) + eps); // ascent
        if (!std::isfinite(params.data()[i]))
            throw NonFiniteValue("adam_step: non-finite parameter");
    }
}

namespace {

std::vector<std::size_t> segment_coords(const ad::ParamVector& pv,
                                        const std::vector<std::string>& names) {
    std::vector<std::size_t> coords;
    for (const std::string& name : names) {
        if (!pv.has_segment(name)) continue;
        const auto& s = pv.segment(name);
        for (std::size_t i = 0; i < s.rows * s.cols; ++i) coords.push_back(s.offset + i);
    }
    return coords;
}

void mask_adjacency_diag(ad::ParamVector& pv, std::size_t p) {
    const auto& s = pv.segment("adjacency");
    for (std::size_t i = 0; i < p; ++i) pv.data()[s.offset + i * p + i] = 0.0;
}

Matrix gather_columns(const Matrix& x, const std::vector<std::size_t>& idx, std::size_t begin,
                      std::size_t end) {
    Matrix out(x.rows(), end - begin);
    for (std::size_t j = begin; j < end; ++j)
        for (std::size_t i = 0; i < x.rows(); ++i) out(i, j - begin) = x(i, idx[j]);
    return out;
}

} // namespace

std::pair<ModelState, TrainTrace> train(const ModelState& state, const ExpressionMatrix& x,
                                        const LabeledEdges* y, const TrainConfig& cfg) {
    state.validate();
    const std::size_t n = x.cell_count();
    cfg.validate(n);
    if (x.gene_count() != state.p)
        throw DimensionMismatch("train: expression gene count does not match model");
    if (state.variant == Variant::InfoSemBC && y == nullptr)
        throw MissingInput("train: infosem-bc requires labeled edges for its prior");

    ModelState current = state;
    current.prior.beta = cfg.beta_kl;

    ad::ParamVector params = pack_params(current);
    const std::vector<std::size_t> adjacency_coords =
        segment_coords(params, {"adjacency", "logits_a", "logits_b", "w"});
    const std::vector<std::size_t> network_coords = segment_coords(
        params, {"enc_w1", "enc_b1", "enc_wm", "enc_bm", "enc_wv", "enc_bv",
                 "dec_w1", "dec_b1", "dec_wm", "dec_bm", "dec_wv", "dec_bv"});

    OptState opt_adjacency, opt_networks;
    Rng rng(cfg.seed);
    TrainTrace trace;
    double lr_adjacency = cfg.lr_adjacency;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const std::size_t cycle = cfg.k1 + cfg.k2;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const bool adjacency_phase = (epoch % cycle) < cfg.k1;
        const auto& active = adjacency_phase ? adjacency_coords : network_coords;
        OptState& opt = adjacency_phase ? opt_adjacency : opt_networks;

        const auto started = std::chrono::steady_clock::now();

        // shuffle cells (Fisher-Yates on our own stream)
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = rng.uniform_index(i);
            std::swap(order[i - 1], order[j]);
        }

        double elbo_acc = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(begin + cfg.batch_size, n);
            const std::size_t b = end - begin;
            Matrix xbatch = gather_columns(x.values, order, begin, end);
            const double cell_scale = static_cast<double>(n) / static_cast<double>(b);

            // average the reconstruction sample path over mc_samples noise draws
            double batch_value = 0.0;
            ad::ParamVector batch_grad = params.zeros_like();
            bool rejected = false;
            for (std::size_t mc = 0; mc < cfg.mc_samples; ++mc) {
                Matrix eps = standard_normal(rng, state.p, b);
                const ad::Objective objective =
                    make_elbo_objective(current, xbatch, y, std::move(eps), cell_scale);
                try {
                    const ad::ParamVector g = ad::gradient(objective, params);
                    batch_value += ad::evaluate(objective, params);
                    for (std::size_t i = 0; i < batch_grad.size(); ++i)
                        batch_grad.data()[i] += g.data()[i];
                } catch (const SingularMatrix&) {
                    // mixing matrix degenerated: reject this step and back off
                    // the adjacency learning rate
                    lr_adjacency *= 0.5;
                    rejected = true;
                    break;
                }
            }
            if (rejected) continue;

            const double inv_mc = 1.0 / static_cast<double>(cfg.mc_samples);
            for (std::size_t i = 0; i < batch_grad.size(); ++i) batch_grad.data()[i] *= inv_mc;
            batch_value *= inv_mc;

            adam_step(params, batch_grad, opt, adjacency_phase ? lr_adjacency : cfg.lr_networks,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, active);
            mask_adjacency_diag(params, state.p);
            unpack_params(current, params);

            elbo_acc += batch_value;
            ++batches;
        }

        const auto finished = std::chrono::steady_clock::now();
        TraceRow row;
        row.epoch = epoch;
        row.phase = adjacency_phase ? "adjacency" : "networks";
        row.elbo = batches > 0 ? elbo_acc / static_cast<double>(batches)
                               : std::numeric_limits<double>::quiet_NaN();
        row.seconds = std::chrono::duration<double>(finished - started).count();
        trace.rows.push_back(row);
    }

    unpack_params(current, params);
    return {current, trace};
}

Matrix ensemble_scores(const ModelState& init, const ExpressionMatrix& x, const LabeledEdges* y,
                       const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                       BcScoreMode mode) {
    if (seeds.empty()) throw Error("ensemble_scores: need at least one seed");
    std::vector<std::uint64_t> sorted = seeds;
    std::sort(sorted.begin(), sorted.end());

    Matrix acc(init.p, init.p);
    for (std::uint64_t seed : sorted) {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = seed;
        Rng init_rng = Rng(seed).derive(7001);
        ModelState restart = init_state(init.variant, init.p, x.cell_count(), init.d, init.prior,
                                        init_rng, init.encoder.hidden, init.decoder.hidden);
        restart.embeddings = init.embeddings;
        restart.gene_symbols = init.gene_symbols;
        restart.tf_flags = init.tf_flags;
        auto [trained, trace] = train(restart, x, y, run_cfg);
        acc = add(acc, edge_scores(trained, mode));
    }
    return scale(acc, 1.0 / static_cast<double>(sorted.size()));
}

} // namespace infosem
