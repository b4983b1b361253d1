#include "infosem/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace infosem {

namespace {

double sigmoid_of(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// numerically safe -log p(y | logit)
double bernoulli_nll(double logit, int label) {
    // log(1 + e^z) - y z
    const double log1pe = logit > 0.0 ? logit + std::log1p(std::exp(-logit))
                                      : std::log1p(std::exp(logit));
    return log1pe - (label == 1 ? logit : 0.0);
}

} // namespace

double onehot_lr_predict(const OneHotLrModel& model, std::size_t i, std::size_t k) {
    if (i >= model.tf_coef.size() || k >= model.tg_coef.size())
        throw IndexOutOfRange("onehot_lr_predict: gene index outside model");
    return sigmoid_of(model.tf_coef[i] + model.tg_coef[k] + (model.use_bias ? model.bias : 0.0));
}

double onehot_lr_loss(const OneHotLrModel& model, const LabeledEdges& edges) {
    double loss = 0.0;
    for (const Edge& e : edges.edges) {
        const double logit =
            model.tf_coef[e.tf] + model.tg_coef[e.tg] + (model.use_bias ? model.bias : 0.0);
        loss += bernoulli_nll(logit, e.label);
    }
    for (double c : model.tf_coef) loss += model.lambda * c * c;
    for (double c : model.tg_coef) loss += model.lambda * c * c;
    return loss;
}

OneHotLrModel onehot_lr_train(const LabeledEdges& edges, std::size_t p, double lambda, double lr,
                              std::size_t iters, std::uint64_t seed, bool use_bias) {
    (void)seed; // zero initialization; the seed is kept for interface stability
    if (edges.edges.empty()) throw Error("onehot_lr_train: need at least one labeled edge");
    for (const Edge& e : edges.edges)
        if (e.tf >= p || e.tg >= p)
            throw IndexOutOfRange("onehot_lr_train: edge index outside gene range");

    OneHotLrModel model;
    model.tf_coef.assign(p, 0.0);
    model.tg_coef.assign(p, 0.0);
    model.bias = 0.0;
    model.use_bias = use_bias;
    model.lambda = lambda;

    double step = lr;
    double loss = onehot_lr_loss(model, edges);
    std::vector<double> g_tf(p), g_tg(p);

    for (std::size_t it = 0; it < iters; ++it) {
        std::fill(g_tf.begin(), g_tf.end(), 0.0);
        std::fill(g_tg.begin(), g_tg.end(), 0.0);
        double g_bias = 0.0;
        for (const Edge& e : edges.edges) {
            const double logit =
                model.tf_coef[e.tf] + model.tg_coef[e.tg] + (model.use_bias ? model.bias : 0.0);
            const double resid = sigmoid_of(logit) - static_cast<double>(e.label);
            g_tf[e.tf] += resid;
            g_tg[e.tg] += resid;
            g_bias += resid;
        }
        for (std::size_t i = 0; i < p; ++i) {
            g_tf[i] += 2.0 * lambda * model.tf_coef[i];
            g_tg[i] += 2.0 * lambda * model.tg_coef[i];
        }
        if (!use_bias) g_bias = 0.0;

        double g_inf = std::fabs(g_bias);
        for (std::size_t i = 0; i < p; ++i)
            g_inf = std::max({g_inf, std::fabs(g_tf[i]), std::fabs(g_tg[i])});
        if (g_inf < 1e-6) break;

        // descend on the penalized loss; halve the step while it increases
        OneHotLrModel trial = model;
        double trial_loss = loss;
        while (true) {
            trial = model;
            for (std::size_t i = 0; i < p; ++i) {
                trial.tf_coef[i] -= step * g_tf[i];
                trial.tg_coef[i] -= step * g_tg[i];
            }
            if (use_bias) trial.bias -= step * g_bias;
            trial_loss = onehot_lr_loss(trial, edges);
            if (trial_loss <= loss || step < 1e-14) break;
            step *= 0.5;
        }
        if (trial_loss > loss) break; // no descent direction at minimal step
        model = trial;
        loss = trial_loss;
    }
    return model;
}

double matcomp_predict(const MatCompModel& model, std::size_t i, std::size_t k) {
    if (i >= model.u.rows() || k >= model.v.rows())
        throw IndexOutOfRange("matcomp_predict: gene index outside model");
    double s = 0.0;
    for (std::size_t r = 0; r < model.rank; ++r) s += model.u(i, r) * model.v(k, r);
    return s;
}

double matcomp_objective(const MatCompModel& model, const LabeledEdges& edges) {
    double obj = 0.0;
    for (const Edge& e : edges.edges) {
        const double r = static_cast<double>(e.label) - matcomp_predict(model, e.tf, e.tg);
        obj += r * r;
    }
    for (double v : model.u.data()) obj += model.lambda * v * v;
    for (double v : model.v.data()) obj += model.lambda * v * v;
    return obj;
}

MatCompModel matcomp_fit(const LabeledEdges& edges, std::size_t p, std::size_t rank,
                         double lambda, std::size_t sweeps, std::uint64_t seed) {
    if (rank < 1) throw Error("matcomp_fit: rank must be >= 1");
    for (const Edge& e : edges.edges)
        if (e.tf >= p || e.tg >= p)
            throw IndexOutOfRange("matcomp_fit: edge index outside gene range");

    Rng rng(seed);
    MatCompModel model;
    model.rank = rank;
    model.lambda = lambda;
    const double init_sd = 1.0 / std::sqrt(static_cast<double>(rank));
    model.u = scale(standard_normal(rng, p, rank), init_sd);
    model.v = scale(standard_normal(rng, p, rank), init_sd);

    // observation lists per row and per column
    std::vector<std::vector<std::pair<std::size_t, double>>> by_row(p), by_col(p);
    for (const Edge& e : edges.edges) {
        by_row[e.tf].push_back({e.tg, static_cast<double>(e.label)});
        by_col[e.tg].push_back({e.tf, static_cast<double>(e.label)});
    }

    auto solve_block = [&](Matrix& target, const Matrix& other,
                           const std::vector<std::vector<std::pair<std::size_t, double>>>& obs) {
        for (std::size_t i = 0; i < p; ++i) {
            if (obs[i].empty()) {
                // only the ridge term remains; the minimizer is zero
                for (std::size_t r = 0; r < rank; ++r) target(i, r) = 0.0;
                continue;
            }
            Matrix gram(rank, rank);
            Matrix rhs(rank, 1);
            for (const auto& [j, y] : obs[i]) {
                for (std::size_t a = 0; a < rank; ++a) {
                    rhs(a, 0) += y * other(j, a);
                    for (std::size_t b = 0; b < rank; ++b)
                        gram(a, b) += other(j, a) * other(j, b);
                }
            }
            for (std::size_t a = 0; a < rank; ++a) gram(a, a) += lambda;
            const Matrix sol = solve(lu_factor(gram), rhs);
            for (std::size_t r = 0; r < rank; ++r) target(i, r) = sol(r, 0);
        }
    };

    for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
        solve_block(model.u, model.v, by_row);
        solve_block(model.v, model.u, by_col);
    }
    return model;
}

std::vector<double> random_scores(const LabeledEdges& edges, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> scores(edges.size());
    for (double& s : scores) s = rng.uniform();
    return scores;
}

} // namespace infosem
