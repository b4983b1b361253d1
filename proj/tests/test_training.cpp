#include <cmath>

#include "doctest.h"
#include "infosem/evalbench.hpp"
#include "infosem/training.hpp"

using namespace infosem;

namespace {

ExpressionMatrix expression_of(const Matrix& values, std::size_t n_tfs = 1) {
    ExpressionMatrix x;
    x.values = values;
    for (std::size_t i = 0; i < values.rows(); ++i) {
        x.gene_symbols.push_back("G" + std::to_string(i));
        x.tf_flags.push_back(i < n_tfs);
    }
    for (std::size_t j = 0; j < values.cols(); ++j) x.cell_ids.push_back("c" + std::to_string(j));
    return x;
}

} // namespace

TEST_CASE("init_state is deterministic and structurally sound") {
    PriorConfig prior;
    prior.rank_h = 4;
    Rng r1(5), r2(5);
    const ModelState a = init_state(Variant::InfoSemBC, 20, 50, 3, prior, r1);
    const ModelState b = init_state(Variant::InfoSemBC, 20, 50, 3, prior, r2);
    CHECK(a.adjacency == b.adjacency);
    CHECK(a.logits_a == b.logits_a);
    CHECK(a.encoder.w1 == b.encoder.w1);

    for (std::size_t i = 0; i < 20; ++i) CHECK(a.adjacency(i, i) == 0.0);
    for (double v : a.w) CHECK(v == 0.0);

    // composed adjacency starts tiny: sigma(L) ~ 0.5 and |effect| ~ 1e-2
    const Matrix composed = compose_adjacency(a.adjacency, a.logits_a, a.logits_b);
    CHECK(max_abs(composed) < 0.1);
}

TEST_CASE("adam_step basics") {
    ad::ParamVector params;
    params.add_segment("x", 3, 1);
    params.data() = {1.0, -2.0, 0.5};
    std::vector<std::size_t> active = {0, 1, 2};

    OptState opt;
    ad::ParamVector zero_grad = params.zeros_like();
    ad::ParamVector before = params;
    adam_step(params, zero_grad, opt, 0.1, 0.9, 0.999, 1e-8, active);
    CHECK(params.data() == before.data());

    // bias-corrected first step moves each coordinate by about lr
    ad::ParamVector grad = params.zeros_like();
    grad.data() = {3.0, 3.0, 3.0};
    OptState opt2;
    ad::ParamVector p2 = before;
    adam_step(p2, grad, opt2, 0.1, 0.9, 0.999, 1e-8, active);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(p2.data()[i] - before.data()[i] == doctest::Approx(0.1).epsilon(1e-6));

    // identical calls from identical state give identical results
    OptState opt3;
    ad::ParamVector p3 = before;
    adam_step(p3, grad, opt3, 0.1, 0.9, 0.999, 1e-8, active);
    CHECK(p3.data() == p2.data());

    // only active coordinates move
    OptState opt4;
    ad::ParamVector p4 = before;
    adam_step(p4, grad, opt4, 0.1, 0.9, 0.999, 1e-8, {1});
    CHECK(p4.data()[0] == before.data()[0]);
    CHECK(p4.data()[2] == before.data()[2]);
    CHECK(p4.data()[1] != before.data()[1]);
}

TEST_CASE("zero epochs leave the state unchanged") {
    Rng rng(6);
    const ModelState init = init_state(Variant::DeepSem, 5, 16, 0, PriorConfig{}, rng, 4, 4);
    Rng data_rng(7);
    const ExpressionMatrix x = expression_of(standard_normal(data_rng, 5, 16));
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.batch_size = 8;
    auto [trained, trace] = train(init, x, nullptr, cfg);
    CHECK(trace.rows.empty());
    CHECK(serialize_model(trained) == serialize_model(init));
}

TEST_CASE("training raises the ELBO on a smoke problem") {
    GenConfig gen;
    gen.p = 10;
    gen.n = 64;
    gen.n_tfs = 2;
    gen.edges_per_tf = 3;
    gen.seed = 17;
    const SyntheticDataset ds = generate_synthetic(gen);

    Rng rng(18);
    const ModelState init = init_state(Variant::DeepSem, gen.p, gen.n, 0, PriorConfig{}, rng, 8, 8);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 32;
    cfg.seed = 19;
    auto [trained, trace] = train(init, ds.expression, nullptr, cfg);
    REQUIRE(trace.rows.size() == 50);

    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        first += trace.rows[i].elbo;
        last += trace.rows[trace.rows.size() - 5 + i].elbo;
    }
    CHECK(last / 5.0 > first / 5.0);

    // every adjacency diagonal stays pinned at zero and parameters finite
    for (std::size_t i = 0; i < gen.p; ++i) CHECK(trained.adjacency(i, i) == 0.0);
    CHECK(trained.adjacency.all_finite());
}

TEST_CASE("training is bit-deterministic in seed and config") {
    GenConfig gen;
    gen.p = 8;
    gen.n = 40;
    gen.n_tfs = 2;
    gen.edges_per_tf = 2;
    gen.seed = 23;
    const SyntheticDataset ds = generate_synthetic(gen);

    LabeledEdges prior_edges;
    prior_edges.symbols = ds.labels.symbols;
    prior_edges.edges.assign(ds.labels.edges.begin(), ds.labels.edges.begin() + 6);

    PriorConfig prior;
    prior.rank_h = 2;
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 16;
    cfg.seed = 24;

    auto run = [&]() {
        Rng rng(25);
        ModelState init = init_state(Variant::InfoSemBC, gen.p, gen.n, gen.d, prior, rng, 4, 4);
        init.embeddings = ds.embeddings.values;
        auto [trained, trace] = train(init, ds.expression, &prior_edges, cfg);
        return serialize_model(trained);
    };
    CHECK(run() == run());
}

TEST_CASE("a singular mixing matrix rejects steps instead of crashing") {
    // A = [[0,1],[1,0]] has eigenvalue 1, so I - A^T is exactly singular
    Rng rng(26);
    ModelState init = init_state(Variant::DeepSem, 2, 8, 0, PriorConfig{}, rng, 2, 2);
    init.adjacency(0, 1) = 1.0;
    init.adjacency(1, 0) = 1.0;
    Rng data_rng(27);
    const ExpressionMatrix x = expression_of(standard_normal(data_rng, 2, 8));
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    auto [trained, trace] = train(init, x, nullptr, cfg);
    // every step was rejected, so the adjacency cannot have moved
    CHECK(trained.adjacency == init.adjacency);
}

TEST_CASE("ensemble scores") {
    GenConfig gen;
    gen.p = 6;
    gen.n = 32;
    gen.n_tfs = 2;
    gen.edges_per_tf = 2;
    gen.seed = 31;
    const SyntheticDataset ds = generate_synthetic(gen);

    Rng rng(32);
    ModelState init = init_state(Variant::DeepSem, gen.p, gen.n, 0, PriorConfig{}, rng, 4, 4);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 16;

    // one seed equals the single run
    const Matrix one = ensemble_scores(init, ds.expression, nullptr, cfg, {9});
    TrainConfig single = cfg;
    single.seed = 9;
    Rng restart_rng = Rng(9).derive(7001);
    ModelState restart = init_state(Variant::DeepSem, gen.p, gen.n, 0, PriorConfig{}, restart_rng, 4, 4);
    auto [trained, trace] = train(restart, ds.expression, nullptr, single);
    CHECK(one == edge_scores(trained));

    // permuting the seed list changes nothing
    const Matrix fwd = ensemble_scores(init, ds.expression, nullptr, cfg, {1, 2, 3});
    const Matrix rev = ensemble_scores(init, ds.expression, nullptr, cfg, {3, 1, 2});
    CHECK(fwd == rev);

    // averaging restarts shrinks the spread of scores across seed groups
    auto spread = [&](const std::vector<std::vector<std::uint64_t>>& groups) {
        std::vector<Matrix> mats;
        for (const auto& g : groups) mats.push_back(ensemble_scores(init, ds.expression, nullptr, cfg, g));
        double total_var = 0.0;
        for (std::size_t e = 0; e < mats[0].size(); ++e) {
            double mean = 0.0;
            for (const Matrix& m : mats) mean += m.data()[e];
            mean /= static_cast<double>(mats.size());
            for (const Matrix& m : mats)
                total_var += (m.data()[e] - mean) * (m.data()[e] - mean);
        }
        return total_var;
    };
    const double single_spread = spread({{11}, {12}, {13}, {14}});
    const double ensemble_spread = spread({{11, 21, 31}, {12, 22, 32}, {13, 23, 33}, {14, 24, 34}});
    CHECK(ensemble_spread <= single_spread);
}
