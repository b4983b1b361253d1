#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "infosem/dataio.hpp"
#include "infosem/evalbench.hpp"
#include "infosem/models.hpp"

using namespace infosem;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("infosem_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

ExpressionMatrix tiny_expression() {
    ExpressionMatrix x;
    x.gene_symbols = {"TF1", "G2", "G3"};
    x.tf_flags = {true, false, false};
    x.cell_ids = {"c1", "c2"};
    x.values = Matrix(3, 2);
    double v = 0.5;
    for (double& e : x.values.data()) e = (v += 0.25);
    return x;
}

} // namespace

TEST_CASE("expression loader happy path and round trip") {
    TempDir dir;
    write_text(dir.file("x.csv"),
               "gene,is_tf,c1,c2,c3\n"
               "TF1,1,0.5,1.25,-3\n"
               "G2,0,2,0.125,4.5\n");
    const ExpressionMatrix x = load_expression(dir.file("x.csv"));
    CHECK(x.gene_count() == 2);
    CHECK(x.cell_count() == 3);
    CHECK(x.tf_flags[0]);
    CHECK_FALSE(x.tf_flags[1]);
    CHECK(x.values(0, 1) == 1.25);
    CHECK(x.values(1, 2) == 4.5);

    // write/read round trip reproduces the matrix exactly
    Rng rng(3);
    ExpressionMatrix noisy = x;
    for (double& v : noisy.values.data()) v = rng.normal() * 1e-7 + v / 3.0;
    write_expression(noisy, dir.file("roundtrip.csv"));
    const ExpressionMatrix back = load_expression(dir.file("roundtrip.csv"));
    CHECK(back.values == noisy.values);
    CHECK(back.gene_symbols == noisy.gene_symbols);
    CHECK(back.cell_ids == noisy.cell_ids);
}

TEST_CASE("expression loader error paths") {
    TempDir dir;
    write_text(dir.file("empty.csv"), "");
    CHECK_THROWS_AS(load_expression(dir.file("empty.csv")), EmptyFile);

    write_text(dir.file("header_only.csv"), "gene,is_tf,c1\n");
    CHECK_THROWS_AS(load_expression(dir.file("header_only.csv")), EmptyFile);

    write_text(dir.file("dup.csv"), "gene,is_tf,c1\nA,1,1\nA,0,2\n");
    CHECK_THROWS_AS(load_expression(dir.file("dup.csv")), DuplicateGene);

    write_text(dir.file("badnum.csv"), "gene,is_tf,c1,c2\nA,1,1,zebra\n");
    try {
        load_expression(dir.file("badnum.csv"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("c2") != std::string::npos); // names the offending cell
    }
}

TEST_CASE("labels loader and round trip") {
    const ExpressionMatrix x = tiny_expression();
    TempDir dir;
    write_text(dir.file("y.tsv"), "TF1\tG2\t1\nTF1\tG3\t0\n");
    const LabeledEdges y = load_labels(dir.file("y.tsv"), x);
    CHECK(y.size() == 2);
    CHECK(y.edges[0].tf == 0);
    CHECK(y.edges[0].tg == 1);
    CHECK(y.edges[0].label == 1);
    CHECK(y.edges[1].label == 0);

    write_labels(y, dir.file("y2.tsv"));
    const LabeledEdges back = load_labels(dir.file("y2.tsv"), x);
    CHECK(back.size() == y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(back.edges[i].tf == y.edges[i].tf);
        CHECK(back.edges[i].tg == y.edges[i].tg);
        CHECK(back.edges[i].label == y.edges[i].label);
    }

    write_text(dir.file("unknown.tsv"), "TF1\tNOPE\t1\n");
    CHECK_THROWS_AS(load_labels(dir.file("unknown.tsv"), x), UnknownGene);
    write_text(dir.file("badlabel.tsv"), "TF1\tG2\t2\n");
    CHECK_THROWS_AS(load_labels(dir.file("badlabel.tsv"), x), InvalidLabel);
    write_text(dir.file("dupedge.tsv"), "TF1\tG2\t1\nTF1\tG2\t0\n");
    CHECK_THROWS_AS(load_labels(dir.file("dupedge.tsv"), x), DuplicateEdge);
    write_text(dir.file("nontf.tsv"), "G2\tG3\t1\n");
    CHECK_THROWS_AS(load_labels(dir.file("nontf.tsv"), x), ParseError);
}

TEST_CASE("embedding loader") {
    const ExpressionMatrix x = tiny_expression();
    TempDir dir;
    write_text(dir.file("h.csv"),
               "gene,v1,v2\nTF1,0.5,1\nG2,-1,2\nG3,0,0.25\nEXTRA,9,9\n");
    std::vector<std::string> warnings;
    const EmbeddingMatrix h = load_embeddings(dir.file("h.csv"), x, std::nullopt, &warnings);
    CHECK(h.dim() == 2);
    CHECK(h.values(1, 0) == -1.0);
    CHECK(warnings.size() == 1); // the extra gene is counted

    write_embeddings(h, dir.file("h2.csv"));
    const EmbeddingMatrix back = load_embeddings(dir.file("h2.csv"), x);
    CHECK(back.values == h.values);

    write_text(dir.file("missing.csv"), "gene,v1,v2\nTF1,0.5,1\nG2,-1,2\n");
    try {
        load_embeddings(dir.file("missing.csv"), x);
        FAIL("expected MissingGeneEmbedding");
    } catch (const MissingGeneEmbedding& e) {
        CHECK(std::string(e.what()).find("G3") != std::string::npos);
    }

    write_text(dir.file("ragged.csv"), "gene,v1,v2\nTF1,0.5\nG2,-1,2\nG3,0,1\n");
    CHECK_THROWS_AS(load_embeddings(dir.file("ragged.csv"), x), DimensionMismatch);
    CHECK_THROWS_AS(load_embeddings(dir.file("h.csv"), x, 5), DimensionMismatch);
}

TEST_CASE("preprocess") {
    ExpressionMatrix x = tiny_expression();

    const ExpressionMatrix untouched = preprocess(x, false, false);
    CHECK(untouched.values == x.values);

    std::vector<std::string> warnings;
    const ExpressionMatrix z = preprocess(x, false, true, &warnings);
    for (std::size_t i = 0; i < z.gene_count(); ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < z.cell_count(); ++j) mean += z.values(i, j);
        mean /= static_cast<double>(z.cell_count());
        for (std::size_t j = 0; j < z.cell_count(); ++j) {
            const double d = z.values(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(z.cell_count());
        CHECK(std::fabs(mean) < 1e-12);
        CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-12);
    }

    ExpressionMatrix with_const = x;
    for (std::size_t j = 0; j < with_const.cell_count(); ++j) with_const.values(2, j) = 7.0;
    warnings.clear();
    const ExpressionMatrix zc = preprocess(with_const, false, true, &warnings);
    for (std::size_t j = 0; j < zc.cell_count(); ++j) CHECK(zc.values(2, j) == 0.0);
    CHECK(warnings.size() == 1);

    ExpressionMatrix neg = x;
    neg.values(0, 0) = -1.0;
    CHECK_THROWS_AS(preprocess(neg, true, false), NegativeValueWithLog1p);
}

TEST_CASE("generator: A = 0 gives X = Z semantics and determinism") {
    GenConfig cfg;
    cfg.p = 6;
    cfg.n = 40;
    cfg.n_tfs = 2;
    cfg.edges_per_tf = 0;
    cfg.seed = 9;
    const SyntheticDataset ds = generate_synthetic(cfg);
    CHECK(max_abs(ds.true_adjacency) == 0.0);
    // every label in the complete grid is negative
    CHECK(ds.labels.positive_count() == 0);
    CHECK(ds.labels.size() == cfg.n_tfs * (cfg.p - 1));

    const SyntheticDataset again = generate_synthetic(cfg);
    CHECK(again.expression.values == ds.expression.values);
    CHECK(again.embeddings.values == ds.embeddings.values);
    CHECK(again.true_adjacency == ds.true_adjacency);
}

TEST_CASE("generator structural invariants") {
    Rng seeds(31);
    for (int trial = 0; trial < 10; ++trial) {
        GenConfig cfg;
        cfg.p = 12 + seeds.uniform_index(10);
        cfg.n = 30;
        cfg.n_tfs = 2 + seeds.uniform_index(3);
        cfg.edges_per_tf = 3;
        cfg.rho = 0.5;
        cfg.seed = seeds.next_u64();
        const SyntheticDataset ds = generate_synthetic(cfg);

        for (std::size_t i = 0; i < cfg.p; ++i) {
            CHECK(ds.true_adjacency(i, i) == 0.0);
            if (i >= cfg.n_tfs)
                for (std::size_t k = 0; k < cfg.p; ++k) CHECK(ds.true_adjacency(i, k) == 0.0);
        }
        CHECK(spectral_radius_estimate(ds.true_adjacency) <= 0.9 + 1e-9);

        // labels match the adjacency support
        for (const Edge& e : ds.labels.edges)
            CHECK((e.label == 1) == (std::fabs(ds.true_adjacency(e.tf, e.tg)) > 0.0));
        CHECK(ds.labels.size() == cfg.n_tfs * (cfg.p - 1));
        CHECK(ds.labels.positive_count() == cfg.n_tfs * cfg.edges_per_tf);
    }
}

TEST_CASE("generated covariance matches the linear-SEM closed form") {
    GenConfig cfg;
    cfg.p = 4;
    cfg.n = 10000;
    cfg.n_tfs = 2;
    cfg.edges_per_tf = 2;
    cfg.noise_std = 1.0;
    cfg.seed = 123;
    const SyntheticDataset ds = generate_synthetic(cfg);

    // empirical covariance
    Matrix cov(cfg.p, cfg.p);
    std::vector<double> mean(cfg.p, 0.0);
    for (std::size_t i = 0; i < cfg.p; ++i) {
        for (std::size_t j = 0; j < cfg.n; ++j) mean[i] += ds.expression.values(i, j);
        mean[i] /= static_cast<double>(cfg.n);
    }
    for (std::size_t a = 0; a < cfg.p; ++a)
        for (std::size_t b = 0; b < cfg.p; ++b) {
            double s = 0.0;
            for (std::size_t j = 0; j < cfg.n; ++j)
                s += (ds.expression.values(a, j) - mean[a]) *
                     (ds.expression.values(b, j) - mean[b]);
            cov(a, b) = s / static_cast<double>(cfg.n);
        }

    // closed form (I-A^T)^{-1} sigma^2 (I-A)^{-1}
    const Matrix m = mixing_matrix(ds.true_adjacency);
    const Matrix minv = solve(lu_factor(m), Matrix::identity(cfg.p));
    const Matrix expected = scale(matmul(minv, transpose(minv)), cfg.noise_std * cfg.noise_std);
    for (std::size_t a = 0; a < cfg.p; ++a)
        for (std::size_t b = 0; b < cfg.p; ++b) {
            const double tol = 0.1 * std::max(1.0, std::fabs(expected(a, b)));
            CHECK(std::fabs(cov(a, b) - expected(a, b)) < tol);
        }
}

TEST_CASE("embedding informativeness: aligned labels are recoverable at rho = 1") {
    GenConfig cfg;
    cfg.p = 25;
    cfg.n = 10; // expression size is irrelevant here
    cfg.n_tfs = 4;
    cfg.edges_per_tf = 4;
    cfg.rho = 1.0;
    cfg.d = 6;

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        cfg.seed = seed + 100;
        const SyntheticDataset ds = generate_synthetic(cfg);
        std::vector<int> labels;
        std::vector<double> scores;
        for (const Edge& e : ds.labels.edges) {
            labels.push_back(e.label);
            double m = 0.0;
            for (std::size_t q = 0; q < cfg.d; ++q)
                m += ds.embeddings.values(e.tf, q) * ds.hidden_weights(q, 0) +
                     ds.embeddings.values(e.tg, q) * ds.hidden_weights(cfg.d + q, 0);
            scores.push_back(m);
        }
        CHECK(auprc(labels, scores) >= 0.9);
    }
}

TEST_CASE("embedding informativeness is monotone in rho") {
    GenConfig cfg;
    cfg.p = 25;
    cfg.n = 10;
    cfg.n_tfs = 4;
    cfg.edges_per_tf = 4;
    cfg.d = 6;

    auto mean_alignment_auprc = [&](double rho) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            GenConfig c = cfg;
            c.rho = rho;
            c.seed = 500 + seed;
            const SyntheticDataset ds = generate_synthetic(c);
            std::vector<int> labels;
            std::vector<double> scores;
            for (const Edge& e : ds.labels.edges) {
                labels.push_back(e.label);
                double m = 0.0;
                for (std::size_t q = 0; q < c.d; ++q)
                    m += ds.embeddings.values(e.tf, q) * ds.hidden_weights(q, 0) +
                         ds.embeddings.values(e.tg, q) * ds.hidden_weights(c.d + q, 0);
                scores.push_back(m);
            }
            total += auprc(labels, scores);
        }
        return total / 10.0;
    };

    const double at0 = mean_alignment_auprc(0.0);
    const double at05 = mean_alignment_auprc(0.5);
    const double at1 = mean_alignment_auprc(1.0);
    CHECK(at0 <= at05 + 1e-12);
    CHECK(at05 <= at1 + 1e-12);
    CHECK(at1 >= 0.9);
}

TEST_CASE("generator config validation") {
    GenConfig cfg;
    cfg.rho = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg.rho = 0.5;
    cfg.n_tfs = 50;
    cfg.p = 10;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("metrics report round trip and aggregates") {
    MetricsReport report;
    report.dataset_id = "synthetic-test";
    report.config_echo = "{\"repeats\":3}";
    Rng rng(21);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        for (const char* model : {"random", "matcomp"}) {
            MetricRow row;
            row.model = model;
            row.split_kind = "unseen_test";
            row.seed = seed;
            row.metric = "auprc";
            row.value = 0.2 + 0.1 * rng.uniform();
            report.rows.push_back(row);
        }
    }
    report.aggregates = aggregate_rows(report.rows);
    report.failures.push_back("deepsem seed=1: example failure");

    TempDir dir;
    write_report(report, dir.file("report.json"));
    const MetricsReport back = read_report(dir.file("report.json"));
    CHECK(back.dataset_id == report.dataset_id);
    CHECK(back.config_echo == report.config_echo);
    REQUIRE(back.rows.size() == report.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        CHECK(back.rows[i].model == report.rows[i].model);
        CHECK(back.rows[i].value == report.rows[i].value); // bit-exact numbers
    }
    REQUIRE(back.aggregates.size() == report.aggregates.size());

    // SEM recomputed from the per-seed rows matches the stored aggregate
    const auto recomputed = aggregate_rows(back.rows);
    for (std::size_t i = 0; i < recomputed.size(); ++i) {
        CHECK(std::fabs(recomputed[i].mean - back.aggregates[i].mean) < 1e-12);
        CHECK(std::fabs(recomputed[i].sem - back.aggregates[i].sem) < 1e-12);
    }

    CHECK(back.failures == report.failures);

    // single-seed aggregate reports SEM as not available
    const auto single = aggregate_rows({report.rows[0]});
    REQUIRE(single.size() == 1);
    CHECK(single[0].count == 1);
    CHECK(std::isnan(single[0].sem));

    write_report_csv(report, dir.file("report.csv"));
    std::ifstream csv(dir.file("report.csv"));
    std::string header;
    std::getline(csv, header);
    CHECK(header == "model,split_kind,seed,metric,value");
}

TEST_CASE("report schema mismatch") {
    TempDir dir;
    write_text(dir.file("bad.json"), "{\"schema_version\": 1, \"kind\": \"other\"}");
    CHECK_THROWS_AS(read_report(dir.file("bad.json")), SchemaVersionMismatch);
    write_text(dir.file("missing.json"),
               "{\"schema_version\": 1, \"kind\": \"infosem_metrics_report\", \"rows\": []}");
    CHECK_THROWS_AS(read_report(dir.file("missing.json")), SchemaVersionMismatch);
    write_text(dir.file("notjson.json"), "this is not json");
    CHECK_THROWS_AS(read_report(dir.file("notjson.json")), ParseError);
}
