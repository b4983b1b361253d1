#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"

#include "infosem/dataio.hpp"
#include "infosem/evalbench.hpp"
#include "infosem/models.hpp"

using namespace infosem;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("infosem_cli_" + std::to_string(::getpid()) + "_" +
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

int run_cli(const std::string& args, const std::string& log_path) {
    const std::string cmd =
        std::string(INFOSEM_CLI_PATH) + " " + args + " >" + log_path + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("generate writes the dataset files deterministically") {
    TempDir dir;
    const std::string common =
        "generate --p 12 --n 20 --tfs 3 --edges-per-tf 3 --d 4 --seed 5 --out ";
    CHECK(run_cli(common + dir.file("a"), dir.file("log_a")) == 0);
    for (const char* name :
         {"expression.csv", "labels.tsv", "embeddings.csv", "truth_adjacency.csv", "config.json"})
        CHECK(fs::exists(dir.path / "a" / name));

    CHECK(run_cli(common + dir.file("b"), dir.file("log_b")) == 0);
    for (const char* name : {"expression.csv", "labels.tsv", "embeddings.csv"})
        CHECK(read_file(dir.file(std::string("a/") + name)) ==
              read_file(dir.file(std::string("b/") + name)));

    // the config echo records the resolved seed
    const json cfg = json::parse(read_file(dir.file("a/config.json")));
    CHECK(cfg["seed"].get<std::uint64_t>() == 5);
}

TEST_CASE("generate rejects an invalid rho naming the flag") {
    TempDir dir;
    const int code = run_cli("generate --rho 1.5 --out " + dir.file("x"), dir.file("log"));
    CHECK(code == 2);
    const std::string log = read_file(dir.file("log"));
    CHECK(log.find("--rho") != std::string::npos);
}

TEST_CASE("split subcommand") {
    TempDir dir;
    REQUIRE(run_cli("generate --p 14 --n 16 --tfs 4 --edges-per-tf 3 --seed 2 --out " +
                        dir.file("data"),
                    dir.file("log0")) == 0);
    const std::string base = "split --expression " + dir.file("data/expression.csv") +
                             " --labels " + dir.file("data/labels.tsv") + " --seed 3 --out ";
    CHECK(run_cli(base + dir.file("split_a.tsv"), dir.file("log1")) == 0);
    const std::string printed = read_file(dir.file("log1"));
    CHECK(printed.find("unseen TFs: 1") != std::string::npos);
    CHECK(printed.find("train edges:") != std::string::npos);

    CHECK(run_cli(base + dir.file("split_b.tsv"), dir.file("log2")) == 0);
    CHECK(read_file(dir.file("split_a.tsv")) == read_file(dir.file("split_b.tsv")));

    // a missing labels file is a usage error
    CHECK(run_cli("split --expression " + dir.file("data/expression.csv") + " --labels " +
                      dir.file("data/nope.tsv") + " --out " + dir.file("s.tsv"),
                  dir.file("log3")) == 2);
}

TEST_CASE("train, score, and evaluate round trip") {
    TempDir dir;
    REQUIRE(run_cli("generate --p 10 --n 24 --tfs 3 --edges-per-tf 3 --seed 7 --out " +
                        dir.file("data"),
                    dir.file("log0")) == 0);
    REQUIRE(run_cli("split --expression " + dir.file("data/expression.csv") + " --labels " +
                        dir.file("data/labels.tsv") + " --seed 8 --out " + dir.file("split.tsv"),
                    dir.file("log1")) == 0);

    // deepsem smoke run writes a model and a trace
    const std::string train_cmd = "train --expression " + dir.file("data/expression.csv") +
                                  " --variant deepsem --epochs 3 --batch 12 --seed 9 --out " +
                                  dir.file("model.json") + " --trace " + dir.file("trace.csv");
    CHECK(run_cli(train_cmd, dir.file("log2")) == 0);
    CHECK(fs::exists(dir.file("model.json")));
    const std::string trace = read_file(dir.file("trace.csv"));
    CHECK(trace.rfind("epoch,phase,elbo,seconds", 0) == 0);

    // bit-identical model on re-run with the same seed
    CHECK(run_cli("train --expression " + dir.file("data/expression.csv") +
                      " --variant deepsem --epochs 3 --batch 12 --seed 9 --out " +
                      dir.file("model_again.json"),
                  dir.file("log3")) == 0);
    CHECK(read_file(dir.file("model.json")) == read_file(dir.file("model_again.json")));

    // infosem-b without embeddings is a usage error
    CHECK(run_cli("train --expression " + dir.file("data/expression.csv") +
                      " --variant infosem-b --epochs 1 --out " + dir.file("b.json"),
                  dir.file("log4")) == 2);

    // infosem-bc records that it read only the train partition
    CHECK(run_cli("train --expression " + dir.file("data/expression.csv") +
                      " --variant infosem-bc --embeddings " + dir.file("data/embeddings.csv") +
                      " --split " + dir.file("split.tsv") +
                      " --epochs 2 --batch 12 --seed 10 --out " + dir.file("bc.json"),
                  dir.file("log5")) == 0);
    const json bc_doc = json::parse(read_file(dir.file("bc.json")));
    const json echo = json::parse(bc_doc["config_echo"].get<std::string>());
    REQUIRE(echo.contains("label_partitions_read"));
    CHECK(echo["label_partitions_read"] == json::array({"train"}));

    // score emits a CSV with the config echo
    CHECK(run_cli("score --model " + dir.file("model.json") + " --out " + dir.file("scores.csv"),
                  dir.file("log6")) == 0);
    const std::string scores = read_file(dir.file("scores.csv"));
    CHECK(scores.find("tf,tg,score") != std::string::npos);
    CHECK(scores.find("# config:") != std::string::npos);

    // recall@0.5 on a weight-based model is refused
    CHECK(run_cli("evaluate --model " + dir.file("model.json") + " --expression " +
                      dir.file("data/expression.csv") + " --split " + dir.file("split.tsv") +
                      " --recall",
                  dir.file("log7")) == 2);
}

TEST_CASE("evaluate on perfect and constant fixtures") {
    TempDir dir;
    GenConfig gen;
    gen.p = 12;
    gen.n = 10;
    gen.n_tfs = 4;
    gen.edges_per_tf = 4;
    gen.seed = 40;
    const SyntheticDataset ds = generate_synthetic(gen);
    write_expression(ds.expression, dir.file("expression.csv"));
    const BenchmarkSplit split = make_split(ds.labels, 41);
    write_split(split, dir.file("split.tsv"));

    // a model whose adjacency equals the truth ranks positives first
    ModelState perfect;
    perfect.variant = Variant::DeepSem;
    perfect.p = gen.p;
    perfect.adjacency = ds.true_adjacency;
    perfect.encoder = Mlp{0, {}, {}, {1.0}, 0.0, {0.0}, 0.0};
    perfect.decoder = perfect.encoder;
    perfect.gene_symbols = ds.expression.gene_symbols;
    perfect.tf_flags.assign(ds.expression.tf_flags.begin(), ds.expression.tf_flags.end());
    save_model(perfect, dir.file("perfect.json"));

    CHECK(run_cli("evaluate --model " + dir.file("perfect.json") + " --expression " +
                      dir.file("expression.csv") + " --split " + dir.file("split.tsv") +
                      " --kind unseen --out " + dir.file("metrics.json") + " --pr-curve " +
                      dir.file("pr.csv"),
                  dir.file("log0")) == 0);
    const json metrics = json::parse(read_file(dir.file("metrics.json")));
    CHECK(metrics["auprc"].get<double>() == 1.0);
    const std::string pr = read_file(dir.file("pr.csv"));
    CHECK(pr.rfind("recall,precision\n0,", 0) == 0); // first point has recall 0

    // constant scores land exactly at prevalence
    ModelState constant = perfect;
    constant.adjacency = Matrix(gen.p, gen.p);
    save_model(constant, dir.file("constant.json"));
    CHECK(run_cli("evaluate --model " + dir.file("constant.json") + " --expression " +
                      dir.file("expression.csv") + " --split " + dir.file("split.tsv") +
                      " --kind unseen --out " + dir.file("metrics2.json"),
                  dir.file("log1")) == 0);
    const json metrics2 = json::parse(read_file(dir.file("metrics2.json")));
    double prevalence = 0.0;
    for (const Edge& e : split.unseen_test.edges) prevalence += e.label;
    prevalence /= static_cast<double>(split.unseen_test.size());
    CHECK(metrics2["auprc"].get<double>() == doctest::Approx(prevalence).epsilon(1e-12));
}

TEST_CASE("benchmark subcommand") {
    TempDir dir;
    REQUIRE(run_cli("generate --p 16 --n 14 --tfs 4 --edges-per-tf 4 --seed 30 --out " +
                        dir.file("data"),
                    dir.file("log0")) == 0);
    const std::string cmd = "benchmark --expression " + dir.file("data/expression.csv") +
                            " --labels " + dir.file("data/labels.tsv") +
                            " --models random,matcomp --repeats 2 --seed 31 --out ";
    CHECK(run_cli(cmd + dir.file("outa"), dir.file("log1")) == 0);
    CHECK(fs::exists(dir.file("outa/report.json")));
    CHECK(fs::exists(dir.file("outa/report.csv")));

    const MetricsReport report = read_report(dir.file("outa/report.json"));
    bool has_random = false, has_matcomp = false;
    for (const MetricRow& r : report.rows) {
        has_random |= r.model == "random";
        has_matcomp |= r.model == "matcomp";
    }
    CHECK(has_random);
    CHECK(has_matcomp);
    const std::string table = read_file(dir.file("log1"));
    CHECK(table.find("model") != std::string::npos);
    CHECK(table.find("random") != std::string::npos);

    // repeats 1 suppresses the SEM
    CHECK(run_cli("benchmark --expression " + dir.file("data/expression.csv") + " --labels " +
                      dir.file("data/labels.tsv") +
                      " --models random --repeats 1 --seed 31 --out " + dir.file("outb"),
                  dir.file("log2")) == 0);
    CHECK(read_file(dir.file("log2")).find("(n/a)") != std::string::npos);

    // byte-identical reports on a re-run
    CHECK(run_cli(cmd + dir.file("outc"), dir.file("log3")) == 0);
    CHECK(read_file(dir.file("outa/report.csv")) == read_file(dir.file("outc/report.csv")));
    CHECK(read_file(dir.file("outa/report.json")) == read_file(dir.file("outc/report.json")));
}

TEST_CASE("unknown flags and missing subcommands are usage errors") {
    TempDir dir;
    CHECK(run_cli("", dir.file("log0")) == 2);
    CHECK(run_cli("generate --not-a-flag 3 --out " + dir.file("x"), dir.file("log1")) == 2);
}
