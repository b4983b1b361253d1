#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "infosem/baselines.hpp"
#include "infosem/dataio.hpp"
#include "infosem/evalbench.hpp"
#include "infosem/models.hpp"
#include "infosem/numkit.hpp"
#include "infosem/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace infosem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int fail_usage(const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    return kExitUsage;
}

int fail_runtime(const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    return kExitRuntime;
}

struct GenerateArgs {
    GenConfig gen;
    std::string out_dir;
};

int cmd_generate(const GenerateArgs& args) {
    try {
        args.gen.validate();
    } catch (const Error& e) {
        return fail_usage(e.what());
    }
    try {
        fs::create_directories(args.out_dir);
        const SyntheticDataset ds = generate_synthetic(args.gen);
        write_expression(ds.expression, args.out_dir + "/expression.csv");
        write_labels(ds.labels, args.out_dir + "/labels.tsv");
        write_embeddings(ds.embeddings, args.out_dir + "/embeddings.csv");
        write_adjacency(ds.true_adjacency, ds.expression.gene_symbols,
                        args.out_dir + "/truth_adjacency.csv");
        std::ofstream cfg(args.out_dir + "/config.json", std::ios::binary);
        if (!cfg) throw IoError("cannot write config.json");
        cfg << ds.config_echo << '\n';
        std::cout << "wrote expression.csv labels.tsv embeddings.csv truth_adjacency.csv "
                     "config.json to "
                  << args.out_dir << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return fail_runtime(e.what());
    }
}

struct SplitArgs {
    std::string expression_path, labels_path, out_path;
    std::uint64_t seed = 0;
};

int cmd_split(const SplitArgs& args) {
    ExpressionMatrix x;
    LabeledEdges labels;
    try {
        x = load_expression(args.expression_path);
        labels = load_labels(args.labels_path, x);
    } catch (const Error& e) {
        return fail_usage(e.what());
    }

    BenchmarkSplit split;
    try {
        split = make_split(labels, args.seed);
    } catch (const TooFewGenes& e) {
        return fail_usage(e.what());
    } catch (const std::exception& e) {
        return fail_runtime(e.what());
    }

    try {
        json echo;
        echo["expression"] = args.expression_path;
        echo["labels"] = args.labels_path;
        echo["seed"] = args.seed;
        write_split(split, args.out_path, echo.dump());
        std::cout << "seen TFs: " << split.seen_tfs.size()
                  << ", unseen TFs: " << split.unseen_tfs.size()
                  << ", seen TGs: " << split.seen_tgs.size()
                  << ", unseen TGs: " << split.unseen_tgs.size() << "\n";
        std::cout << "train edges: " << split.train.size()
                  << ", seen-test edges: " << split.seen_test.size()
                  << ", unseen-test edges: " << split.unseen_test.size()
                  << ", dropped edges: " << split.dropped.size() << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return fail_runtime(e.what());
    }
}

struct TrainArgs {
    std::string expression_path, embeddings_path, split_path;
    std::string variant = "deepsem";
    std::string out_model, out_trace;
    TrainConfig train;
    PriorConfig prior;
    std::size_t enc_hidden = 16, dec_hidden = 16;
    bool log1p = false, zscore = false;
};

int cmd_train(const TrainArgs& args) {
    ExpressionMatrix x;
    EmbeddingMatrix embeddings;
    bool have_embeddings = false;
    LabeledEdges prior_edges;
    bool have_split = false;
    Variant variant;
    try {
        variant = variant_from_name(args.variant);
        x = load_expression(args.expression_path);
        if (!args.embeddings_path.empty()) {
            embeddings = load_embeddings(args.embeddings_path, x);
            have_embeddings = true;
        }
        if (variant != Variant::DeepSem && !have_embeddings)
            throw MissingInput("--variant " + args.variant + " requires --embeddings");
        if (variant == Variant::InfoSemBC) {
            if (args.split_path.empty())
                throw MissingInput("--variant infosem-bc requires --split (train labels prior)");
            // only the train partition is consumed; test partitions stay unread
            prior_edges = read_split(args.split_path, x).train;
            have_split = true;
        }
        TrainConfig clamped = args.train;
        clamped.batch_size = std::min(clamped.batch_size, x.cell_count());
        clamped.validate(x.cell_count());
    } catch (const Error& e) {
        return fail_usage(e.what());
    }

    try {
        std::vector<std::string> warnings;
        const ExpressionMatrix prepared = preprocess(x, args.log1p, args.zscore, &warnings);
        for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";

        Rng init_rng = Rng(args.train.seed).derive(1);
        ModelState init = init_state(variant, prepared.gene_count(), prepared.cell_count(),
                                     have_embeddings ? embeddings.dim() : 0, args.prior, init_rng,
                                     args.enc_hidden, args.dec_hidden);
        if (variant != Variant::DeepSem) init.embeddings = embeddings.values;
        init.gene_symbols = prepared.gene_symbols;
        init.tf_flags = prepared.tf_flags;

        TrainConfig cfg = args.train;
        cfg.batch_size = std::min(cfg.batch_size, prepared.cell_count());
        auto [trained, trace] = train(init, prepared, have_split ? &prior_edges : nullptr, cfg);

        json echo;
        echo["command"] = "train";
        echo["expression"] = args.expression_path;
        echo["embeddings"] = args.embeddings_path;
        echo["split"] = args.split_path;
        echo["variant"] = args.variant;
        echo["log1p"] = args.log1p;
        echo["zscore"] = args.zscore;
        echo["enc_hidden"] = args.enc_hidden;
        echo["dec_hidden"] = args.dec_hidden;
        echo["train"] = json::parse(cfg.echo_json());
        echo["prior"] = {{"sigma_a", args.prior.sigma_a}, {"sigma_z", args.prior.sigma_z},
                         {"sigma_w", args.prior.sigma_w}, {"sigma_l", args.prior.sigma_l},
                         {"beta", cfg.beta_kl},           {"rank_h", args.prior.rank_h}};
        echo["label_partitions_read"] = have_split ? json::array({"train"}) : json::array();

        save_model(trained, args.out_model, echo.dump());
        if (!args.out_trace.empty()) write_trace_csv(trace, args.out_trace);
        std::cout << "trained " << args.variant << " for " << cfg.epochs << " epochs; model at "
                  << args.out_model << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return fail_runtime(e.what());
    }
}

struct ScoreArgs {
    std::string model_path, out_path;
    std::string bc_mode = "sigmoid";
};

int cmd_score(const ScoreArgs& args) {
    ModelState model;
    BcScoreMode mode;
    try {
        model = load_model(args.model_path);
        if (args.bc_mode == "sigmoid") mode = BcScoreMode::SigmoidLogits;
        else if (args.bc_mode == "composed") mode = BcScoreMode::ComposedMagnitude;
        else return fail_usage("--bc-mode must be 'sigmoid' or 'composed'");
    } catch (const Error& e) {
        return fail_usage(e.what());
    }

    try {
        const Matrix scores = edge_scores(model, mode);
        std::ofstream out(args.out_path, std::ios::binary);
        if (!out) throw IoError("cannot write file: " + args.out_path);
        out << "# config: " << model_config_echo(args.model_path) << '\n';
        out << "tf,tg,score\n";
        auto symbol = [&](std::size_t i) {
            if (i < model.gene_symbols.size()) return model.gene_symbols[i];
            char buf[16];
            std::snprintf(buf, sizeof(buf), "G%03zu", i);
            return std::string(buf);
        };
        for (std::size_t i = 0; i < model.p; ++i) {
            if (!model.tf_flags.empty() && !model.tf_flags[i]) continue;
            for (std::size_t k = 0; k < model.p; ++k) {
                if (i == k) continue;
                out << symbol(i) << ',' << symbol(k) << ',' << format_double(scores(i, k)) << '\n';
            }
        }
        std::cout << "wrote edge scores to " << args.out_path << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return fail_runtime(e.what());
    }
}

struct EvaluateArgs {
    std::string model_path, split_path, expression_path;
    std::string kind = "unseen"; // seen | unseen
    std::string out_metrics, out_pr_curve;
    std::string bc_mode = "sigmoid";
    bool require_recall = false;
};

int cmd_evaluate(const EvaluateArgs& args) {
    ModelState model;
    BenchmarkSplit split;
    BcScoreMode mode = BcScoreMode::SigmoidLogits;
    try {
        model = load_model(args.model_path);
        const ExpressionMatrix x = load_expression(args.expression_path);
        split = read_split(args.split_path, x);
        if (args.kind != "seen" && args.kind != "unseen")
            throw Error("--kind must be 'seen' or 'unseen'");
        if (args.bc_mode == "composed") mode = BcScoreMode::ComposedMagnitude;
        else if (args.bc_mode != "sigmoid") throw Error("--bc-mode must be 'sigmoid' or 'composed'");
        const bool probability_scores =
            model.variant == Variant::InfoSemBC && mode == BcScoreMode::SigmoidLogits;
        if (args.require_recall && !probability_scores)
            throw Error("recall@0.5 needs probability scores; " + variant_name(model.variant) +
                        " emits weight magnitudes (no probability mapping supplied)");
    } catch (const Error& e) {
        return fail_usage(e.what());
    }

    try {
        const LabeledEdges& edges = args.kind == "seen" ? split.seen_test : split.unseen_test;
        const Matrix score_matrix = edge_scores(model, mode);
        std::vector<int> labels;
        std::vector<double> scores;
        extract_scores(edges, score_matrix, labels, scores);

        const double ap = auprc(labels, scores);
        const double hit = hit_at_1pct(labels, scores);
        const bool probability_scores =
            model.variant == Variant::InfoSemBC && mode == BcScoreMode::SigmoidLogits;

        json out;
        out["kind"] = args.kind;
        out["edges"] = labels.size();
        out["auprc"] = ap;
        out["hit_at_1pct"] = hit;
        std::cout << "auprc: " << format_double(ap) << "\n";
        std::cout << "hit_at_1pct: " << format_double(hit) << "\n";
        if (probability_scores) {
            const double rec = recall_at_threshold(labels, scores, 0.5);
            out["recall_at_0_5"] = rec;
            std::cout << "recall_at_0_5: " << format_double(rec) << "\n";
        }
        out["config_echo"] = model_config_echo(args.model_path);

        if (!args.out_metrics.empty()) {
            std::ofstream f(args.out_metrics, std::ios::binary);
            if (!f) throw IoError("cannot write file: " + args.out_metrics);
            f << out.dump(2) << '\n';
        }
        if (!args.out_pr_curve.empty()) {
            const auto curve = pr_curve(labels, scores);
            std::ofstream f(args.out_pr_curve, std::ios::binary);
            if (!f) throw IoError("cannot write file: " + args.out_pr_curve);
            f << "recall,precision\n";
            for (const auto& [r, p] : curve)
                f << format_double(r) << ',' << format_double(p) << '\n';
        }
        return kExitOk;
    } catch (const std::exception& e) {
        return fail_runtime(e.what());
    }
}

struct BenchmarkArgs {
    std::string expression_path, labels_path, embeddings_path;
    std::vector<std::string> model_names;
    std::string out_dir;
    BenchmarkConfig cfg;
    bool log1p = false, zscore = false;
};

int cmd_benchmark(const BenchmarkArgs& args) {
    ExpressionMatrix x;
    LabeledEdges labels;
    EmbeddingMatrix embeddings;
    bool have_embeddings = false;
    std::vector<BenchModel> models;
    try {
        x = load_expression(args.expression_path);
        labels = load_labels(args.labels_path, x);
        if (!args.embeddings_path.empty()) {
            embeddings = load_embeddings(args.embeddings_path, x);
            have_embeddings = true;
        }
        if (args.model_names.empty()) throw Error("--models must name at least one model");
        for (const std::string& name : args.model_names) {
            const BenchModel m = bench_model_from_name(name);
            if ((m == BenchModel::InfoSemB || m == BenchModel::InfoSemBC) && !have_embeddings)
                throw MissingInput(name + " requires --embeddings");
            models.push_back(m);
        }
    } catch (const Error& e) {
        return fail_usage(e.what());
    }

    try {
        fs::create_directories(args.out_dir);
        std::vector<std::string> warnings;
        const ExpressionMatrix prepared = preprocess(x, args.log1p, args.zscore, &warnings);
        for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";

        json echo;
        echo["command"] = "benchmark";
        echo["expression"] = args.expression_path;
        echo["labels"] = args.labels_path;
        echo["embeddings"] = args.embeddings_path;
        echo["models"] = args.model_names;
        echo["repeats"] = args.cfg.repeats;
        echo["master_seed"] = args.cfg.master_seed;
        echo["downsample"] = args.cfg.downsample;
        echo["log1p"] = args.log1p;
        echo["zscore"] = args.zscore;
        echo["train"] = json::parse(args.cfg.train.echo_json());

        const MetricsReport report =
            run_benchmark(prepared, labels, have_embeddings ? &embeddings : nullptr, models,
                          args.cfg, args.expression_path, echo.dump());

        write_report(report, args.out_dir + "/report.json");
        write_report_csv(report, args.out_dir + "/report.csv");

        // mean +/- SEM table, one row per model, auprc and hit@1% per split kind
        std::printf("%-12s %-24s %-24s %-24s %-24s\n", "model", "seen auprc", "unseen auprc",
                    "seen hit@1%", "unseen hit@1%");
        for (const BenchModel m : models) {
            const std::string name = bench_model_name(m);
            auto cell = [&](const std::string& kind, const std::string& metric) -> std::string {
                for (const MetricAggregate& a : report.aggregates)
                    if (a.model == name && a.split_kind == kind && a.metric == metric) {
                        char buf[64];
                        if (std::isnan(a.sem))
                            std::snprintf(buf, sizeof(buf), "%.3f (n/a)", a.mean);
                        else
                            std::snprintf(buf, sizeof(buf), "%.3f (%.3f)", a.mean, a.sem);
                        return buf;
                    }
                return "failed";
            };
            std::printf("%-12s %-24s %-24s %-24s %-24s\n", name.c_str(),
                        cell("seen_test", "auprc").c_str(), cell("unseen_test", "auprc").c_str(),
                        cell("seen_test", "hit_at_1pct").c_str(),
                        cell("unseen_test", "hit_at_1pct").c_str());
        }
        for (const std::string& f : report.failures) std::cerr << "failure: " << f << "\n";

        const bool all_failed =
            report.rows.empty() && !report.failures.empty();
        return all_failed ? kExitRuntime : kExitOk;
    } catch (const std::exception& e) {
        return fail_runtime(e.what());
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"InfoSEM: variational structural-equation models for GRN inference"};
    app.require_subcommand(1);

    GenerateArgs gen;
    CLI::App* cgen = app.add_subcommand("generate", "write a synthetic linear-SEM dataset");
    cgen->add_option("--out", gen.out_dir, "output directory")->required();
    cgen->add_option("--p", gen.gen.p, "number of genes");
    cgen->add_option("--n", gen.gen.n, "number of cells");
    cgen->add_option("--tfs", gen.gen.n_tfs, "number of transcription factors");
    cgen->add_option("--edges-per-tf", gen.gen.edges_per_tf, "true edges per TF");
    cgen->add_option("--d", gen.gen.d, "embedding dimension");
    cgen->add_option("--rho", gen.gen.rho, "embedding informativeness in [0,1]")
        ->check(CLI::Range(0.0, 1.0));
    cgen->add_option("--noise-std", gen.gen.noise_std, "latent noise std");
    cgen->add_option("--effect-min", gen.gen.effect_min, "smallest effect size");
    cgen->add_option("--effect-max", gen.gen.effect_max, "largest effect size");
    cgen->add_option("--seed", gen.gen.seed, "generator seed");

    SplitArgs sp;
    CLI::App* csplit = app.add_subcommand("split", "gene-level seen/unseen benchmark split");
    csplit->add_option("--expression", sp.expression_path, "expression CSV")->required();
    csplit->add_option("--labels", sp.labels_path, "labels TSV")->required();
    csplit->add_option("--seed", sp.seed, "split seed");
    csplit->add_option("--out", sp.out_path, "output split file")->required();

    TrainArgs tr;
    CLI::App* ctrain = app.add_subcommand("train", "train a model variant");
    ctrain->add_option("--expression", tr.expression_path, "expression CSV")->required();
    ctrain->add_option("--variant", tr.variant, "deepsem | infosem-b | infosem-bc");
    ctrain->add_option("--embeddings", tr.embeddings_path, "embeddings CSV (b / bc)");
    ctrain->add_option("--split", tr.split_path, "split file; bc reads its train partition");
    ctrain->add_option("--out", tr.out_model, "output model document")->required();
    ctrain->add_option("--trace", tr.out_trace, "output training trace CSV");
    ctrain->add_option("--epochs", tr.train.epochs, "training epochs");
    ctrain->add_option("--batch", tr.train.batch_size, "minibatch size (cells)");
    ctrain->add_option("--lr-adjacency", tr.train.lr_adjacency, "adjacency-phase learning rate");
    ctrain->add_option("--lr-networks", tr.train.lr_networks, "network-phase learning rate");
    ctrain->add_option("--k1", tr.train.k1, "adjacency epochs per cycle");
    ctrain->add_option("--k2", tr.train.k2, "network epochs per cycle");
    ctrain->add_option("--beta", tr.train.beta_kl, "KL weight");
    ctrain->add_option("--mc-samples", tr.train.mc_samples, "reconstruction samples");
    ctrain->add_option("--seed", tr.train.seed, "training seed");
    ctrain->add_option("--sigma-a", tr.prior.sigma_a, "adjacency Laplace scale");
    ctrain->add_option("--sigma-z", tr.prior.sigma_z, "latent prior std");
    ctrain->add_option("--sigma-w", tr.prior.sigma_w, "embedding-weight prior std");
    ctrain->add_option("--sigma-l", tr.prior.sigma_l, "label-logit prior std");
    ctrain->add_option("--rank-h", tr.prior.rank_h, "low-rank logit rank (bc)");
    ctrain->add_option("--enc-hidden", tr.enc_hidden, "encoder hidden width (0 = linear)");
    ctrain->add_option("--dec-hidden", tr.dec_hidden, "decoder hidden width (0 = linear)");
    ctrain->add_flag("--log1p", tr.log1p, "apply ln(1+x) preprocessing");
    ctrain->add_flag("--zscore", tr.zscore, "standardize genes");

    ScoreArgs sc;
    CLI::App* cscore = app.add_subcommand("score", "emit edge scores of a trained model");
    cscore->add_option("--model", sc.model_path, "model document")->required();
    cscore->add_option("--out", sc.out_path, "output CSV")->required();
    cscore->add_option("--bc-mode", sc.bc_mode, "bc ranking: sigmoid | composed");

    EvaluateArgs ev;
    CLI::App* ceval = app.add_subcommand("evaluate", "score a stored model on a stored split");
    ceval->add_option("--model", ev.model_path, "model document")->required();
    ceval->add_option("--expression", ev.expression_path, "expression CSV (gene universe)")
        ->required();
    ceval->add_option("--split", ev.split_path, "split file")->required();
    ceval->add_option("--kind", ev.kind, "test set: seen | unseen");
    ceval->add_option("--out", ev.out_metrics, "output metrics JSON");
    ceval->add_option("--pr-curve", ev.out_pr_curve, "output PR-curve CSV");
    ceval->add_option("--bc-mode", ev.bc_mode, "bc ranking: sigmoid | composed");
    ceval->add_flag("--recall", ev.require_recall, "require recall@0.5 (probability scorers only)");

    BenchmarkArgs bm;
    CLI::App* cbench = app.add_subcommand("benchmark", "run the repeat benchmark");
    cbench->add_option("--expression", bm.expression_path, "expression CSV")->required();
    cbench->add_option("--labels", bm.labels_path, "labels TSV")->required();
    cbench->add_option("--embeddings", bm.embeddings_path, "embeddings CSV");
    cbench->add_option("--models", bm.model_names,
                       "models: random onehot_lr matcomp deepsem infosem-b infosem-bc")
        ->delimiter(',');
    cbench->add_option("--repeats", bm.cfg.repeats, "number of split repeats");
    cbench->add_option("--seed", bm.cfg.master_seed, "master seed");
    cbench->add_option("--jobs", bm.cfg.jobs, "parallel repeat workers");
    cbench->add_option("--out", bm.out_dir, "output directory")->required();
    cbench->add_option("--epochs", bm.cfg.train.epochs, "SEM training epochs");
    cbench->add_option("--batch", bm.cfg.train.batch_size, "SEM minibatch size");
    cbench->add_option("--lr-adjacency", bm.cfg.train.lr_adjacency, "adjacency learning rate");
    cbench->add_option("--lr-networks", bm.cfg.train.lr_networks, "network learning rate");
    cbench->add_option("--beta", bm.cfg.train.beta_kl, "KL weight");
    cbench->add_option("--sigma-a", bm.cfg.prior.sigma_a, "adjacency Laplace scale");
    cbench->add_option("--sigma-z", bm.cfg.prior.sigma_z, "latent prior std");
    cbench->add_option("--sigma-w", bm.cfg.prior.sigma_w, "embedding-weight prior std");
    cbench->add_option("--sigma-l", bm.cfg.prior.sigma_l, "label-logit prior std");
    cbench->add_option("--rank-h", bm.cfg.prior.rank_h, "low-rank logit rank (bc)");
    cbench->add_option("--enc-hidden", bm.cfg.enc_hidden, "encoder hidden width");
    cbench->add_option("--dec-hidden", bm.cfg.dec_hidden, "decoder hidden width");
    cbench->add_option("--lr-lambda", bm.cfg.lr_lambda, "one-hot LR ridge strength");
    cbench->add_option("--mc-rank", bm.cfg.mc_rank, "matcomp rank (0 = min(16, P/4))");
    cbench->add_option("--mc-lambda", bm.cfg.mc_lambda, "matcomp ridge strength");
    cbench->add_flag("--downsample", bm.cfg.downsample, "per-TF negative downsampling");
    cbench->add_flag("--log1p", bm.log1p, "apply ln(1+x) preprocessing");
    cbench->add_flag("--zscore", bm.zscore, "standardize genes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kExitUsage;
    }

    if (cgen->parsed()) return cmd_generate(gen);
    if (csplit->parsed()) return cmd_split(sp);
    if (ctrain->parsed()) return cmd_train(tr);
    if (cscore->parsed()) return cmd_score(sc);
    if (ceval->parsed()) return cmd_evaluate(ev);
    if (cbench->parsed()) return cmd_benchmark(bm);
    return kExitUsage;
}
