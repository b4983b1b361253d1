#include "infosem/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <thread>

namespace infosem {

namespace {

std::vector<std::size_t> shuffled(std::vector<std::size_t> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i)
        std::swap(items[i - 1], items[rng.uniform_index(i)]);
    return items;
}

std::size_t unseen_count(std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                        static_cast<double>(n) / 4.0)));
}

} // namespace

BenchmarkSplit make_split(const LabeledEdges& edges, std::uint64_t seed) {
    std::set<std::size_t> tf_set, tg_set;
    for (const Edge& e : edges.edges) {
        tf_set.insert(e.tf);
        tg_set.insert(e.tg);
    }
    if (tf_set.size() < 2 || tg_set.size() < 2)
        throw TooFewGenes("make_split: need at least 2 distinct TFs and 2 distinct TGs");

    std::vector<std::size_t> tf_only, tg_only, dual;
    for (std::size_t g : tf_set)
        (tg_set.count(g) ? dual : tf_only).push_back(g);
    for (std::size_t g : tg_set)
        if (!tf_set.count(g)) tg_only.push_back(g);

    const std::size_t want_tf = unseen_count(tf_set.size());
    const std::size_t want_tg = unseen_count(tg_set.size());

    // Dual-role genes get a single coin, so pick how many of the unseen
    // quota each role draws from the shared pool.
    std::size_t a_min = 0;
    if (want_tf > tf_only.size()) a_min = std::max(a_min, want_tf - tf_only.size());
    if (want_tg > tg_only.size()) a_min = std::max(a_min, want_tg - tg_only.size());
    const std::size_t a_max = std::min({want_tf, want_tg, dual.size()});
    const std::size_t a = std::min(a_min <= a_max ? a_min : a_max, a_max);
    const std::size_t b = std::min(want_tf - std::min(a, want_tf), tf_only.size());
    const std::size_t c = std::min(want_tg - std::min(a, want_tg), tg_only.size());
    if (a + b == 0 || a + c == 0)
        throw TooFewGenes("make_split: cannot leave out at least one TF and one TG");

    Rng rng(seed);
    std::set<std::size_t> unseen;
    {
        const auto dual_sh = shuffled(dual, rng);
        for (std::size_t i = 0; i < a; ++i) unseen.insert(dual_sh[i]);
        const auto tf_sh = shuffled(tf_only, rng);
        for (std::size_t i = 0; i < b; ++i) unseen.insert(tf_sh[i]);
        const auto tg_sh = shuffled(tg_only, rng);
        for (std::size_t i = 0; i < c; ++i) unseen.insert(tg_sh[i]);
    }

    BenchmarkSplit split;
    for (std::size_t g : tf_set)
        (unseen.count(g) ? split.unseen_tfs : split.seen_tfs).push_back(g);
    for (std::size_t g : tg_set)
        (unseen.count(g) ? split.unseen_tgs : split.seen_tgs).push_back(g);

    split.train.symbols = edges.symbols;
    split.seen_test.symbols = edges.symbols;
    split.unseen_test.symbols = edges.symbols;
    split.dropped.symbols = edges.symbols;

    std::vector<std::size_t> seen_seen_idx;
    for (std::size_t i = 0; i < edges.edges.size(); ++i) {
        const Edge& e = edges.edges[i];
        const bool tf_unseen = unseen.count(e.tf) > 0;
        const bool tg_unseen = unseen.count(e.tg) > 0;
        if (tf_unseen && tg_unseen)
            split.unseen_test.edges.push_back(e);
        else if (!tf_unseen && !tg_unseen)
            seen_seen_idx.push_back(i);
        else
            split.dropped.edges.push_back(e);
    }

    // seen x seen edges split 3:1 into train / seen_test
    const auto order = shuffled(seen_seen_idx, rng);
    const std::size_t n_test = static_cast<std::size_t>(
        std::llround(static_cast<double>(order.size()) / 4.0));
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Edge& e = edges.edges[order[i]];
        (i < n_test ? split.seen_test : split.train).edges.push_back(e);
    }
    return split;
}

namespace {

const char* set_tag(int which) {
    switch (which) {
    case 0: return "train";
    case 1: return "seen_test";
    case 2: return "unseen_test";
    default: return "dropped";
    }
}

void write_gene_list(std::ofstream& out, const char* tag, const std::vector<std::size_t>& genes,
                     const std::vector<std::string>& symbols) {
    out << "# " << tag << ":";
    for (std::size_t g : genes) out << ' ' << symbols.at(g);
    out << '\n';
}

} // namespace

void write_split(const BenchmarkSplit& split, const std::string& path,
                 const std::string& config_echo) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << "# infosem split v1\n";
    if (!config_echo.empty()) out << "# config: " << config_echo << '\n';
    const std::vector<std::string>& symbols = split.train.symbols;
    write_gene_list(out, "seen_tfs", split.seen_tfs, symbols);
    write_gene_list(out, "unseen_tfs", split.unseen_tfs, symbols);
    write_gene_list(out, "seen_tgs", split.seen_tgs, symbols);
    write_gene_list(out, "unseen_tgs", split.unseen_tgs, symbols);
    const LabeledEdges* parts[4] = {&split.train, &split.seen_test, &split.unseen_test,
                                    &split.dropped};
    for (int which = 0; which < 4; ++which)
        for (const Edge& e : parts[which]->edges)
            out << symbols.at(e.tf) << '\t' << symbols.at(e.tg) << '\t' << e.label << '\t'
                << set_tag(which) << '\n';
}

BenchmarkSplit read_split(const std::string& path, const ExpressionMatrix& genes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);

    BenchmarkSplit split;
    split.train.symbols = genes.gene_symbols;
    split.seen_test.symbols = genes.gene_symbols;
    split.unseen_test.symbols = genes.gene_symbols;
    split.dropped.symbols = genes.gene_symbols;

    auto parse_gene_list = [&](const std::string& line, const std::string& prefix,
                               std::vector<std::size_t>& out) {
        std::string rest = line.substr(prefix.size());
        std::size_t pos = 0;
        while (pos < rest.size()) {
            while (pos < rest.size() && rest[pos] == ' ') ++pos;
            std::size_t end = rest.find(' ', pos);
            if (end == std::string::npos) end = rest.size();
            if (end > pos) {
                const std::string sym = rest.substr(pos, end - pos);
                const auto idx = genes.gene_index(sym);
                if (!idx) throw UnknownGene("split file: unknown gene '" + sym + "'");
                out.push_back(*idx);
            }
            pos = end;
        }
    };

    std::string line;
    bool header_seen = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("# infosem split v1", 0) == 0) header_seen = true;
            else if (line.rfind("# seen_tfs:", 0) == 0) parse_gene_list(line, "# seen_tfs:", split.seen_tfs);
            else if (line.rfind("# unseen_tfs:", 0) == 0) parse_gene_list(line, "# unseen_tfs:", split.unseen_tfs);
            else if (line.rfind("# seen_tgs:", 0) == 0) parse_gene_list(line, "# seen_tgs:", split.seen_tgs);
            else if (line.rfind("# unseen_tgs:", 0) == 0) parse_gene_list(line, "# unseen_tgs:", split.unseen_tgs);
            continue;
        }
        std::vector<std::string> f;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                f.push_back(line.substr(start));
                break;
            }
            f.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (f.size() != 4)
            throw ParseError("split file line " + std::to_string(line_no) +
                             ": expected 'tf<TAB>tg<TAB>label<TAB>set'");
        const auto tf = genes.gene_index(f[0]);
        const auto tg = genes.gene_index(f[1]);
        if (!tf || !tg)
            throw UnknownGene("split file line " + std::to_string(line_no) + ": unknown gene");
        if (f[2] != "0" && f[2] != "1")
            throw InvalidLabel("split file line " + std::to_string(line_no) + ": bad label");
        const Edge e{*tf, *tg, f[2] == "1" ? 1 : 0};
        if (f[3] == "train") split.train.edges.push_back(e);
        else if (f[3] == "seen_test") split.seen_test.edges.push_back(e);
        else if (f[3] == "unseen_test") split.unseen_test.edges.push_back(e);
        else if (f[3] == "dropped") split.dropped.edges.push_back(e);
        else throw ParseError("split file line " + std::to_string(line_no) + ": unknown set tag '" + f[3] + "'");
    }
    if (!header_seen) throw SchemaVersionMismatch("split file: missing 'infosem split v1' header");
    return split;
}

LabeledEdges downsample_negatives(const LabeledEdges& train, std::uint64_t seed) {
    std::map<std::size_t, std::size_t> positives;
    std::map<std::size_t, std::vector<std::size_t>> negative_idx;
    for (std::size_t i = 0; i < train.edges.size(); ++i) {
        const Edge& e = train.edges[i];
        if (e.label == 1)
            ++positives[e.tf];
        else
            negative_idx[e.tf].push_back(i);
    }

    Rng rng(seed);
    std::set<std::size_t> drop;
    for (auto& [tf, negs] : negative_idx) {
        const std::size_t keep = positives.count(tf) ? positives[tf] : 0;
        if (negs.size() <= keep) continue;
        auto order = shuffled(negs, rng);
        for (std::size_t i = keep; i < order.size(); ++i) drop.insert(order[i]);
    }

    LabeledEdges out;
    out.symbols = train.symbols;
    for (std::size_t i = 0; i < train.edges.size(); ++i)
        if (!drop.count(i)) out.edges.push_back(train.edges[i]);
    return out;
}

namespace {

void check_label_inputs(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size())
        throw DimensionMismatch("metric: labels and scores must have equal length");
    if (labels.empty()) throw DegenerateLabels("metric: empty input");
    bool has_pos = false, has_neg = false;
    for (int l : labels) {
        if (l == 1) has_pos = true;
        else has_neg = true;
    }
    if (!has_pos || !has_neg)
        throw DegenerateLabels("metric: need at least one positive and one negative label");
}

// descending score order, stable within ties
std::vector<std::size_t> ranking(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

} // namespace

double auprc(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_label_inputs(labels, scores);
    const auto idx = ranking(scores);
    const std::size_t n = idx.size();

    double ap = 0.0;
    std::size_t cum_rank = 0, cum_tp = 0, total_pos = 0;
    for (int l : labels) total_pos += (l == 1);

    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        std::size_t block_tp = 0;
        while (j < n && scores[idx[j]] == scores[idx[i]]) {
            block_tp += (labels[idx[j]] == 1);
            ++j;
        }
        cum_rank += j - i;
        cum_tp += block_tp;
        // one correctly-rounded division per block keeps the constant-score
        // case at exactly nPos/n and a perfect ranking at exactly 1
        ap += static_cast<double>(block_tp) * static_cast<double>(cum_tp) /
              (static_cast<double>(cum_rank) * static_cast<double>(total_pos));
        i = j;
    }
    return ap;
}

double hit_at_1pct(const std::vector<int>& labels, const std::vector<double>& scores) {
    check_label_inputs(labels, scores);
    const auto idx = ranking(scores);
    const std::size_t k = static_cast<std::size_t>(
        std::ceil(0.01 * static_cast<double>(labels.size())));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < k; ++i) hits += (labels[idx[i]] == 1);
    return static_cast<double>(hits) / static_cast<double>(k);
}

double recall_at_threshold(const std::vector<int>& labels, const std::vector<double>& probabilities,
                           double threshold) {
    if (labels.size() != probabilities.size())
        throw DimensionMismatch("recall_at_threshold: length mismatch");
    std::size_t positives = 0, recovered = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!(probabilities[i] >= 0.0 && probabilities[i] <= 1.0))
            throw Error("recall_at_threshold: probabilities must lie in [0, 1]");
        if (labels[i] == 1) {
            ++positives;
            if (probabilities[i] > threshold) ++recovered;
        }
    }
    if (positives == 0)
        throw DegenerateLabels("recall_at_threshold: need at least one positive");
    return static_cast<double>(recovered) / static_cast<double>(positives);
}

std::vector<std::pair<double, double>> pr_curve(const std::vector<int>& labels,
                                                const std::vector<double>& scores) {
    check_label_inputs(labels, scores);
    const auto idx = ranking(scores);
    const std::size_t n = idx.size();
    std::size_t total_pos = 0;
    for (int l : labels) total_pos += (l == 1);

    std::vector<std::pair<double, double>> curve;
    curve.push_back({0.0, 1.0});
    std::size_t cum_rank = 0, cum_tp = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]]) {
            cum_tp += (labels[idx[j]] == 1);
            ++j;
        }
        cum_rank += j - i;
        curve.push_back({static_cast<double>(cum_tp) / static_cast<double>(total_pos),
                         static_cast<double>(cum_tp) / static_cast<double>(cum_rank)});
        i = j;
    }
    return curve;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && x[idx[j]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j - 1) + 1.0; // ranks start at 1
        for (std::size_t t = i; t < j; ++t) ranks[idx[t]] = avg;
        i = j;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw DimensionMismatch("spearman: length mismatch");
    if (x.size() < 3) throw DegenerateInput("spearman: need at least 3 points");
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);

    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DegenerateInput("spearman: constant input");
    return sxy / std::sqrt(sxx * syy);
}

std::vector<std::pair<std::size_t, double>> tf_imbalance(const LabeledEdges& train) {
    std::map<std::size_t, std::pair<std::size_t, std::size_t>> counts; // tf -> (pos, total)
    for (const Edge& e : train.edges) {
        auto& c = counts[e.tf];
        c.first += (e.label == 1);
        ++c.second;
    }
    std::vector<std::pair<std::size_t, double>> out;
    for (const auto& [tf, c] : counts)
        out.push_back({tf, static_cast<double>(c.first) / static_cast<double>(c.second)});
    return out;
}

double bias_analysis(const OneHotLrModel& lr, const LabeledEdges& train) {
    const auto imbalance = tf_imbalance(train);
    if (imbalance.size() < 3)
        throw DegenerateInput("bias_analysis: need at least 3 TFs with edges");
    std::vector<double> coef, rate;
    for (const auto& [tf, r] : imbalance) {
        coef.push_back(lr.tf_coef.at(tf));
        rate.push_back(r);
    }
    return spearman(coef, rate);
}

void extract_scores(const LabeledEdges& edges, const Matrix& score_matrix,
                    std::vector<int>& labels, std::vector<double>& scores) {
    labels.clear();
    scores.clear();
    labels.reserve(edges.size());
    scores.reserve(edges.size());
    for (const Edge& e : edges.edges) {
        labels.push_back(e.label);
        scores.push_back(score_matrix(e.tf, e.tg));
    }
}

HyperChoice cross_validate(Variant variant, const HyperGrid& grid, const LabeledEdges& train,
                           const PriorConfig& base_prior, const FoldScorer& scorer,
                           std::size_t folds, std::uint64_t seed,
                           std::vector<std::string>* warnings) {
    if (grid.sigma_w.empty()) throw Error("cross_validate: empty sigma_w grid");
    const std::vector<double> sigma_l_grid =
        variant == Variant::InfoSemBC ? grid.sigma_l : std::vector<double>{base_prior.sigma_l};
    if (sigma_l_grid.empty()) throw Error("cross_validate: empty sigma_l grid");
    if (folds < 2) throw Error("cross_validate: need at least 2 folds");
    if (train.edges.size() < folds) throw Error("cross_validate: fewer edges than folds");

    // one shared fold assignment for every grid point
    Rng rng(seed);
    std::vector<std::size_t> order(train.edges.size());
    std::iota(order.begin(), order.end(), 0);
    order = shuffled(order, rng);

    HyperChoice best;
    bool first = true;
    for (double sw : grid.sigma_w) {
        for (double sl : sigma_l_grid) {
            PriorConfig prior = base_prior;
            prior.sigma_w = sw;
            prior.sigma_l = sl;

            double sum_auprc = 0.0;
            std::size_t valid_folds = 0;
            for (std::size_t f = 0; f < folds; ++f) {
                const std::size_t lo = f * train.edges.size() / folds;
                const std::size_t hi = (f + 1) * train.edges.size() / folds;
                LabeledEdges fold_train, fold_valid;
                fold_train.symbols = train.symbols;
                fold_valid.symbols = train.symbols;
                for (std::size_t i = 0; i < order.size(); ++i)
                    ((i >= lo && i < hi) ? fold_valid : fold_train)
                        .edges.push_back(train.edges[order[i]]);

                std::vector<int> labels;
                std::vector<double> scores;
                const Matrix score_matrix = scorer(prior, fold_train);
                extract_scores(fold_valid, score_matrix, labels, scores);
                try {
                    sum_auprc += auprc(labels, scores);
                    ++valid_folds;
                } catch (const DegenerateLabels&) {
                    if (warnings)
                        warnings->push_back("fold " + std::to_string(f) +
                                            " holds a single class; skipped");
                }
            }
            if (valid_folds == 0) continue;
            const double mean_auprc = sum_auprc / static_cast<double>(valid_folds);
            if (first || mean_auprc > best.mean_auprc) {
                best.sigma_w = sw;
                best.sigma_l = sl;
                best.mean_auprc = mean_auprc;
                first = false;
            }
        }
    }
    if (first) throw DegenerateLabels("cross_validate: every fold was degenerate");
    return best;
}

std::string bench_model_name(BenchModel m) {
    switch (m) {
    case BenchModel::Random: return "random";
    case BenchModel::OneHotLr: return "onehot_lr";
    case BenchModel::MatComp: return "matcomp";
    case BenchModel::DeepSem: return "deepsem";
    case BenchModel::InfoSemB: return "infosem-b";
    case BenchModel::InfoSemBC: return "infosem-bc";
    }
    return "random";
}

BenchModel bench_model_from_name(const std::string& name) {
    if (name == "random") return BenchModel::Random;
    if (name == "onehot_lr") return BenchModel::OneHotLr;
    if (name == "matcomp") return BenchModel::MatComp;
    if (name == "deepsem") return BenchModel::DeepSem;
    if (name == "infosem-b") return BenchModel::InfoSemB;
    if (name == "infosem-bc") return BenchModel::InfoSemBC;
    throw Error("unknown benchmark model '" + name + "'");
}

namespace {

struct RepeatResult {
    std::vector<MetricRow> rows;
    std::vector<std::string> failures;
};

bool probability_scorer(BenchModel m, BcScoreMode bc_mode) {
    return m == BenchModel::OneHotLr || m == BenchModel::MatComp ||
           (m == BenchModel::InfoSemBC && bc_mode == BcScoreMode::SigmoidLogits);
}

RepeatResult run_one_repeat(const ExpressionMatrix& x, const LabeledEdges& labels,
                            const EmbeddingMatrix* embeddings,
                            const std::vector<BenchModel>& models, const BenchmarkConfig& cfg,
                            std::size_t repeat) {
    RepeatResult result;
    const Rng base = Rng(cfg.master_seed).derive(repeat);
    const std::uint64_t split_seed = Rng(cfg.master_seed).derive(repeat).next_u64();

    BenchmarkSplit split = make_split(labels, split_seed);
    LabeledEdges train_edges = split.train;
    if (cfg.downsample) {
        Rng ds = base;
        train_edges = downsample_negatives(train_edges, ds.derive(1).next_u64());
    }

    const std::size_t p = x.gene_count();
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
        const BenchModel model = models[mi];
        const std::string name = bench_model_name(model);
        try {
            // score both test sets
            Matrix score_matrix;
            bool per_edge_random = false;
            switch (model) {
            case BenchModel::Random:
                per_edge_random = true;
                break;
            case BenchModel::OneHotLr: {
                const OneHotLrModel lr = onehot_lr_train(train_edges, p, cfg.lr_lambda,
                                                         cfg.lr_step, cfg.lr_iters, 0);
                score_matrix = Matrix(p, p);
                for (std::size_t i = 0; i < p; ++i)
                    for (std::size_t k = 0; k < p; ++k)
                        score_matrix(i, k) = onehot_lr_predict(lr, i, k);
                break;
            }
            case BenchModel::MatComp: {
                const std::size_t rank =
                    cfg.mc_rank ? cfg.mc_rank
                                : std::max<std::size_t>(1, std::min<std::size_t>(16, p / 4));
                const MatCompModel mc =
                    matcomp_fit(train_edges, p, rank, cfg.mc_lambda, cfg.mc_sweeps,
                                Rng(cfg.master_seed).derive(repeat * 131 + mi).next_u64());
                score_matrix = Matrix(p, p);
                for (std::size_t i = 0; i < p; ++i)
                    for (std::size_t k = 0; k < p; ++k)
                        score_matrix(i, k) =
                            std::clamp(matcomp_predict(mc, i, k), 0.0, 1.0);
                break;
            }
            case BenchModel::DeepSem:
            case BenchModel::InfoSemB:
            case BenchModel::InfoSemBC: {
                const Variant variant = model == BenchModel::DeepSem  ? Variant::DeepSem
                                        : model == BenchModel::InfoSemB ? Variant::InfoSemB
                                                                        : Variant::InfoSemBC;
                if (variant != Variant::DeepSem && embeddings == nullptr)
                    throw MissingInput(name + " requires gene embeddings");
                Rng init_rng = Rng(cfg.master_seed).derive(repeat * 977 + mi);
                ModelState init =
                    init_state(variant, p, x.cell_count(),
                               variant == Variant::DeepSem ? 0 : embeddings->dim(), cfg.prior,
                               init_rng, cfg.enc_hidden, cfg.dec_hidden);
                if (variant != Variant::DeepSem) init.embeddings = embeddings->values;
                init.gene_symbols = x.gene_symbols;
                init.tf_flags = x.tf_flags;
                TrainConfig tc = cfg.train;
                tc.seed = Rng(cfg.master_seed).derive(repeat * 499 + mi).next_u64();
                tc.batch_size = std::min(tc.batch_size, x.cell_count());
                auto [trained, trace] =
                    train(init, x, variant == Variant::InfoSemBC ? &train_edges : nullptr, tc);
                score_matrix = edge_scores(trained, cfg.bc_score);
                break;
            }
            }

            const LabeledEdges* kinds[2] = {&split.seen_test, &split.unseen_test};
            const char* kind_names[2] = {"seen_test", "unseen_test"};
            for (int k = 0; k < 2; ++k) {
                std::vector<int> lab;
                std::vector<double> sc;
                if (per_edge_random) {
                    lab.reserve(kinds[k]->size());
                    for (const Edge& e : kinds[k]->edges) lab.push_back(e.label);
                    sc = random_scores(*kinds[k],
                                       Rng(cfg.master_seed)
                                           .derive(repeat * 31337 + mi * 17 + static_cast<std::size_t>(k))
                                           .next_u64());
                } else {
                    extract_scores(*kinds[k], score_matrix, lab, sc);
                }
                MetricRow row;
                row.model = name;
                row.split_kind = kind_names[k];
                row.seed = repeat;
                row.metric = "auprc";
                row.value = auprc(lab, sc);
                result.rows.push_back(row);
                row.metric = "hit_at_1pct";
                row.value = hit_at_1pct(lab, sc);
                result.rows.push_back(row);
                if (probability_scorer(model, cfg.bc_score) && !per_edge_random) {
                    row.metric = "recall_at_0_5";
                    row.value = recall_at_threshold(lab, sc, 0.5);
                    result.rows.push_back(row);
                }
            }
        } catch (const std::exception& e) {
            result.failures.push_back(name + " seed=" + std::to_string(repeat) + ": " + e.what());
        }
    }
    return result;
}

} // namespace

MetricsReport run_benchmark(const ExpressionMatrix& x, const LabeledEdges& labels,
                            const EmbeddingMatrix* embeddings,
                            const std::vector<BenchModel>& models, const BenchmarkConfig& cfg,
                            const std::string& dataset_id, const std::string& config_echo) {
    if (cfg.repeats < 1) throw Error("run_benchmark: need at least one repeat");

    std::vector<RepeatResult> results(cfg.repeats);
    const std::size_t jobs = std::max<std::size_t>(1, cfg.jobs);
    if (jobs == 1) {
        for (std::size_t r = 0; r < cfg.repeats; ++r)
            results[r] = run_one_repeat(x, labels, embeddings, models, cfg, r);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        std::mutex mu;
        for (std::size_t t = 0; t < std::min(jobs, cfg.repeats); ++t)
            pool.emplace_back([&]() {
                while (true) {
                    std::size_t r;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= cfg.repeats) return;
                        r = next++;
                    }
                    results[r] = run_one_repeat(x, labels, embeddings, models, cfg, r);
                }
            });
        for (auto& th : pool) th.join();
    }

    MetricsReport report;
    report.dataset_id = dataset_id;
    report.config_echo = config_echo;
    for (const RepeatResult& r : results) {
        report.rows.insert(report.rows.end(), r.rows.begin(), r.rows.end());
        report.failures.insert(report.failures.end(), r.failures.begin(), r.failures.end());
    }
    report.aggregates = aggregate_rows(report.rows);
    return report;
}

} // namespace infosem
