#include "infosem/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace infosem {

using nlohmann::json;

std::optional<std::size_t> ExpressionMatrix::gene_index(const std::string& symbol) const {
    for (std::size_t i = 0; i < gene_symbols.size(); ++i)
        if (gene_symbols[i] == symbol) return i;
    return std::nullopt;
}

std::size_t LabeledEdges::positive_count() const {
    std::size_t n = 0;
    for (const Edge& e : edges) n += (e.label == 1);
    return n;
}

double LabeledEdges::prevalence() const {
    if (edges.empty()) return 0.0;
    return static_cast<double>(positive_count()) / static_cast<double>(edges.size());
}

void LabeledEdges::validate() const {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const Edge& e : edges) {
        if (e.label != 0 && e.label != 1)
            throw InvalidLabel("edge label must be 0 or 1");
        if (!seen.insert({e.tf, e.tg}).second)
            throw DuplicateEdge("duplicate (tf, tg) pair at indices (" +
                                std::to_string(e.tf) + ", " + std::to_string(e.tg) + ")");
    }
}

void GenConfig::validate() const {
    if (p < 1 || n < 1) throw Error("generator: P and N must be >= 1");
    if (n_tfs < 1 || n_tfs > p) throw Error("generator: number of TFs must lie in [1, P]");
    if (edges_per_tf > p - 1) throw Error("generator: edges per TF must be <= P-1");
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error("generator: rho must lie in [0, 1]");
    if (!(noise_std > 0.0)) throw Error("generator: noise std must be > 0");
    if (d < 1) throw Error("generator: embedding dimension must be >= 1");
    if (effect_min > effect_max) throw Error("generator: empty effect magnitude range");
}

std::string GenConfig::echo_json() const {
    json j;
    j["p"] = p;
    j["n"] = n;
    j["n_tfs"] = n_tfs;
    j["edges_per_tf"] = edges_per_tf;
    j["d"] = d;
    j["rho"] = rho;
    j["noise_std"] = noise_std;
    j["effect_min"] = effect_min;
    j["effect_max"] = effect_max;
    j["seed"] = seed;
    return j.dump();
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            break;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

double parse_double(const std::string& field, std::size_t line_no, std::size_t col_no,
                    const std::string& what) {
    double v = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw ParseError("line " + std::to_string(line_no) + ", column " +
                         std::to_string(col_no) + ": cannot parse " + what +
                         " from '" + field + "'");
    return v;
}

} // namespace

ExpressionMatrix load_expression(const std::string& path) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw EmptyFile("expression file is empty: " + path);

    const std::vector<std::string> header = split(lines[0], ',');
    if (header.size() < 3 || header[0] != "gene" || header[1] != "is_tf")
        throw ParseError("line 1: expected header 'gene,is_tf,<cell ids...>'");

    ExpressionMatrix x;
    x.cell_ids.assign(header.begin() + 2, header.end());
    const std::size_t n = x.cell_ids.size();

    std::set<std::string> seen;
    std::vector<std::vector<double>> rows;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        const std::vector<std::string> f = split(lines[li], ',');
        if (f.size() != n + 2)
            throw ParseError("line " + std::to_string(li + 1) + ": expected " +
                             std::to_string(n + 2) + " fields, got " + std::to_string(f.size()));
        if (!seen.insert(f[0]).second)
            throw DuplicateGene("line " + std::to_string(li + 1) + ": duplicate gene '" + f[0] + "'");
        if (f[1] != "0" && f[1] != "1")
            throw ParseError("line " + std::to_string(li + 1) + ", column 2: is_tf must be 0 or 1");
        x.gene_symbols.push_back(f[0]);
        x.tf_flags.push_back(f[1] == "1");
        std::vector<double> row(n);
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = parse_double(f[j + 2], li + 1, j + 3,
                                  "value for cell '" + x.cell_ids[j] + "'");
            if (!std::isfinite(row[j]))
                throw ParseError("line " + std::to_string(li + 1) + ": non-finite value for cell '" +
                                 x.cell_ids[j] + "'");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw EmptyFile("expression file has no gene rows: " + path);

    x.values = Matrix(rows.size(), n);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) x.values(i, j) = rows[i][j];
    return x;
}

void write_expression(const ExpressionMatrix& x, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << "gene,is_tf";
    for (const std::string& c : x.cell_ids) out << ',' << c;
    out << '\n';
    for (std::size_t i = 0; i < x.gene_count(); ++i) {
        out << x.gene_symbols[i] << ',' << (x.tf_flags[i] ? '1' : '0');
        for (std::size_t j = 0; j < x.cell_count(); ++j)
            out << ',' << format_double(x.values(i, j));
        out << '\n';
    }
}

LabeledEdges load_labels(const std::string& path, const ExpressionMatrix& genes) {
    const std::vector<std::string> lines = read_lines(path);
    LabeledEdges edges;
    edges.symbols = genes.gene_symbols;

    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        const std::vector<std::string> f = split(lines[li], '\t');
        if (f.size() != 3)
            throw ParseError("line " + std::to_string(li + 1) +
                             ": expected 'tf<TAB>tg<TAB>label'");
        const auto tf = genes.gene_index(f[0]);
        if (!tf) throw UnknownGene("line " + std::to_string(li + 1) + ": unknown gene '" + f[0] + "'");
        const auto tg = genes.gene_index(f[1]);
        if (!tg) throw UnknownGene("line " + std::to_string(li + 1) + ": unknown gene '" + f[1] + "'");
        if (!genes.tf_flags[*tf])
            throw ParseError("line " + std::to_string(li + 1) + ": gene '" + f[0] +
                             "' is not flagged as a TF");
        if (f[2] != "0" && f[2] != "1")
            throw InvalidLabel("line " + std::to_string(li + 1) + ": label must be 0 or 1, got '" +
                               f[2] + "'");
        if (!seen.insert({*tf, *tg}).second)
            throw DuplicateEdge("line " + std::to_string(li + 1) + ": duplicate edge (" + f[0] +
                                ", " + f[1] + ")");
        edges.edges.push_back(Edge{*tf, *tg, f[2] == "1" ? 1 : 0});
    }
    return edges;
}

void write_labels(const LabeledEdges& edges, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    for (const Edge& e : edges.edges)
        out << edges.symbols.at(e.tf) << '\t' << edges.symbols.at(e.tg) << '\t' << e.label << '\n';
}

EmbeddingMatrix load_embeddings(const std::string& path, const ExpressionMatrix& genes,
                                std::optional<std::size_t> d_expected,
                                std::vector<std::string>* warnings) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw EmptyFile("embedding file is empty: " + path);

    const std::vector<std::string> header = split(lines[0], ',');
    if (header.size() < 2 || header[0] != "gene")
        throw ParseError("line 1: expected header 'gene,v1,...,vd'");
    const std::size_t d = header.size() - 1;
    if (d_expected && *d_expected != d)
        throw DimensionMismatch("embedding dimension " + std::to_string(d) +
                                " does not match expected " + std::to_string(*d_expected));

    std::map<std::string, std::vector<double>> by_symbol;
    std::size_t extra = 0;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        const std::vector<std::string> f = split(lines[li], ',');
        if (f.size() != d + 1)
            throw DimensionMismatch("line " + std::to_string(li + 1) + ": expected " +
                                    std::to_string(d + 1) + " fields, got " +
                                    std::to_string(f.size()));
        if (by_symbol.count(f[0]))
            throw DuplicateGene("line " + std::to_string(li + 1) + ": duplicate gene '" + f[0] + "'");
        std::vector<double> row(d);
        for (std::size_t j = 0; j < d; ++j)
            row[j] = parse_double(f[j + 1], li + 1, j + 2, "embedding value");
        if (!genes.gene_index(f[0])) {
            ++extra;
            continue;
        }
        by_symbol.emplace(f[0], std::move(row));
    }

    std::vector<std::string> missing;
    for (const std::string& s : genes.gene_symbols)
        if (!by_symbol.count(s)) missing.push_back(s);
    if (!missing.empty()) {
        std::string msg = "missing embeddings for:";
        for (const std::string& s : missing) msg += " " + s;
        throw MissingGeneEmbedding(msg);
    }
    if (extra > 0 && warnings)
        warnings->push_back("ignored " + std::to_string(extra) +
                            " embedding rows for genes outside the model");

    EmbeddingMatrix e;
    e.gene_symbols = genes.gene_symbols;
    e.values = Matrix(genes.gene_count(), d);
    for (std::size_t i = 0; i < genes.gene_count(); ++i) {
        const std::vector<double>& row = by_symbol.at(genes.gene_symbols[i]);
        for (std::size_t j = 0; j < d; ++j) e.values(i, j) = row[j];
    }
    return e;
}

void write_embeddings(const EmbeddingMatrix& e, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << "gene";
    for (std::size_t j = 0; j < e.dim(); ++j) out << ",v" << (j + 1);
    out << '\n';
    for (std::size_t i = 0; i < e.gene_symbols.size(); ++i) {
        out << e.gene_symbols[i];
        for (std::size_t j = 0; j < e.dim(); ++j) out << ',' << format_double(e.values(i, j));
        out << '\n';
    }
}

void write_adjacency(const Matrix& a, const std::vector<std::string>& symbols,
                     const std::string& path) {
    if (a.rows() != symbols.size() || a.cols() != symbols.size())
        throw DimensionMismatch("write_adjacency: symbol count does not match matrix");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << "gene";
    for (const std::string& s : symbols) out << ',' << s;
    out << '\n';
    for (std::size_t i = 0; i < a.rows(); ++i) {
        out << symbols[i];
        for (std::size_t j = 0; j < a.cols(); ++j) out << ',' << format_double(a(i, j));
        out << '\n';
    }
}

ExpressionMatrix preprocess(const ExpressionMatrix& x, bool log1p, bool zscore,
                            std::vector<std::string>* warnings) {
    ExpressionMatrix out = x;
    if (log1p) {
        for (double& v : out.values.data()) {
            if (v < 0.0)
                throw NegativeValueWithLog1p("preprocess: log1p requires nonnegative values");
            v = std::log1p(v);
        }
    }
    if (zscore) {
        const std::size_t n = out.cell_count();
        for (std::size_t i = 0; i < out.gene_count(); ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < n; ++j) mean += out.values(i, j);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double dv = out.values(i, j) - mean;
                var += dv * dv;
            }
            var /= static_cast<double>(n);
            if (var <= 0.0) {
                for (std::size_t j = 0; j < n; ++j) out.values(i, j) = 0.0;
                if (warnings)
                    warnings->push_back("gene '" + out.gene_symbols[i] +
                                        "' is constant; standardized row set to 0");
                continue;
            }
            const double inv_sd = 1.0 / std::sqrt(var);
            for (std::size_t j = 0; j < n; ++j)
                out.values(i, j) = (out.values(i, j) - mean) * inv_sd;
        }
    }
    return out;
}

double spectral_radius_estimate(const Matrix& a, std::size_t iters, std::uint64_t seed) {
    if (a.rows() != a.cols())
        throw DimensionMismatch("spectral_radius_estimate: matrix must be square");
    const std::size_t n = a.rows();
    if (n == 0) return 0.0;
    Rng rng(seed);
    Matrix v = standard_normal(rng, n, 1);
    double log_growth = 0.0;
    std::size_t steps = 0;
    for (std::size_t it = 0; it < iters; ++it) {
        Matrix w = matmul(a, v);
        const double norm = frobenius_norm(w);
        if (norm == 0.0) return 0.0; // nilpotent direction, radius 0
        log_growth += std::log(norm / frobenius_norm(v));
        ++steps;
        v = scale(w, 1.0 / norm);
    }
    // geometric mean of the per-step growth; robust to complex eigenpairs
    return std::exp(log_growth / static_cast<double>(steps));
}

SyntheticDataset generate_synthetic(const GenConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    const std::size_t p = cfg.p;
    const std::size_t d = cfg.d;

    // (1) embeddings and the hidden prior weights. The TF-side block of the
    // hidden weights is zero so the pair score depends on the target only;
    // per-source offsets would decouple the global pair ranking from the
    // per-TF target choice.
    Matrix h = standard_normal(rng, p, d);
    Matrix w_star(2 * d, 1);
    for (std::size_t q = 0; q < d; ++q) w_star(d + q, 0) = rng.normal();

    auto pair_score = [&](std::size_t i, std::size_t k) {
        double m = 0.0;
        for (std::size_t q = 0; q < d; ++q)
            m += h(i, q) * w_star(q, 0) + h(k, q) * w_star(d + q, 0);
        return m;
    };

    // (2) per TF, choose targets: aligned with the embedding score with
    // probability rho, uniform otherwise
    Matrix a(p, p);
    for (std::size_t i = 0; i < cfg.n_tfs; ++i) {
        std::vector<std::size_t> candidates;
        candidates.reserve(p - 1);
        for (std::size_t k = 0; k < p; ++k)
            if (k != i) candidates.push_back(k);

        std::vector<std::size_t> targets;
        const bool aligned = rng.uniform() < cfg.rho;
        if (aligned) {
            std::sort(candidates.begin(), candidates.end(), [&](std::size_t x, std::size_t y) {
                const double mx = pair_score(i, x), my = pair_score(i, y);
                if (mx != my) return mx > my;
                return x < y;
            });
            targets.assign(candidates.begin(),
                           candidates.begin() + static_cast<std::ptrdiff_t>(cfg.edges_per_tf));
        } else {
            for (std::size_t e = 0; e < cfg.edges_per_tf; ++e) {
                const std::size_t pick = e + rng.uniform_index(candidates.size() - e);
                std::swap(candidates[e], candidates[pick]);
                targets.push_back(candidates[e]);
            }
        }
        // (3) effect sizes, uniform in the configured range
        for (std::size_t k : targets)
            a(i, k) = cfg.effect_min + (cfg.effect_max - cfg.effect_min) * rng.uniform();
    }

    // (4) cap the spectral radius at 0.9 so I - A^T stays well conditioned
    const double radius = spectral_radius_estimate(a);
    if (radius > 0.9) a = scale(a, 0.9 / radius);

    // (5) X = (I - A^T)^{-1} Z
    Matrix z = scale(standard_normal(rng, p, cfg.n), cfg.noise_std);
    Matrix mixing = sub(Matrix::identity(p), transpose(a));
    Matrix x = solve(lu_factor(mixing), z);

    SyntheticDataset ds;
    ds.expression.values = std::move(x);
    for (std::size_t i = 0; i < p; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "G%03zu", i);
        ds.expression.gene_symbols.emplace_back(buf);
        ds.expression.tf_flags.push_back(i < cfg.n_tfs);
    }
    for (std::size_t j = 0; j < cfg.n; ++j) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "C%05zu", j);
        ds.expression.cell_ids.emplace_back(buf);
    }

    // (6) complete TF x TG label grid
    ds.labels.symbols = ds.expression.gene_symbols;
    for (std::size_t i = 0; i < cfg.n_tfs; ++i)
        for (std::size_t k = 0; k < p; ++k) {
            if (k == i) continue;
            ds.labels.edges.push_back(Edge{i, k, a(i, k) != 0.0 ? 1 : 0});
        }

    ds.true_adjacency = std::move(a);
    ds.embeddings.gene_symbols = ds.expression.gene_symbols;
    ds.embeddings.values = std::move(h);
    ds.hidden_weights = std::move(w_star);
    ds.config_echo = cfg.echo_json();
    return ds;
}

std::vector<MetricAggregate> aggregate_rows(const std::vector<MetricRow>& rows) {
    std::vector<MetricAggregate> out;
    std::vector<std::vector<double>> values;
    auto find = [&](const MetricRow& r) -> std::size_t {
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i].model == r.model && out[i].split_kind == r.split_kind &&
                out[i].metric == r.metric)
                return i;
        MetricAggregate a;
        a.model = r.model;
        a.split_kind = r.split_kind;
        a.metric = r.metric;
        out.push_back(a);
        values.emplace_back();
        return out.size() - 1;
    };
    for (const MetricRow& r : rows) values[find(r)].push_back(r.value);

    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::vector<double>& v = values[i];
        const std::size_t n = v.size();
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(n);
        out[i].mean = mean;
        out[i].count = n;
        if (n < 2) {
            out[i].sem = std::numeric_limits<double>::quiet_NaN();
        } else {
            double ss = 0.0;
            for (double x : v) ss += (x - mean) * (x - mean);
            out[i].sem = std::sqrt(ss / static_cast<double>(n - 1)) /
                         std::sqrt(static_cast<double>(n));
        }
    }
    return out;
}

namespace {

constexpr int kReportSchemaVersion = 1;

} // namespace

void write_report(const MetricsReport& report, const std::string& path) {
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["kind"] = "infosem_metrics_report";
    j["dataset_id"] = report.dataset_id;
    j["config_echo"] = report.config_echo;
    j["rows"] = json::array();
    for (const MetricRow& r : report.rows)
        j["rows"].push_back({{"model", r.model},
                             {"split_kind", r.split_kind},
                             {"seed", r.seed},
                             {"metric", r.metric},
                             {"value", r.value}});
    j["aggregates"] = json::array();
    for (const MetricAggregate& a : report.aggregates) {
        json ja = {{"model", a.model}, {"split_kind", a.split_kind}, {"metric", a.metric},
                   {"mean", a.mean},   {"count", a.count}};
        if (std::isnan(a.sem))
            ja["sem"] = nullptr;
        else
            ja["sem"] = a.sem;
        j["aggregates"].push_back(ja);
    }
    j["failures"] = report.failures;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << j.dump(2) << '\n';
}

MetricsReport read_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("report is not valid JSON: " + std::string(e.what()));
    }

    try {
        if (!j.contains("schema_version") || !j.contains("kind") || !j.contains("rows") ||
            !j.contains("aggregates") || !j.contains("dataset_id") ||
            !j.contains("config_echo") || !j.contains("failures"))
            throw SchemaVersionMismatch("report is missing required fields");
        if (j["schema_version"].get<int>() != kReportSchemaVersion ||
            j["kind"].get<std::string>() != "infosem_metrics_report")
            throw SchemaVersionMismatch("unsupported report schema");

        MetricsReport r;
        r.dataset_id = j["dataset_id"].get<std::string>();
        r.config_echo = j["config_echo"].get<std::string>();
        for (const json& jr : j["rows"]) {
            MetricRow row;
            row.model = jr.at("model").get<std::string>();
            row.split_kind = jr.at("split_kind").get<std::string>();
            row.seed = jr.at("seed").get<std::uint64_t>();
            row.metric = jr.at("metric").get<std::string>();
            row.value = jr.at("value").get<double>();
            r.rows.push_back(row);
        }
        for (const json& ja : j["aggregates"]) {
            MetricAggregate a;
            a.model = ja.at("model").get<std::string>();
            a.split_kind = ja.at("split_kind").get<std::string>();
            a.metric = ja.at("metric").get<std::string>();
            a.mean = ja.at("mean").get<double>();
            a.sem = ja.at("sem").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                           : ja.at("sem").get<double>();
            a.count = ja.at("count").get<std::size_t>();
            r.aggregates.push_back(a);
        }
        for (const json& jf : j["failures"]) r.failures.push_back(jf.get<std::string>());
        return r;
    } catch (const json::exception& e) {
        throw SchemaVersionMismatch("report does not match the expected schema: " +
                                    std::string(e.what()));
    }
}

void write_report_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write file: " + path);
    out << "model,split_kind,seed,metric,value\n";
    for (const MetricRow& r : report.rows)
        out << r.model << ',' << r.split_kind << ',' << r.seed << ',' << r.metric << ','
            << format_double(r.value) << '\n';
}

} // namespace infosem
