#include "infosem/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace infosem::ad {

namespace {

double sigmoid_of(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_of(double x) {
    // log(1 + e^x) without overflow
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

} // namespace

const Tape::Node& Tape::node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw UnregisteredPrimitive("tape: var does not belong to this tape");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    lu_of_node_.push_back(-1);
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::input(Matrix value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::constant(Matrix value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    Node n;
    n.op = Op::Add;
    n.a = a.id; n.b = b.id;
    n.value = infosem::add(node(a).value, node(b).value);
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    Node n;
    n.op = Op::Sub;
    n.a = a.id; n.b = b.id;
    n.value = infosem::sub(node(a).value, node(b).value);
    return push(std::move(n));
}

Var Tape::neg(Var a) {
    Node n;
    n.op = Op::Neg;
    n.a = a.id;
    n.value = infosem::scale(node(a).value, -1.0);
    return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
    Node n;
    n.op = Op::Hadamard;
    n.a = a.id; n.b = b.id;
    n.value = infosem::hadamard(node(a).value, node(b).value);
    return push(std::move(n));
}

Var Tape::div(Var a, Var b) {
    Node n;
    n.op = Op::Div;
    n.a = a.id; n.b = b.id;
    const Matrix& x = node(a).value;
    const Matrix& y = node(b).value;
    if (!x.same_shape(y)) throw DimensionMismatch("div: shapes do not match");
    Matrix out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] /= y.data()[i];
    n.value = std::move(out);
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.op = Op::MatMul;
    n.a = a.id; n.b = b.id;
    n.value = infosem::matmul(node(a).value, node(b).value);
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    Node n;
    n.op = Op::Transpose;
    n.a = a.id;
    n.value = infosem::transpose(node(a).value);
    return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.c = c;
    n.value = infosem::scale(node(a).value, c);
    return push(std::move(n));
}

Var Tape::add_scalar(Var a, double c) {
    Node n;
    n.op = Op::AddScalar;
    n.a = a.id;
    n.c = c;
    Matrix out = node(a).value;
    for (double& v : out.data()) v += c;
    n.value = std::move(out);
    return push(std::move(n));
}

Var Tape::broadcast_mul(Var scalar, Var a) {
    if (node(scalar).value.size() != 1)
        throw DimensionMismatch("broadcast_mul: first argument must be 1x1");
    Node n;
    n.op = Op::BroadcastMul;
    n.a = scalar.id; n.b = a.id;
    n.value = infosem::scale(node(a).value, node(scalar).value.data()[0]);
    return push(std::move(n));
}

Var Tape::broadcast_add(Var scalar, Var a) {
    if (node(scalar).value.size() != 1)
        throw DimensionMismatch("broadcast_add: first argument must be 1x1");
    Node n;
    n.op = Op::BroadcastAdd;
    n.a = scalar.id; n.b = a.id;
    Matrix out = node(a).value;
    const double s = node(scalar).value.data()[0];
    for (double& v : out.data()) v += s;
    n.value = std::move(out);
    return push(std::move(n));
}

namespace {

template <typename F>
Matrix map_entries(const Matrix& a, F f) {
    Matrix out = a;
    for (double& v : out.data()) v = f(v);
    return out;
}

} // namespace

Var Tape::tanh(Var a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a.id;
    n.value = map_entries(node(a).value, [](double x) { return std::tanh(x); });
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    Node n;
    n.op = Op::Sigmoid;
    n.a = a.id;
    n.value = map_entries(node(a).value, sigmoid_of);
    return push(std::move(n));
}

Var Tape::softplus(Var a) {
    Node n;
    n.op = Op::Softplus;
    n.a = a.id;
    n.value = map_entries(node(a).value, softplus_of);
    return push(std::move(n));
}

Var Tape::log(Var a) {
    Node n;
    n.op = Op::Log;
    n.a = a.id;
    n.value = map_entries(node(a).value, [](double x) { return std::log(x); });
    return push(std::move(n));
}

Var Tape::abs(Var a) {
    Node n;
    n.op = Op::Abs;
    n.a = a.id;
    n.value = map_entries(node(a).value, [](double x) { return std::fabs(x); });
    return push(std::move(n));
}

Var Tape::square(Var a) {
    Node n;
    n.op = Op::Square;
    n.a = a.id;
    n.value = map_entries(node(a).value, [](double x) { return x * x; });
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    Node n;
    n.op = Op::Sum;
    n.a = a.id;
    double s = 0.0;
    for (double v : node(a).value.data()) s += v;
    n.value = Matrix(1, 1, s);
    return push(std::move(n));
}

Var Tape::entry(Var a, std::size_t r, std::size_t c) {
    const Matrix& m = node(a).value;
    if (r >= m.rows() || c >= m.cols())
        throw IndexOutOfRange("entry: index outside matrix");
    Node n;
    n.op = Op::Entry;
    n.a = a.id;
    n.r = r; n.col = c;
    n.value = Matrix(1, 1, m(r, c));
    return push(std::move(n));
}

std::int32_t Tape::factorize(Var m) {
    auto& cached = lu_of_node_[static_cast<std::size_t>(m.id)];
    if (cached < 0) {
        lus_.push_back(lu_factor(node(m).value));
        cached = static_cast<std::int32_t>(lus_.size() - 1);
    }
    return cached;
}

Var Tape::solve(Var m, Var b) {
    const std::int32_t lu_index = factorize(m);
    Node n;
    n.op = Op::Solve;
    n.a = m.id; n.b = b.id;
    n.lu_index = lu_index;
    n.value = infosem::solve(lus_[static_cast<std::size_t>(lu_index)], node(b).value);
    return push(std::move(n));
}

Var Tape::log_abs_det(Var m) {
    const std::int32_t lu_index = factorize(m);
    Node n;
    n.op = Op::LogAbsDet;
    n.a = m.id;
    n.lu_index = lu_index;
    n.value = Matrix(1, 1, infosem::log_abs_det(lus_[static_cast<std::size_t>(lu_index)]));
    return push(std::move(n));
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar_value(Var v) const {
    const Matrix& m = node(v).value;
    if (m.size() != 1) throw DimensionMismatch("scalar_value: node is not 1x1");
    return m.data()[0];
}

std::vector<Matrix> Tape::gradients(Var output, const std::vector<Var>& wrt) {
    const Node& out = node(output);
    if (out.value.size() != 1)
        throw DimensionMismatch("gradients: output must be 1x1");
    for (const Node& n : nodes_)
        if (!n.value.all_finite())
            throw NonFiniteValue("gradients: forward pass produced a non-finite value");

    std::vector<Matrix> adj(nodes_.size());
    auto touch = [&](std::int32_t id) -> Matrix& {
        Matrix& m = adj[static_cast<std::size_t>(id)];
        if (m.size() == 0 && nodes_[static_cast<std::size_t>(id)].value.size() != 0)
            m = Matrix(nodes_[static_cast<std::size_t>(id)].value.rows(),
                       nodes_[static_cast<std::size_t>(id)].value.cols());
        return m;
    };
    auto accum = [&](std::int32_t id, const Matrix& g) {
        Matrix& m = touch(id);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] += g.data()[i];
    };

    touch(output.id).data()[0] = 1.0;

    for (std::int32_t id = output.id; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const Matrix& g = adj[static_cast<std::size_t>(id)];
        if (g.size() == 0) continue; // never reached from the output
        bool any = false;
        for (double v : g.data())
            if (v != 0.0) { any = true; break; }
        if (!any) continue;

        switch (n.op) {
        case Op::Leaf:
        case Op::Constant:
            break;
        case Op::Add:
            accum(n.a, g);
            accum(n.b, g);
            break;
        case Op::Sub:
            accum(n.a, g);
            accum(n.b, infosem::scale(g, -1.0));
            break;
        case Op::Neg:
            accum(n.a, infosem::scale(g, -1.0));
            break;
        case Op::Hadamard:
            accum(n.a, infosem::hadamard(g, nodes_[static_cast<std::size_t>(n.b)].value));
            accum(n.b, infosem::hadamard(g, nodes_[static_cast<std::size_t>(n.a)].value));
            break;
        case Op::Div: {
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
            const Matrix& y = nodes_[static_cast<std::size_t>(n.b)].value;
            Matrix ga = g, gb = g;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.data()[i] = g.data()[i] / y.data()[i];
                gb.data()[i] = -g.data()[i] * x.data()[i] / (y.data()[i] * y.data()[i]);
            }
            accum(n.a, ga);
            accum(n.b, gb);
            break;
        }
        case Op::MatMul:
            accum(n.a, infosem::matmul(g, infosem::transpose(nodes_[static_cast<std::size_t>(n.b)].value)));
            accum(n.b, infosem::matmul(infosem::transpose(nodes_[static_cast<std::size_t>(n.a)].value), g));
            break;
        case Op::Transpose:
            accum(n.a, infosem::transpose(g));
            break;
        case Op::Scale:
            accum(n.a, infosem::scale(g, n.c));
            break;
        case Op::AddScalar:
            accum(n.a, g);
            break;
        case Op::BroadcastMul: {
            const double s = nodes_[static_cast<std::size_t>(n.a)].value.data()[0];
            accum(n.b, infosem::scale(g, s));
            double dot = 0.0;
            const Matrix& a = nodes_[static_cast<std::size_t>(n.b)].value;
            for (std::size_t i = 0; i < g.size(); ++i) dot += g.data()[i] * a.data()[i];
            accum(n.a, Matrix(1, 1, dot));
            break;
        }
        case Op::BroadcastAdd: {
            accum(n.b, g);
            double s = 0.0;
            for (double v : g.data()) s += v;
            accum(n.a, Matrix(1, 1, s));
            break;
        }
        case Op::Tanh: {
            Matrix ga = g;
            const Matrix& y = n.value;
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
            accum(n.a, ga);
            break;
        }
        case Op::Sigmoid: {
            Matrix ga = g;
            const Matrix& y = n.value;
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga.data()[i] *= y.data()[i] * (1.0 - y.data()[i]);
            accum(n.a, ga);
            break;
        }
        case Op::Softplus: {
            Matrix ga = g;
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga.data()[i] *= sigmoid_of(x.data()[i]);
            accum(n.a, ga);
            break;
        }
        case Op::Log: {
            Matrix ga = g;
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga.data()[i] /= x.data()[i];
            accum(n.a, ga);
            break;
        }
        case Op::Abs: {
            Matrix ga = g;
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
            for (std::size_t i = 0; i < ga.size(); ++i) {
                const double s = x.data()[i] > 0.0 ? 1.0 : (x.data()[i] < 0.0 ? -1.0 : 0.0);
                ga.data()[i] *= s;
            }
            accum(n.a, ga);
            break;
        }
        case Op::Square: {
            Matrix ga = g;
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga.data()[i] *= 2.0 * x.data()[i];
            accum(n.a, ga);
            break;
        }
        case Op::Sum: {
            const Matrix& x = nodes_[static_cast<std::size_t>(n.a)].value;
            accum(n.a, Matrix(x.rows(), x.cols(), g.data()[0]));
            break;
        }
        case Op::Entry: {
            Matrix ga(nodes_[static_cast<std::size_t>(n.a)].value.rows(),
                      nodes_[static_cast<std::size_t>(n.a)].value.cols());
            ga(n.r, n.col) = g.data()[0];
            accum(n.a, ga);
            break;
        }
        case Op::Solve: {
            // y = m^{-1} b:  b_adj = m^{-T} g,  m_adj = -b_adj y^T
            const LuFactorization& f = lus_[static_cast<std::size_t>(n.lu_index)];
            Matrix b_adj = solve_transposed(f, g);
            accum(n.a, infosem::scale(infosem::matmul(b_adj, infosem::transpose(n.value)), -1.0));
            accum(n.b, b_adj);
            break;
        }
        case Op::LogAbsDet: {
            // d ln|det m| / dm = m^{-T}
            const LuFactorization& f = lus_[static_cast<std::size_t>(n.lu_index)];
            Matrix inv_t = solve_transposed(f, Matrix::identity(f.lu.rows()));
            accum(n.a, infosem::scale(inv_t, g.data()[0]));
            break;
        }
        }
    }

    std::vector<Matrix> result;
    result.reserve(wrt.size());
    for (Var v : wrt) {
        const Node& n = node(v);
        Matrix& m = adj[static_cast<std::size_t>(v.id)];
        if (m.size() == 0) m = Matrix(n.value.rows(), n.value.cols());
        result.push_back(m);
    }
    return result;
}

std::size_t ParamVector::add_segment(std::string name, std::size_t rows, std::size_t cols) {
    for (const Segment& s : segments_)
        if (s.name == name)
            throw Error("ParamVector: duplicate segment '" + name + "'");
    Segment s;
    s.name = std::move(name);
    s.rows = rows;
    s.cols = cols;
    s.offset = data_.size();
    segments_.push_back(s);
    data_.resize(data_.size() + rows * cols, 0.0);
    return segments_.size() - 1;
}

const ParamVector::Segment& ParamVector::segment(std::string_view name) const {
    for (const Segment& s : segments_)
        if (s.name == name) return s;
    throw Error("ParamVector: no segment named '" + std::string(name) + "'");
}

bool ParamVector::has_segment(std::string_view name) const {
    for (const Segment& s : segments_)
        if (s.name == name) return true;
    return false;
}

Matrix ParamVector::segment_matrix(std::string_view name) const {
    const Segment& s = segment(name);
    Matrix m(s.rows, s.cols);
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(s.offset),
              data_.begin() + static_cast<std::ptrdiff_t>(s.offset + s.rows * s.cols),
              m.data().begin());
    return m;
}

void ParamVector::set_segment(std::string_view name, const Matrix& m) {
    const Segment& s = segment(name);
    if (m.rows() != s.rows || m.cols() != s.cols)
        throw DimensionMismatch("set_segment: shape does not match segment '" + std::string(name) + "'");
    std::copy(m.data().begin(), m.data().end(),
              data_.begin() + static_cast<std::ptrdiff_t>(s.offset));
}

ParamVector ParamVector::zeros_like() const {
    ParamVector z = *this;
    std::fill(z.data_.begin(), z.data_.end(), 0.0);
    return z;
}

Var SegmentVars::operator[](std::string_view name) const {
    const auto& segs = layout_->segments();
    for (std::size_t i = 0; i < segs.size(); ++i)
        if (segs[i].name == name) return vars_[i];
    throw Error("SegmentVars: no segment named '" + std::string(name) + "'");
}

bool SegmentVars::has(std::string_view name) const {
    return layout_->has_segment(name);
}

namespace {

std::vector<Var> make_leaf_vars(Tape& tape, const ParamVector& at) {
    std::vector<Var> vars;
    vars.reserve(at.segments().size());
    for (const auto& s : at.segments())
        vars.push_back(tape.input(at.segment_matrix(s.name)));
    return vars;
}

} // namespace

double evaluate(const Objective& objective, const ParamVector& at) {
    Tape tape;
    SegmentVars vars(&at, make_leaf_vars(tape, at));
    const Var out = objective(tape, vars);
    return tape.scalar_value(out);
}

ParamVector gradient(const Objective& objective, const ParamVector& at) {
    Tape tape;
    std::vector<Var> leaves = make_leaf_vars(tape, at);
    SegmentVars vars(&at, leaves);
    const Var out = objective(tape, vars);
    if (tape.value(out).size() != 1)
        throw DimensionMismatch("gradient: objective did not return a scalar");
    std::vector<Matrix> grads = tape.gradients(out, leaves);

    ParamVector g = at.zeros_like();
    for (std::size_t i = 0; i < at.segments().size(); ++i)
        g.set_segment(at.segments()[i].name, grads[i]);
    return g;
}

GradCheckReport finite_diff_check(const Objective& objective, const ParamVector& at,
                                  double epsilon, double tol, std::uint64_t seed) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
        throw Error("finite_diff_check: epsilon must lie in [1e-7, 1e-3]");

    const ParamVector analytic = gradient(objective, at);

    // Choose coordinates: everything up to 500, else a seeded subset that
    // still covers every segment.
    std::vector<std::size_t> coords;
    const std::size_t total = at.size();
    if (total <= 500) {
        coords.resize(total);
        for (std::size_t i = 0; i < total; ++i) coords[i] = i;
    } else {
        Rng rng(seed);
        std::unordered_set<std::size_t> chosen;
        for (const auto& s : at.segments()) {
            const std::size_t len = s.rows * s.cols;
            if (len > 0) chosen.insert(s.offset + rng.uniform_index(len));
        }
        while (chosen.size() < 500) chosen.insert(rng.uniform_index(total));
        coords.assign(chosen.begin(), chosen.end());
        std::sort(coords.begin(), coords.end());
    }

    GradCheckReport report;
    report.coords = coords;
    ParamVector probe = at;
    for (std::size_t idx : coords) {
        const double saved = probe.data()[idx];
        probe.data()[idx] = saved + epsilon;
        const double fp = evaluate(objective, probe);
        probe.data()[idx] = saved - epsilon;
        const double fm = evaluate(objective, probe);
        probe.data()[idx] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NonFiniteValue("finite_diff_check: objective returned a non-finite value");

        const double numeric = (fp - fm) / (2.0 * epsilon);
        const double exact = analytic.data()[idx];
        const double denom = std::max({1.0, std::fabs(exact), std::fabs(numeric)});
        const double rel = std::fabs(exact - numeric) / denom;
        report.analytic.push_back(exact);
        report.numeric.push_back(numeric);
        report.rel_error.push_back(rel);
        report.max_rel_error = std::max(report.max_rel_error, rel);
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

} // namespace infosem::ad
