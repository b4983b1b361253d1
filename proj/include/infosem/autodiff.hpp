#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "infosem/numkit.hpp"

namespace infosem::ad {

// Handle into a Tape. Only valid for the tape that created it.
struct Var {
    std::int32_t id = -1;
};

// Reverse-mode tape over matrix-valued nodes. Objectives are built from the
// registered primitives below; gradients() runs one reverse sweep from a
// scalar (1x1) output. Each evaluation owns its tape, so distinct
// evaluations can run concurrently.
class Tape {
public:
    // differentiable leaf
    Var input(Matrix value);
    // non-differentiable leaf (data, masks, fixed noise)
    Var constant(Matrix value);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var neg(Var a);
    Var hadamard(Var a, Var b);
    Var div(Var a, Var b);
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var scale(Var a, double c);       // c is a plain constant
    Var add_scalar(Var a, double c);

    // broadcast a 1x1 var across a matrix
    Var broadcast_mul(Var scalar, Var a);
    Var broadcast_add(Var scalar, Var a);

    Var tanh(Var a);
    Var sigmoid(Var a);
    Var softplus(Var a);
    Var log(Var a);
    Var abs(Var a);     // subgradient 0 at the kink
    Var square(Var a);

    Var sum(Var a);                        // 1x1
    Var entry(Var a, std::size_t r, std::size_t c); // 1x1 view of one element

    // y = m^{-1} b via LU; the factorization is kept for the reverse sweep.
    Var solve(Var m, Var b);
    // ln|det m| as a 1x1 node, sharing m's factorization with solve().
    Var log_abs_det(Var m);

    const Matrix& value(Var v) const;
    double scalar_value(Var v) const;

    // Gradients of a scalar output with respect to the requested vars.
    // Throws NonFiniteValue if any node value is non-finite.
    std::vector<Matrix> gradients(Var output, const std::vector<Var>& wrt);

    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t {
        Leaf, Constant, Add, Sub, Neg, Hadamard, Div, MatMul, Transpose,
        Scale, AddScalar, BroadcastMul, BroadcastAdd,
        Tanh, Sigmoid, Softplus, Log, Abs, Square,
        Sum, Entry, Solve, LogAbsDet,
    };

    struct Node {
        Op op;
        std::int32_t a = -1, b = -1;
        Matrix value;
        double c = 0.0;               // scalar payload (Scale/AddScalar)
        std::size_t r = 0, col = 0;   // Entry payload
        std::int32_t lu_index = -1;   // Solve/LogAbsDet payload
    };

    const Node& node(Var v) const;
    Var push(Node n);
    std::int32_t factorize(Var m);

    std::vector<Node> nodes_;
    std::vector<LuFactorization> lus_;
    std::vector<std::int32_t> lu_of_node_; // node id of m -> index into lus_, -1 if none
};

// Flat parameter vector split into named matrix-shaped segments. The
// segment offsets partition [0, size()) in declaration order.
class ParamVector {
public:
    struct Segment {
        std::string name;
        std::size_t rows = 0, cols = 0, offset = 0;
    };

    std::size_t add_segment(std::string name, std::size_t rows, std::size_t cols);

    std::size_t size() const { return data_.size(); }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    const std::vector<Segment>& segments() const { return segments_; }

    const Segment& segment(std::string_view name) const;
    bool has_segment(std::string_view name) const;

    Matrix segment_matrix(std::string_view name) const;
    void set_segment(std::string_view name, const Matrix& m);

    // Zero-filled copy with the same layout.
    ParamVector zeros_like() const;

private:
    std::vector<Segment> segments_;
    std::vector<double> data_;
};

// Named access to the leaf vars created for each segment of a ParamVector.
class SegmentVars {
public:
    SegmentVars(const ParamVector* layout, std::vector<Var> vars)
        : layout_(layout), vars_(std::move(vars)) {}

    Var operator[](std::string_view name) const;
    bool has(std::string_view name) const;

private:
    const ParamVector* layout_;
    std::vector<Var> vars_;
};

// A differentiable scalar objective: builds its value on the given tape from
// the segment leaf vars and returns the 1x1 output var.
using Objective = std::function<Var(Tape&, const SegmentVars&)>;

double evaluate(const Objective& objective, const ParamVector& at);

// Exact reverse-mode gradient of the objective at `at`.
ParamVector gradient(const Objective& objective, const ParamVector& at);

// Central-difference verification report. Relative errors use
// max(1, |analytic|, |numeric|) as denominator.
struct GradCheckReport {
    std::vector<std::size_t> coords;   // checked coordinate indices
    std::vector<double> analytic;
    std::vector<double> numeric;
    std::vector<double> rel_error;
    double max_rel_error = 0.0;
    bool passed = false;
};

// Central differences per coordinate; above 500 coordinates a seeded random
// subset is checked instead, with at least one coordinate per segment.
GradCheckReport finite_diff_check(const Objective& objective, const ParamVector& at,
                                  double epsilon, double tol, std::uint64_t seed = 0);

} // namespace infosem::ad
