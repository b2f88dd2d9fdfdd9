#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "claimcast/tensor.hpp"

namespace claimcast::ad {

/// Handle to a node on a Tape.
struct Var {
    std::int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

/// Reverse-mode autodiff tape over dense 2-D tensors.
///
/// Nodes are appended in topological order as expressions are built, so a
/// single reverse sweep over creation order visits parents after children.
/// backward() computes one full gradient pass in scratch storage and then
/// adds it into each node's persistent adjoint, so calling backward() twice
/// on the same graph without zero_adjoints() yields exactly doubled adjoints.
///
/// A tape is single-threaded; independent tapes may live on separate threads.
class Tape {
public:
    /// Trainable leaf: participates in gradients.
    Var leaf(Tensor value);
    /// Constant leaf: never receives gradients.
    Var constant(Tensor value);
    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    const Tensor& value(Var v) const { return nodes_[v.idx].value; }
    /// Persistent adjoint accumulator (zeros if backward never reached it).
    const Tensor& adjoint(Var v);
    void zero_adjoints();

    /// Accumulates d(root)/d(node) into every reachable node's adjoint.
    /// root must be scalar-valued.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

    // --- primitive ops ------------------------------------------------
    // add/sub/mul/div broadcast scalar-vs-tensor (either side) or require
    // equal shapes; anything else is a shape error.
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var neg(Var x);
    Var exp(Var x);
    Var log(Var x); // throws NumericError on non-positive entries
    Var tanh(Var x);
    Var sigmoid(Var x);
    Var softplus(Var x);
    Var logaddexp(Var a, Var b); // elementwise, equal shapes
    Var add_scalar(Var x, double c);
    Var scale(Var x, double c);
    Var sum(Var x); // reduce all elements to a 1x1 scalar
    Var concat_cols(std::span<const Var> parts);
    Var slice_cols(Var x, std::size_t first, std::size_t count);
    /// Gathers rows of `table` by index; backward scatter-adds. Embedding lookup.
    Var take_rows(Var table, const std::vector<std::size_t>& rows);

private:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad,
                                          std::vector<Tensor>& scratch)>;

    struct Node {
        Tensor value;
        Tensor adjoint; // allocated lazily, kept same shape as value
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;

    Var push(Tensor value, bool requires_grad, BackwardFn backward);
    bool needs_grad(Var v) const { return nodes_[v.idx].requires_grad; }
    Tensor& grad_slot(std::vector<Tensor>& scratch, std::int32_t idx);

    static void check_valid(Var v, const char* op);
};

// --- gradient checking -------------------------------------------------

struct ParamRef {
    std::string name;
    Tensor* tensor = nullptr;
};

struct GradCheckRow {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double abs_diff = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckRow> rows;
    double max_rel_err = 0.0;
    std::size_t worst_row = 0;
    double tolerance = 0.0;
    std::size_t failures = 0; // rows with rel_err > tolerance

    bool passed() const { return failures == 0; }
};

/// Compares analytic gradients against central finite differences.
///
/// `value_fn` re-evaluates the scalar objective from the current parameter
/// tensors; `grad_fn` returns analytic gradients (one tensor per parameter,
/// same order). Parameters are perturbed in place and restored. The relative
/// error denominator is floored at 1e-6 so exact-zero gradients report 0.
GradCheckReport grad_check(const std::function<double()>& value_fn,
                           const std::function<std::vector<Tensor>()>& grad_fn,
                           std::span<const ParamRef> params,
                           double step, double tolerance);

} // namespace claimcast::ad
