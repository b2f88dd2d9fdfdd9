#include "claimcast/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "claimcast/scalarfn.hpp"

namespace claimcast::ad {

namespace {

enum class Broadcast { equal, left_scalar, right_scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return Broadcast::equal;
    if (a.is_scalar()) return Broadcast::left_scalar;
    if (b.is_scalar()) return Broadcast::right_scalar;
    throw DataError(std::string(op) + ": shapes do not match and neither side is scalar");
}

} // namespace

void Tape::check_valid(Var v, const char* op) {
    if (!v.valid()) throw DataError(std::string(op) + ": invalid Var");
}

Var Tape::push(Tensor value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
    return push(std::move(value), true, nullptr);
}

Var Tape::constant(Tensor value) {
    return push(std::move(value), false, nullptr);
}

const Tensor& Tape::adjoint(Var v) {
    check_valid(v, "adjoint");
    Node& n = nodes_[v.idx];
    if (n.adjoint.empty()) n.adjoint = Tensor(n.value.rows(), n.value.cols(), 0.0);
    return n.adjoint;
}

void Tape::zero_adjoints() {
    for (Node& n : nodes_) n.adjoint = Tensor();
}

Tensor& Tape::grad_slot(std::vector<Tensor>& scratch, std::int32_t idx) {
    Tensor& g = scratch[idx];
    if (g.empty()) g = Tensor(nodes_[idx].value.rows(), nodes_[idx].value.cols(), 0.0);
    return g;
}

void Tape::backward(Var root) {
    check_valid(root, "backward");
    if (!nodes_[root.idx].value.is_scalar())
        throw DataError("backward: root must be scalar-valued");

    // Fresh pass in scratch, then fold into the persistent adjoints. This is
    // what makes repeated backward() calls accumulate whole gradients.
    std::vector<Tensor> scratch(nodes_.size());
    scratch[root.idx] = Tensor::scalar(1.0);

    for (std::int32_t i = root.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (scratch[i].empty()) continue;
        if (n.backward) n.backward(*this, scratch[i], scratch);
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (scratch[i].empty()) continue;
        Node& n = nodes_[i];
        if (!n.requires_grad) continue;
        if (n.adjoint.empty()) n.adjoint = Tensor(n.value.rows(), n.value.cols(), 0.0);
        for (std::size_t k = 0; k < n.adjoint.size(); ++k) n.adjoint[k] += scratch[i][k];
    }
}

Var Tape::matmul(Var a, Var b) {
    check_valid(a, "matmul");
    check_valid(b, "matmul");
    const Tensor& av = nodes_[a.idx].value;
    const Tensor& bv = nodes_[b.idx].value;
    if (av.cols() != bv.rows()) throw DataError("matmul: inner dimensions disagree");

    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out(m, n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av.at(i, p);
            if (x == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) += x * bv.at(p, j);
        }

    const bool rg = needs_grad(a) || needs_grad(b);
    const std::int32_t ai = a.idx, bi = b.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [ai, bi, m, k, n](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            const Tensor& av2 = t.nodes_[ai].value;
            const Tensor& bv2 = t.nodes_[bi].value;
            if (t.needs_grad(Var{ai})) {
                Tensor& ga = t.grad_slot(scratch, ai); // g . B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double gij = g.at(i, j);
                        if (gij == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p)
                            ga.at(i, p) += gij * bv2.at(p, j);
                    }
            }
            if (t.needs_grad(Var{bi})) {
                Tensor& gb = t.grad_slot(scratch, bi); // A^T . g
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double x = av2.at(i, p);
                        if (x == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j)
                            gb.at(p, j) += x * g.at(i, j);
                    }
            }
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::add(Var a, Var b) {
    check_valid(a, "add");
    check_valid(b, "add");
    const Tensor& av = nodes_[a.idx].value;
    const Tensor& bv = nodes_[b.idx].value;
    const Broadcast bc = broadcast_kind(av, bv, "add");

    Tensor out = bc == Broadcast::left_scalar ? bv : av;
    if (bc == Broadcast::equal) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    } else if (bc == Broadcast::left_scalar) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] + bv[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[0];
    }

    const bool rg = needs_grad(a) || needs_grad(b);
    const std::int32_t ai = a.idx, bi = b.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [ai, bi](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            for (std::int32_t side : {ai, bi}) {
                if (!t.needs_grad(Var{side})) continue;
                Tensor& gs = t.grad_slot(scratch, side);
                if (gs.size() == g.size()) {
                    for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
                } else { // scalar side receives the total
                    for (std::size_t i = 0; i < g.size(); ++i) gs[0] += g[i];
                }
            }
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::sub(Var a, Var b) {
    check_valid(a, "sub");
    check_valid(b, "sub");
    const Tensor& av = nodes_[a.idx].value;
    const Tensor& bv = nodes_[b.idx].value;
    const Broadcast bc = broadcast_kind(av, bv, "sub");

    Tensor out = bc == Broadcast::left_scalar ? bv : av;
    if (bc == Broadcast::equal) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    } else if (bc == Broadcast::left_scalar) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] - bv[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[0];
    }

    const bool rg = needs_grad(a) || needs_grad(b);
    const std::int32_t ai = a.idx, bi = b.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [ai, bi](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            if (t.needs_grad(Var{ai})) {
                Tensor& ga = t.grad_slot(scratch, ai);
                if (ga.size() == g.size()) {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[0] += g[i];
                }
            }
            if (t.needs_grad(Var{bi})) {
                Tensor& gb = t.grad_slot(scratch, bi);
                if (gb.size() == g.size()) {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[0] -= g[i];
                }
            }
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::mul(Var a, Var b) {
    check_valid(a, "mul");
    check_valid(b, "mul");
    const Tensor& av = nodes_[a.idx].value;
    const Tensor& bv = nodes_[b.idx].value;
    const Broadcast bc = broadcast_kind(av, bv, "mul");

    Tensor out = bc == Broadcast::left_scalar ? bv : av;
    if (bc == Broadcast::equal) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    } else if (bc == Broadcast::left_scalar) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] * bv[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[0];
    }

    const bool rg = needs_grad(a) || needs_grad(b);
    const std::int32_t ai = a.idx, bi = b.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [ai, bi](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            const Tensor& av2 = t.nodes_[ai].value;
            const Tensor& bv2 = t.nodes_[bi].value;
            if (t.needs_grad(Var{ai})) {
                Tensor& ga = t.grad_slot(scratch, ai);
                if (av2.size() == g.size()) {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga[i] += g[i] * (bv2.is_scalar() ? bv2[0] : bv2[i]);
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[0] += g[i] * bv2[i];
                }
            }
            if (t.needs_grad(Var{bi})) {
                Tensor& gb = t.grad_slot(scratch, bi);
                if (bv2.size() == g.size()) {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        gb[i] += g[i] * (av2.is_scalar() ? av2[0] : av2[i]);
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[0] += g[i] * av2[i];
                }
            }
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::div(Var a, Var b) {
    check_valid(a, "div");
    check_valid(b, "div");
    const Tensor& av = nodes_[a.idx].value;
    const Tensor& bv = nodes_[b.idx].value;
    const Broadcast bc = broadcast_kind(av, bv, "div");

    Tensor out = bc == Broadcast::left_scalar ? bv : av;
    if (bc == Broadcast::equal) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
    } else if (bc == Broadcast::left_scalar) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[0] / bv[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[0];
    }

    const bool rg = needs_grad(a) || needs_grad(b);
    const std::int32_t ai = a.idx, bi = b.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [ai, bi](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            const Tensor& av2 = t.nodes_[ai].value;
            const Tensor& bv2 = t.nodes_[bi].value;
            auto a_at = [&](std::size_t i) { return av2.is_scalar() ? av2[0] : av2[i]; };
            auto b_at = [&](std::size_t i) { return bv2.is_scalar() ? bv2[0] : bv2[i]; };
            if (t.needs_grad(Var{ai})) {
                Tensor& ga = t.grad_slot(scratch, ai);
                if (av2.size() == g.size()) {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / b_at(i);
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[0] += g[i] / b_at(i);
                }
            }
            if (t.needs_grad(Var{bi})) {
                Tensor& gb = t.grad_slot(scratch, bi);
                if (bv2.size() == g.size()) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const double b2 = b_at(i);
                        gb[i] -= g[i] * a_at(i) / (b2 * b2);
                    }
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        const double b2 = bv2[0];
                        gb[0] -= g[i] * a_at(i) / (b2 * b2);
                    }
                }
            }
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::neg(Var x) {
    check_valid(x, "neg");
    const Tensor& xv = nodes_[x.idx].value;
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -out[i];
    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::exp(Var x) {
    check_valid(x, "exp");
    const Tensor& xv = nodes_[x.idx].value;
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    Tensor cached = out;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi, cached = std::move(cached)](Tape& t, const Tensor& g,
                                              std::vector<Tensor>& scratch) {
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * cached[i];
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::log(Var x) {
    check_valid(x, "log");
    const Tensor& xv = nodes_[x.idx].value;
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(out[i] > 0.0))
            throw NumericError("log: non-positive input " + std::to_string(out[i]));
        out[i] = std::log(out[i]);
    }
    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            const Tensor& xv2 = t.nodes_[xi].value;
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xv2[i];
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::tanh(Var x) {
    check_valid(x, "tanh");
    const Tensor& xv = nodes_[x.idx].value;
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    Tensor cached = out;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi, cached = std::move(cached)](Tape& t, const Tensor& g,
                                              std::vector<Tensor>& scratch) {
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i] * (1.0 - cached[i] * cached[i]);
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::sigmoid(Var x) {
    check_valid(x, "sigmoid");
    const Tensor& xv = nodes_[x.idx].value;
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(out[i]);
    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    Tensor cached = out;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi, cached = std::move(cached)](Tape& t, const Tensor& g,
                                              std::vector<Tensor>& scratch) {
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i] * cached[i] * (1.0 - cached[i]);
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::softplus(Var x) {
    check_valid(x, "softplus");
    const Tensor& xv = nodes_[x.idx].value;
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_softplus(out[i]);
    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            const Tensor& xv2 = t.nodes_[xi].value;
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i] * stable_sigmoid(xv2[i]);
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::logaddexp(Var a, Var b) {
    check_valid(a, "logaddexp");
    check_valid(b, "logaddexp");
    const Tensor& av = nodes_[a.idx].value;
    const Tensor& bv = nodes_[b.idx].value;
    if (!av.same_shape(bv)) throw DataError("logaddexp: shapes must match");

    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = av[i], y = bv[i];
        const double m = x > y ? x : y;
        if (m == -std::numeric_limits<double>::infinity()) {
            out[i] = m;
        } else {
            out[i] = m + std::log(std::exp(x - m) + std::exp(y - m));
        }
    }
    const bool rg = needs_grad(a) || needs_grad(b);
    const std::int32_t ai = a.idx, bi = b.idx;
    Tensor cached = out;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [ai, bi, cached = std::move(cached)](Tape& t, const Tensor& g,
                                                  std::vector<Tensor>& scratch) {
            const Tensor& av2 = t.nodes_[ai].value;
            const Tensor& bv2 = t.nodes_[bi].value;
            if (t.needs_grad(Var{ai})) {
                Tensor& ga = t.grad_slot(scratch, ai);
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * std::exp(av2[i] - cached[i]);
            }
            if (t.needs_grad(Var{bi})) {
                Tensor& gb = t.grad_slot(scratch, bi);
                for (std::size_t i = 0; i < g.size(); ++i)
                    gb[i] += g[i] * std::exp(bv2[i] - cached[i]);
            }
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::add_scalar(Var x, double c) {
    check_valid(x, "add_scalar");
    Tensor out = nodes_[x.idx].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::scale(Var x, double c) {
    check_valid(x, "scale");
    Tensor out = nodes_[x.idx].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi, c](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::sum(Var x) {
    check_valid(x, "sum");
    const Tensor& xv = nodes_[x.idx].value;
    Tensor out = Tensor::scalar(xv.sum());
    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DataError("concat_cols: no inputs");
    const std::size_t rows = nodes_[parts[0].idx].value.rows();
    std::size_t total = 0;
    for (Var p : parts) {
        check_valid(p, "concat_cols");
        const Tensor& v = nodes_[p.idx].value;
        if (v.rows() != rows) throw DataError("concat_cols: row counts differ");
        total += v.cols();
    }
    Tensor out(rows, total);
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& v = nodes_[p.idx].value;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < v.cols(); ++c) out.at(r, off + c) = v.at(r, c);
        off += v.cols();
    }

    bool rg = false;
    std::vector<std::int32_t> idxs;
    std::vector<std::size_t> widths;
    for (Var p : parts) {
        idxs.push_back(p.idx);
        widths.push_back(nodes_[p.idx].value.cols());
        rg = rg || needs_grad(p);
    }
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [idxs, widths, rows](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            std::size_t off2 = 0;
            for (std::size_t k = 0; k < idxs.size(); ++k) {
                if (t.needs_grad(Var{idxs[k]})) {
                    Tensor& gp = t.grad_slot(scratch, idxs[k]);
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < widths[k]; ++c)
                            gp.at(r, c) += g.at(r, off2 + c);
                }
                off2 += widths[k];
            }
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::slice_cols(Var x, std::size_t first, std::size_t count) {
    check_valid(x, "slice_cols");
    const Tensor& xv = nodes_[x.idx].value;
    if (first + count > xv.cols()) throw DataError("slice_cols: range out of bounds");
    Tensor out(xv.rows(), count);
    for (std::size_t r = 0; r < xv.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out.at(r, c) = xv.at(r, first + c);

    const bool rg = needs_grad(x);
    const std::int32_t xi = x.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [xi, first, count](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            Tensor& gx = t.grad_slot(scratch, xi);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < count; ++c) gx.at(r, first + c) += g.at(r, c);
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

Var Tape::take_rows(Var table, const std::vector<std::size_t>& rows) {
    check_valid(table, "take_rows");
    const Tensor& tv = nodes_[table.idx].value;
    Tensor out(rows.size(), tv.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= tv.rows()) throw DataError("take_rows: index out of range");
        for (std::size_t c = 0; c < tv.cols(); ++c) out.at(r, c) = tv.at(rows[r], c);
    }
    const bool rg = needs_grad(table);
    const std::int32_t ti = table.idx;
    BackwardFn bw = nullptr;
    if (rg) {
        bw = [ti, rows](Tape& t, const Tensor& g, std::vector<Tensor>& scratch) {
            Tensor& gt = t.grad_slot(scratch, ti);
            for (std::size_t r = 0; r < rows.size(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gt.at(rows[r], c) += g.at(r, c);
        };
    }
    return push(std::move(out), rg, std::move(bw));
}

GradCheckReport grad_check(const std::function<double()>& value_fn,
                           const std::function<std::vector<Tensor>()>& grad_fn,
                           std::span<const ParamRef> params,
                           double step, double tolerance) {
    if (!(step > 0.0)) throw DataError("grad_check: step must be positive");

    GradCheckReport report;
    report.tolerance = tolerance;
    const std::vector<Tensor> analytic = grad_fn();
    if (analytic.size() != params.size())
        throw DataError("grad_check: gradient count does not match parameters");

    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p].tensor;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + step;
            const double up = value_fn();
            t[i] = orig - step;
            const double down = value_fn();
            t[i] = orig;

            GradCheckRow row;
            row.name = params[p].name;
            row.index = i;
            row.analytic = analytic[p][i];
            row.numeric = (up - down) / (2.0 * step);
            row.abs_diff = std::abs(row.analytic - row.numeric);
            const double denom =
                std::max({std::abs(row.analytic), std::abs(row.numeric), 1e-6});
            row.rel_err = row.abs_diff == 0.0 ? 0.0 : row.abs_diff / denom;
            if (row.rel_err > report.max_rel_err) {
                report.max_rel_err = row.rel_err;
                report.worst_row = report.rows.size();
            }
            if (row.rel_err > tolerance) ++report.failures;
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

} // namespace claimcast::ad
