#include "ga/tape.hpp"

#include <algorithm>
#include <cmath>

#include "ga/errors.hpp"

namespace ga::num {

namespace {

void require_same(const Tensor2& a, const Tensor2& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
}

void add_into(Tensor2& acc, const Tensor2& g) {
    auto& d = acc.data();
    const auto& s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

Var Tape::push(Tensor2 v, bool needs_grad) {
    owned_.push_back(std::move(v));
    values_.push_back(&owned_.back());
    needs_grad_.push_back(needs_grad ? 1 : 0);
    return Var{static_cast<std::uint32_t>(values_.size() - 1)};
}

Var Tape::leaf(const Tensor2& value) {
    values_.push_back(&value);
    needs_grad_.push_back(1);
    return Var{static_cast<std::uint32_t>(values_.size() - 1)};
}

Var Tape::input(Tensor2 value) { return push(std::move(value), true); }

Var Tape::constant(Tensor2 value) { return push(std::move(value), false); }

double Tape::scalar(Var v) const {
    const auto& t = value(v);
    if (t.rows() != 1 || t.cols() != 1) throw ContractError("Tape::scalar: slot is " + t.shape_string());
    return t(0, 0);
}

Var Tape::record(Node n, Tensor2 v, std::initializer_list<Var> deps) {
    bool ng = false;
    for (Var d : deps) ng = ng || needs(d.id);
    Var out = push(std::move(v), ng);
    n.out = out.id;
    if (ng) nodes_.push_back(n);
    return out;
}

std::int32_t Tape::stash(Tensor2 t) {
    aux_.push_back(std::move(t));
    return static_cast<std::int32_t>(aux_.size() - 1);
}

Tensor2& Tape::grad_ref(std::uint32_t slot) {
    Tensor2& g = grads_[slot];
    if (g.empty() && !values_[slot]->empty()) g = Tensor2(values_[slot]->rows(), values_[slot]->cols());
    return g;
}

Tensor2 Tape::grad(Var v) const {
    if (v.id < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
    return Tensor2(value(v).rows(), value(v).cols());
}

void Tape::add_grad_to(Var v, Tensor2& acc) const {
    if (v.id >= grads_.size() || grads_[v.id].empty()) return;
    require_same(acc, grads_[v.id], "add_grad_to");
    add_into(acc, grads_[v.id]);
}

// ---------------------------------------------------------------------------
// forward ops

Var Tape::matmul(Var a, Var b) {
    Node n{Op::MatMul};
    n.a = a.id;
    n.b = b.id;
    return record(n, num::matmul(value(a), value(b)), {a, b});
}

Var Tape::matmul_nt(Var a, Var b) {
    Node n{Op::MatMulNT};
    n.a = a.id;
    n.b = b.id;
    return record(n, num::matmul_nt(value(a), value(b)), {a, b});
}

Var Tape::add(Var a, Var b) {
    require_same(value(a), value(b), "add");
    Tensor2 out = value(a);
    add_into(out, value(b));
    Node n{Op::Add};
    n.a = a.id;
    n.b = b.id;
    return record(n, std::move(out), {a, b});
}

Var Tape::sub(Var a, Var b) {
    require_same(value(a), value(b), "sub");
    Tensor2 out = value(a);
    auto& d = out.data();
    const auto& s = value(b).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= s[i];
    Node n{Op::Sub};
    n.a = a.id;
    n.b = b.id;
    return record(n, std::move(out), {a, b});
}

Var Tape::add_row(Var a, Var row) {
    const auto& av = value(a);
    const auto& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != av.cols())
        throw ShapeError("add_row: " + av.shape_string() + " with row " + rv.shape_string());
    Tensor2 out = av;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv(0, j);
    }
    Node n{Op::AddRow};
    n.a = a.id;
    n.b = row.id;
    return record(n, std::move(out), {a, row});
}

Var Tape::mul(Var a, Var b) {
    require_same(value(a), value(b), "mul");
    Tensor2 out = value(a);
    auto& d = out.data();
    const auto& s = value(b).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= s[i];
    Node n{Op::Mul};
    n.a = a.id;
    n.b = b.id;
    return record(n, std::move(out), {a, b});
}

Var Tape::scale(Var a, double s) {
    Tensor2 out = value(a);
    for (double& x : out.data()) x *= s;
    Node n{Op::Scale};
    n.a = a.id;
    n.s = s;
    return record(n, std::move(out), {a});
}

Var Tape::relu(Var a) {
    Tensor2 out = value(a);
    for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
    Node n{Op::Relu};
    n.a = a.id;
    return record(n, std::move(out), {a});
}

Var Tape::softplus(Var a) {
    Tensor2 out = value(a);
    for (double& x : out.data()) x = x > 30.0 ? x : std::log1p(std::exp(x));
    Node n{Op::Softplus};
    n.a = a.id;
    return record(n, std::move(out), {a});
}

Var Tape::softmax_rows(Var a) {
    Node n{Op::Softmax};
    n.a = a.id;
    return record(n, num::softmax_rows(value(a)), {a});
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    const auto& xv = value(x);
    const auto& gv = value(gain);
    const auto& bv = value(bias);
    const std::size_t c = xv.cols();
    if (gv.rows() != 1 || gv.cols() != c || !gv.same_shape(bv))
        throw ShapeError("layer_norm_rows: " + xv.shape_string() + " with gain " + gv.shape_string() +
                         " and bias " + bv.shape_string());
    Tensor2 xhat(xv.rows(), c);
    Tensor2 rstd(xv.rows(), 1);
    Tensor2 out(xv.rows(), c);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        auto r = xv.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(c);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd(i, 0) = rs;
        for (std::size_t j = 0; j < c; ++j) {
            xhat(i, j) = (r[j] - mean) * rs;
            out(i, j) = xhat(i, j) * gv(0, j) + bv(0, j);
        }
    }
    Node n{Op::LayerNorm};
    n.a = x.id;
    n.b = gain.id;
    n.c = bias.id;
    n.aux = stash(std::move(xhat));
    stash(std::move(rstd));
    return record(n, std::move(out), {x, gain, bias});
}

Var Tape::slice_cols(Var a, std::size_t first, std::size_t count) {
    const auto& av = value(a);
    if (first + count > av.cols())
        throw ShapeError("slice_cols: [" + std::to_string(first) + ", +" + std::to_string(count) + ") of " +
                         av.shape_string());
    Tensor2 out(av.rows(), count);
    for (std::size_t i = 0; i < av.rows(); ++i)
        std::copy_n(av.row(i).begin() + static_cast<std::ptrdiff_t>(first), count, out.row(i).begin());
    Node n{Op::SliceCols};
    n.a = a.id;
    n.i0 = first;
    n.i1 = count;
    return record(n, std::move(out), {a});
}

Var Tape::slice_rows(Var a, std::size_t first, std::size_t count) {
    const auto& av = value(a);
    if (first + count > av.rows())
        throw ShapeError("slice_rows: [" + std::to_string(first) + ", +" + std::to_string(count) + ") of " +
                         av.shape_string());
    const auto begin = av.data().begin() + static_cast<std::ptrdiff_t>(first * av.cols());
    Tensor2 out(count, av.cols(), std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(count * av.cols())));
    Node n{Op::SliceRows};
    n.a = a.id;
    n.i0 = first;
    n.i1 = count;
    return record(n, std::move(out), {a});
}

Var Tape::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no parts");
    const std::size_t rows = value(parts[0]).rows();
    std::size_t cols = 0;
    for (Var p : parts) {
        if (value(p).rows() != rows)
            throw ShapeError("concat_cols: " + value(parts[0]).shape_string() + " with " + value(p).shape_string());
        cols += value(p).cols();
    }
    Tensor2 out(rows, cols);
    std::size_t off = 0;
    bool ng = false;
    for (Var p : parts) {
        const auto& pv = value(p);
        for (std::size_t i = 0; i < rows; ++i)
            std::copy(pv.row(i).begin(), pv.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(off));
        off += pv.cols();
        ng = ng || needs(p.id);
    }
    Var o = push(std::move(out), ng);
    if (ng) {
        Node n{Op::ConcatCols};
        n.out = o.id;
        lists_.emplace_back(parts.begin(), parts.end());
        n.list = static_cast<std::int32_t>(lists_.size() - 1);
        nodes_.push_back(n);
    }
    return o;
}

Var Tape::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no parts");
    const std::size_t cols = value(parts[0]).cols();
    std::vector<double> data;
    std::size_t rows = 0;
    bool ng = false;
    for (Var p : parts) {
        const auto& pv = value(p);
        if (pv.cols() != cols)
            throw ShapeError("concat_rows: " + value(parts[0]).shape_string() + " with " + pv.shape_string());
        data.insert(data.end(), pv.data().begin(), pv.data().end());
        rows += pv.rows();
        ng = ng || needs(p.id);
    }
    Var o = push(Tensor2(rows, cols, std::move(data)), ng);
    if (ng) {
        Node n{Op::ConcatRows};
        n.out = o.id;
        lists_.emplace_back(parts.begin(), parts.end());
        n.list = static_cast<std::int32_t>(lists_.size() - 1);
        nodes_.push_back(n);
    }
    return o;
}

Var Tape::sub_scaled(Var logits, Var s, const Tensor2& penalty) {
    const auto& lv = value(logits);
    require_same(lv, penalty, "sub_scaled");
    const double k = scalar(s);
    Tensor2 out = lv;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= k * penalty.data()[i];
    Node n{Op::SubScaled};
    n.a = logits.id;
    n.b = s.id;
    n.aux = stash(penalty);
    return record(n, std::move(out), {logits, s});
}

Var Tape::rotate_pairs(Var a, const Tensor2& angles) {
    const auto& av = value(a);
    if (av.cols() % 2 != 0 || angles.rows() != av.rows() || angles.cols() != av.cols() / 2)
        throw ShapeError("rotate_pairs: " + av.shape_string() + " with angles " + angles.shape_string());
    Tensor2 out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
        for (std::size_t q = 0; q < angles.cols(); ++q) {
            const double c = std::cos(angles(i, q)), s = std::sin(angles(i, q));
            const double x0 = av(i, 2 * q), x1 = av(i, 2 * q + 1);
            out(i, 2 * q) = c * x0 - s * x1;
            out(i, 2 * q + 1) = s * x0 + c * x1;
        }
    }
    Node n{Op::Rotate};
    n.a = a.id;
    n.aux = stash(angles);
    return record(n, std::move(out), {a});
}

Var Tape::pick(Var a, std::size_t r, std::size_t c) {
    const auto& av = value(a);
    if (r >= av.rows() || c >= av.cols())
        throw ShapeError("pick: (" + std::to_string(r) + "," + std::to_string(c) + ") of " + av.shape_string());
    Node n{Op::Pick};
    n.a = a.id;
    n.i0 = r;
    n.i1 = c;
    return record(n, Tensor2::scalar(av(r, c)), {a});
}

Var Tape::sum(Var a) {
    double s = 0.0;
    for (double v : value(a).data()) s += v;
    Node n{Op::Sum};
    n.a = a.id;
    return record(n, Tensor2::scalar(s), {a});
}

Var Tape::mse(Var pred, const Tensor2& target) {
    const auto& pv = value(pred);
    require_same(pv, target, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double d = pv.data()[i] - target.data()[i];
        s += d * d;
    }
    Node n{Op::Mse};
    n.a = pred.id;
    n.aux = stash(target);
    return record(n, Tensor2::scalar(s / static_cast<double>(pv.size())), {pred});
}

// ---------------------------------------------------------------------------
// backward

void Tape::backward(Var loss) {
    const auto& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
        throw ContractError("backward: loss slot must be 1x1, got " + lv.shape_string());
    grads_.assign(values_.size(), Tensor2{});
    if (!needs(loss.id)) return;
    grads_[loss.id] = Tensor2::scalar(1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out > loss.id || grads_[it->out].empty()) continue;
        backward_node(*it);
    }
}

void Tape::backward_node(const Node& n) {
    const Tensor2& g = grads_[n.out];
    switch (n.op) {
    case Op::Leaf:
        break;
    case Op::MatMul:
        if (needs(n.a)) add_into(grad_ref(n.a), num::matmul_nt(g, *values_[n.b]));
        if (needs(n.b)) add_into(grad_ref(n.b), num::matmul_tn(*values_[n.a], g));
        break;
    case Op::MatMulNT:
        if (needs(n.a)) add_into(grad_ref(n.a), num::matmul(g, *values_[n.b]));
        if (needs(n.b)) add_into(grad_ref(n.b), num::matmul_tn(g, *values_[n.a]));
        break;
    case Op::Add:
        if (needs(n.a)) add_into(grad_ref(n.a), g);
        if (needs(n.b)) add_into(grad_ref(n.b), g);
        break;
    case Op::Sub:
        if (needs(n.a)) add_into(grad_ref(n.a), g);
        if (needs(n.b)) {
            auto& gb = grad_ref(n.b).data();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g.data()[i];
        }
        break;
    case Op::AddRow:
        if (needs(n.a)) add_into(grad_ref(n.a), g);
        if (needs(n.b)) {
            auto& gr = grad_ref(n.b);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
        }
        break;
    case Op::Mul: {
        const auto& av = values_[n.a]->data();
        const auto& bv = values_[n.b]->data();
        if (needs(n.a)) {
            auto& ga = grad_ref(n.a).data();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g.data()[i] * bv[i];
        }
        if (needs(n.b)) {
            auto& gb = grad_ref(n.b).data();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g.data()[i] * av[i];
        }
        break;
    }
    case Op::Scale: {
        auto& ga = grad_ref(n.a).data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.s * g.data()[i];
        break;
    }
    case Op::Relu: {
        const auto& av = values_[n.a]->data();
        auto& ga = grad_ref(n.a).data();
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (av[i] > 0.0) ga[i] += g.data()[i];
        break;
    }
    case Op::Softplus: {
        const auto& av = values_[n.a]->data();
        auto& ga = grad_ref(n.a).data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g.data()[i] * sigmoid(av[i]);
        break;
    }
    case Op::Softmax: {
        const Tensor2& y = *values_[n.out];
        auto& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
        }
        break;
    }
    case Op::LayerNorm: {
        const Tensor2& xhat = aux_[static_cast<std::size_t>(n.aux)];
        const Tensor2& rstd = aux_[static_cast<std::size_t>(n.aux) + 1];
        const Tensor2& gain = *values_[n.b];
        const std::size_t c = xhat.cols();
        if (needs(n.b)) {
            auto& gg = grad_ref(n.b);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < c; ++j) gg(0, j) += g(i, j) * xhat(i, j);
        }
        if (needs(n.c)) {
            auto& gb = grad_ref(n.c);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < c; ++j) gb(0, j) += g(i, j);
        }
        if (needs(n.a)) {
            auto& gx = grad_ref(n.a);
            const double inv_c = 1.0 / static_cast<double>(c);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double gh = g(i, j) * gain(0, j);
                    m1 += gh;
                    m2 += gh * xhat(i, j);
                }
                m1 *= inv_c;
                m2 *= inv_c;
                for (std::size_t j = 0; j < c; ++j) {
                    const double gh = g(i, j) * gain(0, j);
                    gx(i, j) += rstd(i, 0) * (gh - m1 - xhat(i, j) * m2);
                }
            }
        }
        break;
    }
    case Op::SliceCols: {
        auto& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < n.i1; ++j) ga(i, n.i0 + j) += g(i, j);
        break;
    }
    case Op::SliceRows: {
        auto& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < n.i1; ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) ga(n.i0 + i, j) += g(i, j);
        break;
    }
    case Op::ConcatCols: {
        std::size_t off = 0;
        for (Var p : lists_[static_cast<std::size_t>(n.list)]) {
            const std::size_t pc = values_[p.id]->cols();
            if (needs(p.id)) {
                auto& gp = grad_ref(p.id);
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < pc; ++j) gp(i, j) += g(i, off + j);
            }
            off += pc;
        }
        break;
    }
    case Op::ConcatRows: {
        std::size_t off = 0;
        for (Var p : lists_[static_cast<std::size_t>(n.list)]) {
            const std::size_t pr = values_[p.id]->rows();
            if (needs(p.id)) {
                auto& gp = grad_ref(p.id);
                for (std::size_t i = 0; i < pr; ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) gp(i, j) += g(off + i, j);
            }
            off += pr;
        }
        break;
    }
    case Op::SubScaled: {
        const Tensor2& pen = aux_[static_cast<std::size_t>(n.aux)];
        if (needs(n.a)) add_into(grad_ref(n.a), g);
        if (needs(n.b)) {
            double s = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) s += g.data()[i] * pen.data()[i];
            grad_ref(n.b)(0, 0) -= s;
        }
        break;
    }
    case Op::Rotate: {
        const Tensor2& ang = aux_[static_cast<std::size_t>(n.aux)];
        auto& ga = grad_ref(n.a);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t q = 0; q < ang.cols(); ++q) {
                const double c = std::cos(ang(i, q)), s = std::sin(ang(i, q));
                const double g0 = g(i, 2 * q), g1 = g(i, 2 * q + 1);
                ga(i, 2 * q) += c * g0 + s * g1;
                ga(i, 2 * q + 1) += -s * g0 + c * g1;
            }
        }
        break;
    }
    case Op::Pick:
        grad_ref(n.a)(n.i0, n.i1) += g(0, 0);
        break;
    case Op::Sum: {
        auto& ga = grad_ref(n.a).data();
        for (double& v : ga) v += g(0, 0);
        break;
    }
    case Op::Mse: {
        const Tensor2& t = aux_[static_cast<std::size_t>(n.aux)];
        const auto& pv = values_[n.a]->data();
        auto& ga = grad_ref(n.a).data();
        const double k = 2.0 * g(0, 0) / static_cast<double>(pv.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += k * (pv[i] - t.data()[i]);
        break;
    }
    }
}

double grad_check(const TapeFunction& f, const Tensor2& x, double eps) {
    if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
    Tensor2 analytic;
    {
        Tape t;
        Var xv = t.input(x);
        Var y = f(t, xv);
        t.backward(y);
        analytic = t.grad(xv);
    }
    auto eval = [&](const Tensor2& at) {
        Tape t;
        Var xv = t.input(at);
        return t.scalar(f(t, xv));
    };
    double worst = 0.0;
    Tensor2 probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x.data()[i];
        probe.data()[i] = orig + eps;
        const double fp = eval(probe);
        probe.data()[i] = orig - eps;
        const double fm = eval(probe);
        probe.data()[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic.data()[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

} // namespace ga::num
