#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "ga/tensor.hpp"

namespace ga::num {

/// Handle to a value slot on a Tape.
struct Var {
    std::uint32_t id = 0;
};

/// Reverse-mode differentiation tape.
///
/// Every operation appends a node whose result occupies a fresh slot. Slots
/// created by `leaf` borrow the caller's tensor (it must outlive the tape);
/// all other slots are owned. `backward` replays the nodes in exact reverse
/// order and only propagates into slots that depend on a differentiable
/// leaf or input.
///
/// A tape is single-threaded. Distinct tapes may share borrowed leaves.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable slot borrowing `value`.
    Var leaf(const Tensor2& value);
    /// Differentiable slot owning `value`.
    Var input(Tensor2 value);
    /// Non-differentiable slot.
    Var constant(Tensor2 value);

    const Tensor2& value(Var v) const { return *values_[v.id]; }
    double scalar(Var v) const;
    bool requires_grad(Var v) const { return needs_grad_[v.id]; }
    std::size_t slot_count() const noexcept { return values_.size(); }

    /// Gradient of the last backward's loss w.r.t. `v`. Zero-filled if `v`
    /// did not influence the loss.
    Tensor2 grad(Var v) const;
    /// acc += gradient of `v` (no-op when `v` did not influence the loss).
    void add_grad_to(Var v, Tensor2& acc) const;

    /// Fills gradient accumulators with d(loss)/d(slot). `loss` must be 1x1.
    void backward(Var loss);

    Var matmul(Var a, Var b);
    /// a·bᵀ
    Var matmul_nt(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    /// Adds a 1×c row to every row of a.
    Var add_row(Var a, Var row);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var relu(Var a);
    Var softplus(Var a);
    Var softmax_rows(Var a);
    /// Per-row normalization to zero mean and unit variance, then gain and bias (both 1×c).
    Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
    Var slice_cols(Var a, std::size_t first, std::size_t count);
    Var slice_rows(Var a, std::size_t first, std::size_t count);
    Var concat_cols(std::span<const Var> parts);
    Var concat_rows(std::span<const Var> parts);
    /// logits − s·penalty, with s a 1×1 slot and penalty a fixed matrix.
    Var sub_scaled(Var logits, Var s, const Tensor2& penalty);
    /// Rotates consecutive column pairs (2q, 2q+1) of each row r by angle(r, q).
    Var rotate_pairs(Var a, const Tensor2& angles);
    /// Element (r, c) as a 1×1 slot.
    Var pick(Var a, std::size_t r, std::size_t c);
    Var sum(Var a);
    /// mean((pred − target)²) as a 1×1 slot.
    Var mse(Var pred, const Tensor2& target);

private:
    enum class Op : std::uint8_t {
        Leaf, MatMul, MatMulNT, Add, Sub, AddRow, Mul, Scale, Relu, Softplus, Softmax,
        LayerNorm, SliceCols, SliceRows, ConcatCols, ConcatRows, SubScaled, Rotate, Pick, Sum, Mse
    };
    struct Node {
        Op op = Op::Leaf;
        std::uint32_t out = 0;
        std::uint32_t a = 0, b = 0, c = 0;
        std::size_t i0 = 0, i1 = 0;
        double s = 0.0;
        std::int32_t aux = -1;   // index into aux_ tensors
        std::int32_t list = -1;  // index into lists_
    };

    Var push(Tensor2 v, bool needs_grad);
    Var record(Node n, Tensor2 v, std::initializer_list<Var> deps);
    std::int32_t stash(Tensor2 t);
    Tensor2& grad_ref(std::uint32_t slot);
    bool needs(std::uint32_t slot) const { return needs_grad_[slot]; }
    void backward_node(const Node& n);

    std::vector<const Tensor2*> values_;
    std::vector<char> needs_grad_;
    std::deque<Tensor2> owned_;
    std::deque<Tensor2> aux_;
    std::vector<std::vector<Var>> lists_;
    std::vector<Node> nodes_;
    std::vector<Tensor2> grads_;
};

/// Scalar function of one tensor built on a tape.
using TapeFunction = std::function<Var(Tape&, Var)>;

/// Max over entries of |analytic − central difference| / max(|analytic|, |central|, 1e-8).
double grad_check(const TapeFunction& f, const Tensor2& x, double eps);

} // namespace ga::num
