#pragma once

#include "avt/tensor.hpp"

#include <functional>
#include <vector>

namespace avt {

using VarId = int;

// Record of tensor-valued primitive operations supporting reverse-mode
// gradient accumulation. Ops append nodes in evaluation order, so the tape is
// already topologically sorted and backward() is a single reverse sweep.
//
// A tape is single-threaded during recording and backward; parallelism inside
// an op (gemm row splits) keeps per-cell reduction order fixed, so gradients
// are bit-identical for any thread count.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. Constants never receive gradients; params do.
    VarId constant(Tensor t);
    VarId param(Tensor t);

    const Tensor& val(VarId id) const { return nodes_[static_cast<std::size_t>(id)].val; }
    const Tensor& grad(VarId id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

    // ---- elementwise ----
    VarId add(VarId a, VarId b);
    VarId sub(VarId a, VarId b);
    VarId scale(VarId a, double c);
    VarId neg(VarId a) { return scale(a, -1.0); }
    VarId mul_const(VarId a, Tensor c); // elementwise, same shape as a
    VarId relu(VarId a);                // subgradient at 0 is 0
    VarId abs(VarId a);                 // subgradient at 0 is 0

    // x * scale + shift with broadcast: element i uses constant entry
    // (i / block) % scale.numel(). block = H*W gives per-channel constants on
    // [B,C,H,W]; block = 1 cycles per-element constants across a batch. Used
    // by fixed affine layers whose constants are excluded from optimization.
    VarId elem_affine(VarId x, Tensor scl, Tensor shift, std::int64_t block);

    // ---- linear algebra ----
    VarId matmul(VarId a, VarId b);              // [m,k]*[k,n]
    VarId linear(VarId x, VarId w, VarId bias);  // x[N,in]*w[out,in]^T + bias[out]; bias may be -1
    VarId linear_abs(VarId x, VarId w);          // x[N,in]*|w[out,in]|^T

    // ---- convolution (cross-correlation), batched [B,C,H,W] ----
    VarId conv2d(VarId x, VarId k, VarId bias, int stride, int pad);
    VarId conv2d_abs(VarId x, VarId k, int stride, int pad);

    // ---- shape / selection ----
    VarId reshape(VarId a, std::vector<int> new_shape);
    VarId gather_rows(VarId a, std::vector<int> rows);

    // ---- losses / reductions ----
    // per-row softmax cross-entropy with max-shift; logits [N,n] -> [N]
    VarId softmax_ce_rows(VarId logits, std::vector<int> targets);
    // single-vector convenience: logits [n] or [1,n] -> scalar [1]
    VarId softmax_ce(VarId logits, int target);
    VarId sum_elements(VarId a); // -> scalar [1]

    // Reverse sweep from a scalar output. Gradients of every node become
    // available through grad(); calling twice re-runs from fresh zeros.
    void backward(VarId output);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Tape&, VarId)> back; // empty for leaves / pure constants
    };

    std::vector<Node> nodes_;

    VarId push(Tensor val, bool needs_grad, std::function<void(Tape&, VarId)> back);
    Tensor& grad_mut(VarId id) { return nodes_[static_cast<std::size_t>(id)].grad; }
    bool needs(VarId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    friend struct TapeOpsAccess;
};

} // namespace avt
