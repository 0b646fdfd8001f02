#pragma once

#include "avt/autodiff.hpp"
#include "avt/bounds.hpp"
#include "avt/groups.hpp"
#include "avt/network.hpp"

#include <utility>
#include <vector>

namespace avt {

// Gradients aligned with Network::params.
struct ParamGrads {
    std::vector<LayerParams> layers;

    static ParamGrads zeros_like(const Network& net);
    void accumulate(const ParamGrads& other);
    void scale(double c);
};

// Binds a network's parameters onto a tape and exposes the differentiable
// passes: plain forward, interval propagation of the body, and margin bounds
// with the specification matrix folded into the final dense layer. One
// NetGraph serves a whole batch; gradients flow back into the shared params.
class NetGraph {
public:
    NetGraph(Tape& tape, const Network& net);

    // x_batch const input [B, ...input_shape]
    VarId forward(const Tensor& x_batch);

    // Interval bounds of the penultimate activations at radius eps; values
    // are clipped to the [0,1] input domain first. Returns (lower, upper).
    std::pair<VarId, VarId> body_interval(const Tensor& x_batch, double eps);

    struct Margins {
        VarId lower;
        VarId upper;
    };
    // Margin bounds [N, n_classes] for the given rows of a body interval,
    // under one spec matrix (all selected rows share the same true label).
    Margins fold_margins(VarId body_lo, VarId body_hi, const SpecMatrix& spec,
                         const std::vector<int>& rows);

    // Copies accumulated parameter gradients out of the tape (after backward).
    void read_grads(ParamGrads& out) const;

    const Network& net() const { return net_; }
    Tape& tape() { return tape_; }

private:
    Tape& tape_;
    const Network& net_;
    struct PVar {
        VarId w = -1;
        VarId b = -1;
    };
    std::vector<PVar> pvars_;

    VarId apply_layer(std::size_t li, VarId x, const std::vector<int>& shape,
                      const std::vector<int>& out_shape, int batch);
};

} // namespace avt
