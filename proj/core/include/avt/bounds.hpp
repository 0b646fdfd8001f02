#pragma once

#include "avt/groups.hpp"
#include "avt/network.hpp"
#include "avt/tensor.hpp"

#include <utility>
#include <vector>

namespace avt {

// Per-layer activation intervals under an l-inf input ball of radius eps,
// intersected with the [0,1] input domain. Entry 0 holds the input bounds.
struct IntervalActivations {
    std::vector<Tensor> lower;
    std::vector<Tensor> upper;
};

IntervalActivations propagate_intervals(const Network& net, const Tensor& x, double eps);

// Certified margin bounds for one specification matrix. The matrix is folded
// into the final dense layer before the last propagation step, so zero spec
// rows produce exactly-zero entries and eps=0 reproduces C*f(x) exactly.
struct MarginBounds {
    Tensor lower; // [n_classes]
    Tensor upper; // [n_classes]
    SpecMatrix spec;
    double eps = 0.0;
};

MarginBounds margin_bounds(const Network& net, const SpecMatrix& spec, const Tensor& x, double eps);

enum class Verdict { kRobust, kNotCertified };

// Robust iff every margin lower bound at the spec's nonzero rows is > 0.
Verdict verify_sample(const Network& net, const Tensor& x, int y, double eps, const SpecMatrix& spec);

// ---- batched internals shared by the evaluators ----

// Interval bounds of the penultimate activations (everything before the final
// dense layer) for a whole batch: X [B, ...input_shape] -> ([B,d], [B,d]).
std::pair<Tensor, Tensor> body_interval_batch(const Network& net, const Tensor& x_batch, double eps);

enum class SpecKind { kStandard, kOuter, kInner };

SpecMatrix make_spec(SpecKind kind, int y, int n_classes, const GroupPartition* partition);

// Worst/best-case margins for per-sample specs built from each label:
// returns lower and upper [B, n_classes].
std::pair<Tensor, Tensor> margin_bounds_batch(const Network& net, const Tensor& x_batch,
                                              const std::vector<int>& labels, double eps,
                                              SpecKind kind, const GroupPartition* partition);

} // namespace avt
