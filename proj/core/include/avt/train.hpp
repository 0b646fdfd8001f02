#pragma once

#include "avt/data.hpp"
#include "avt/graph.hpp"
#include "avt/groups.hpp"
#include "avt/network.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace avt {

struct SgdMomentumConfig {
    double lr = 0.1;
    double momentum = 0.9;
};
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};
using OptimizerConfig = std::variant<SgdMomentumConfig, AdamConfig>;

// Additional comparison-loss term (summed into the objective); the two-term
// outer+inner form is the default pairing.
struct LossTerm {
    SpecKind kind = SpecKind::kOuter;
    GroupPartition partition;
    double eps = 0.0;
};

struct LossMode {
    enum Kind { kNatural, kRobust, kIgrp };
    Kind kind = kNatural;
    double eps = 0.0;        // robust
    double eps_outer = 0.0;  // igrp
    double eps_inner = 0.0;  // igrp; must be <= eps_outer
    bool ubs = false;        // igrp: scatter best-case margins into zeroed entries
    GroupPartition partition;
    std::vector<LossTerm> extra_terms;

    static LossMode natural() { return {}; }
    static LossMode robust(double eps);
    static LossMode igrp(GroupPartition partition, double eps_outer, double eps_inner,
                         bool ubs = false);
};

// Natural warmup, then a linear ramp of the perturbation radius with the
// natural/robust mixing weight kappa interpolated over the same ramp.
struct Schedule {
    int natural_warmup_epochs = 5;
    int ramp_epochs = -1; // -1: 40% of the post-warmup epochs, rounded up
    double kappa_start = 1.0;
    double kappa_end = 0.5;
};

struct ScheduleState {
    double eps_multiplier = 1.0;
    double kappa = 0.0;
};

ScheduleState schedule_at(const Schedule& s, int epoch, int total_epochs);

struct TrainConfig {
    int epochs = 1;
    int batch_size = 64;
    std::uint64_t seed = 0;
    OptimizerConfig optimizer = AdamConfig{};
    LossMode loss;
    Schedule schedule;
    bool inverse_frequency_weights = false; // per-sample class rebalancing
};

// ---- loss evaluation ----

// Sound surrogate for the worst case over the eps-ball: cross-entropy of the
// negated worst-case margins under the standard spec. eps=0 reduces to the
// natural cross-entropy exactly.
double robust_loss(const Network& net, const Tensor& x, int y, double eps);

// Outer + inner group losses with their own radii (and optional upper-bound
// scattering into the structurally zero margin entries).
double igrp_loss(const Network& net, const Tensor& x, int y, const GroupPartition& partition,
                 double eps_outer, double eps_inner, bool ubs);

// kappa * natural CE + (1-kappa) * robust term with all radii scaled by the
// schedule multiplier; mean over the batch.
double mixed_objective(const Network& net, const Batch& batch, const ScheduleState& state,
                       const TrainConfig& config);

// Batched value + parameter gradients (grads may be null for value-only).
double batch_loss(const Network& net, const Batch& batch, const LossMode& mode, double kappa,
                  double eps_multiplier, const std::vector<double>* sample_weights,
                  ParamGrads* grads);

// ---- optimization ----

struct EpochRecord {
    int epoch = 0;
    double mean_loss = 0.0;
    double clean_error = 0.0;
    double eps_multiplier = 0.0;
    double kappa = 0.0;
};

struct TrainResult {
    Network net;
    std::vector<EpochRecord> history;
};

// Deterministic training loop; throws NumericError on a non-finite loss.
TrainResult train(Network net, const Dataset& dataset, const TrainConfig& config);

std::string history_to_json_lines(const std::vector<EpochRecord>& history);

} // namespace avt
