#include "avt/train.hpp"

#include "avt/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <sstream>

namespace avt {

LossMode LossMode::robust(double eps) {
    if (eps < 0.0) throw ConfigError("robust loss: eps must be >= 0");
    LossMode m;
    m.kind = kRobust;
    m.eps = eps;
    return m;
}

LossMode LossMode::igrp(GroupPartition partition, double eps_outer, double eps_inner, bool ubs) {
    if (eps_inner < 0.0 || eps_outer < 0.0) throw ConfigError("igrp: eps values must be >= 0");
    if (eps_inner > eps_outer)
        throw ConfigError("igrp: eps_inner must not exceed eps_outer");
    LossMode m;
    m.kind = kIgrp;
    m.partition = std::move(partition);
    m.eps_outer = eps_outer;
    m.eps_inner = eps_inner;
    m.ubs = ubs;
    return m;
}

ScheduleState schedule_at(const Schedule& s, int epoch, int total_epochs) {
    const int warm = std::max(0, s.natural_warmup_epochs);
    int ramp = s.ramp_epochs;
    if (ramp < 0) {
        int rest = std::max(0, total_epochs - warm);
        ramp = (rest * 2 + 4) / 5; // ceil(0.4 * rest)
    }
    double f;
    if (epoch < warm)
        f = 0.0;
    else if (ramp <= 0)
        f = 1.0;
    else
        f = std::min(1.0, static_cast<double>(epoch - warm + 1) / ramp);
    ScheduleState st;
    st.eps_multiplier = f;
    st.kappa = s.kappa_start + (s.kappa_end - s.kappa_start) * f;
    return st;
}

namespace {

// Rows of the batch grouped by label, in ascending label order.
std::map<int, std::vector<int>> rows_by_label(const std::vector<int>& labels) {
    std::map<int, std::vector<int>> by;
    for (std::size_t i = 0; i < labels.size(); ++i) by[labels[i]].push_back(static_cast<int>(i));
    return by;
}

struct TermSums {
    std::vector<VarId> per_sample; // [N_y] CE vectors, one per label group
};

// CE of the negated margin vector for one comparison term over the whole
// batch; returns per-label-group CE row vectors.
std::vector<VarId> spec_term_ce(NetGraph& g, Tape& tape, const std::vector<int>& labels,
                                VarId body_lo, VarId body_hi, SpecKind kind,
                                const GroupPartition* partition, bool ubs, VarId ubs_body_lo,
                                VarId ubs_body_hi) {
    const int n = g.net().n_classes;
    std::vector<VarId> ces;
    for (const auto& [y, rows] : rows_by_label(labels)) {
        SpecMatrix spec = make_spec(kind, y, n, partition);
        NetGraph::Margins m = g.fold_margins(body_lo, body_hi, spec, rows);
        VarId vec = m.lower;
        if (ubs && kind != SpecKind::kStandard) {
            // complementary spec under the same radius: its rows are exactly
            // the zero rows of this term (minus row y), so the disjoint sum
            // scatters best-case margins into the zeroed entries
            SpecKind comp = (kind == SpecKind::kOuter) ? SpecKind::kInner : SpecKind::kOuter;
            SpecMatrix cspec = make_spec(comp, y, n, partition);
            NetGraph::Margins cm = g.fold_margins(ubs_body_lo, ubs_body_hi, cspec, rows);
            vec = tape.add(vec, cm.upper);
        }
        ces.push_back(tape.softmax_ce_rows(tape.neg(vec), std::vector<int>(rows.size(), y)));
    }
    return ces;
}

VarId weighted_total(Tape& tape, const std::vector<VarId>& ce_groups,
                     const std::map<int, std::vector<int>>& by_label,
                     const std::vector<double>* weights) {
    std::vector<VarId> sums;
    std::size_t gi = 0;
    for (const auto& [y, rows] : by_label) {
        VarId ce = ce_groups[gi++];
        if (weights) {
            Tensor w({static_cast<int>(rows.size())}, 0.0);
            for (std::size_t k = 0; k < rows.size(); ++k)
                w.v[k] = (*weights)[static_cast<std::size_t>(rows[k])];
            ce = tape.mul_const(ce, std::move(w));
        }
        sums.push_back(tape.sum_elements(ce));
    }
    VarId total = sums[0];
    for (std::size_t i = 1; i < sums.size(); ++i) total = tape.add(total, sums[i]);
    return total;
}

// Sum over the batch of the robust-term losses (not yet divided by B).
VarId robust_term_total(NetGraph& g, Tape& tape, const Batch& batch, const LossMode& mode,
                        double eps_multiplier, const std::vector<double>* weights) {
    const auto by_label = rows_by_label(batch.labels);
    std::vector<std::pair<SpecKind, const GroupPartition*>> terms;
    std::vector<double> epss;

    if (mode.kind == LossMode::kRobust) {
        terms.push_back({SpecKind::kStandard, nullptr});
        epss.push_back(mode.eps * eps_multiplier);
    } else {
        terms.push_back({SpecKind::kOuter, &mode.partition});
        epss.push_back(mode.eps_outer * eps_multiplier);
        terms.push_back({SpecKind::kInner, &mode.partition});
        epss.push_back(mode.eps_inner * eps_multiplier);
        for (const LossTerm& t : mode.extra_terms) {
            terms.push_back({t.kind, &t.partition});
            epss.push_back(t.eps * eps_multiplier);
        }
    }

    // one body propagation per distinct radius
    std::map<double, std::pair<VarId, VarId>> bodies;
    for (double e : epss)
        if (!bodies.count(e)) bodies[e] = g.body_interval(batch.inputs, e);

    VarId total = -1;
    for (std::size_t t = 0; t < terms.size(); ++t) {
        auto [blo, bhi] = bodies[epss[t]];
        std::vector<VarId> ces = spec_term_ce(g, tape, batch.labels, blo, bhi, terms[t].first,
                                              terms[t].second, mode.kind == LossMode::kIgrp && mode.ubs,
                                              blo, bhi);
        VarId term_total = weighted_total(tape, ces, by_label, weights);
        total = (total < 0) ? term_total : tape.add(total, term_total);
    }
    return total;
}

VarId natural_term_total(NetGraph& g, Tape& tape, const Batch& batch,
                         const std::vector<double>* weights) {
    VarId logits = g.forward(batch.inputs);
    VarId ce = tape.softmax_ce_rows(logits, batch.labels);
    if (weights) {
        Tensor w({static_cast<int>(batch.labels.size())}, 0.0);
        for (std::size_t k = 0; k < batch.labels.size(); ++k) w.v[k] = (*weights)[k];
        ce = tape.mul_const(ce, std::move(w));
    }
    return tape.sum_elements(ce);
}

} // namespace

double batch_loss(const Network& net, const Batch& batch, const LossMode& mode, double kappa,
                  double eps_multiplier, const std::vector<double>* sample_weights,
                  ParamGrads* grads) {
    if (batch.labels.empty()) throw ConfigError("batch_loss: empty batch");
    Tape tape;
    NetGraph g(tape, net);
    const double b = static_cast<double>(batch.labels.size());

    VarId total = -1;
    if (mode.kind == LossMode::kNatural || kappa >= 1.0) {
        total = natural_term_total(g, tape, batch, sample_weights);
    } else {
        VarId rob = robust_term_total(g, tape, batch, mode, eps_multiplier, sample_weights);
        if (kappa > 0.0) {
            VarId nat = natural_term_total(g, tape, batch, sample_weights);
            total = tape.add(tape.scale(nat, kappa), tape.scale(rob, 1.0 - kappa));
        } else {
            total = rob;
        }
    }
    VarId loss = tape.scale(total, 1.0 / b);
    double value = tape.val(loss).v[0];
    if (grads) {
        tape.backward(loss);
        g.read_grads(*grads);
    }
    return value;
}

double robust_loss(const Network& net, const Tensor& x, int y, double eps) {
    Batch b = {Tensor{}, {y}, {0}};
    std::vector<int> shape = {1};
    shape.insert(shape.end(), x.shape.begin(), x.shape.end());
    b.inputs = Tensor(shape, x.v);
    return batch_loss(net, b, LossMode::robust(eps), 0.0, 1.0, nullptr, nullptr);
}

double igrp_loss(const Network& net, const Tensor& x, int y, const GroupPartition& partition,
                 double eps_outer, double eps_inner, bool ubs) {
    if (partition.n_classes() != net.n_classes)
        throw ConfigError("igrp_loss: partition does not cover the network's classes");
    Batch b = {Tensor{}, {y}, {0}};
    std::vector<int> shape = {1};
    shape.insert(shape.end(), x.shape.begin(), x.shape.end());
    b.inputs = Tensor(shape, x.v);
    return batch_loss(net, b, LossMode::igrp(partition, eps_outer, eps_inner, ubs), 0.0, 1.0,
                      nullptr, nullptr);
}

double mixed_objective(const Network& net, const Batch& batch, const ScheduleState& state,
                       const TrainConfig& config) {
    return batch_loss(net, batch, config.loss, state.kappa, state.eps_multiplier, nullptr, nullptr);
}

namespace {

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::vector<LayerParams>& params, const ParamGrads& grads) = 0;
};

class SgdMomentum : public Optimizer {
public:
    SgdMomentum(const SgdMomentumConfig& cfg, const Network& net)
        : cfg_(cfg), vel_(ParamGrads::zeros_like(net)) {}

    void step(std::vector<LayerParams>& params, const ParamGrads& grads) override {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto upd = [&](Tensor& p, Tensor& v, const Tensor& g) {
                for (std::size_t k = 0; k < p.v.size(); ++k) {
                    v.v[k] = cfg_.momentum * v.v[k] + g.v[k];
                    p.v[k] -= cfg_.lr * v.v[k];
                }
            };
            upd(params[i].w, vel_.layers[i].w, grads.layers[i].w);
            upd(params[i].b, vel_.layers[i].b, grads.layers[i].b);
        }
    }

private:
    SgdMomentumConfig cfg_;
    ParamGrads vel_;
};

class Adam : public Optimizer {
public:
    Adam(const AdamConfig& cfg, const Network& net)
        : cfg_(cfg), m_(ParamGrads::zeros_like(net)), v_(ParamGrads::zeros_like(net)) {}

    void step(std::vector<LayerParams>& params, const ParamGrads& grads) override {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto upd = [&](Tensor& p, Tensor& m, Tensor& v, const Tensor& g) {
                for (std::size_t k = 0; k < p.v.size(); ++k) {
                    m.v[k] = cfg_.beta1 * m.v[k] + (1.0 - cfg_.beta1) * g.v[k];
                    v.v[k] = cfg_.beta2 * v.v[k] + (1.0 - cfg_.beta2) * g.v[k] * g.v[k];
                    double mhat = m.v[k] / bc1;
                    double vhat = v.v[k] / bc2;
                    p.v[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                }
            };
            upd(params[i].w, m_.layers[i].w, v_.layers[i].w, grads.layers[i].w);
            upd(params[i].b, m_.layers[i].b, v_.layers[i].b, grads.layers[i].b);
        }
    }

private:
    AdamConfig cfg_;
    ParamGrads m_, v_;
    int t_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg, const Network& net) {
    if (const auto* s = std::get_if<SgdMomentumConfig>(&cfg))
        return std::make_unique<SgdMomentum>(*s, net);
    return std::make_unique<Adam>(std::get<AdamConfig>(cfg), net);
}

double dataset_clean_error(const Network& net, const Dataset& ds) {
    if (ds.size() == 0) return 0.0;
    std::size_t wrong = 0;
    const int chunk = 256;
    std::vector<int> idx;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i)
            idx.push_back(static_cast<int>(i));
        Batch b = make_batch(ds, idx);
        Tensor logits = forward_batch(net, b.inputs);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            int best = 0;
            for (int j = 1; j < logits.cols(); ++j)
                if (logits.at(static_cast<int>(i), j) > logits.at(static_cast<int>(i), best)) best = j;
            if (best != b.labels[i]) ++wrong;
        }
    }
    return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

std::vector<double> inverse_frequency(const Dataset& ds) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(ds.n_classes), 0);
    for (int y : ds.labels) ++counts[static_cast<std::size_t>(y)];
    std::vector<double> w(static_cast<std::size_t>(ds.n_classes), 0.0);
    for (int c = 0; c < ds.n_classes; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0)
            w[static_cast<std::size_t>(c)] = static_cast<double>(ds.size()) /
                                             (static_cast<double>(ds.n_classes) *
                                              static_cast<double>(counts[static_cast<std::size_t>(c)]));
    }
    return w;
}

} // namespace

TrainResult train(Network net, const Dataset& dataset, const TrainConfig& config) {
    if (dataset.size() == 0) throw ConfigError("train: empty dataset");
    if (dataset.n_classes != net.n_classes)
        throw ConfigError("train: dataset classes do not match the network output");
    for (double k : {config.schedule.kappa_start, config.schedule.kappa_end})
        if (k < 0.0 || k > 1.0) throw ConfigError("train: kappa must lie in [0,1]");
    if (config.loss.kind == LossMode::kIgrp &&
        config.loss.partition.n_classes() != net.n_classes)
        throw ConfigError("train: igrp partition does not cover the network's classes");

    TrainResult result;
    auto opt = make_optimizer(config.optimizer, net);
    std::vector<double> class_weights;
    if (config.inverse_frequency_weights) class_weights = inverse_frequency(dataset);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        ScheduleState st = schedule_at(config.schedule, epoch, config.epochs);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (const Batch& batch : batches(dataset, config.batch_size, config.seed, epoch)) {
            ParamGrads grads = ParamGrads::zeros_like(net);
            const std::vector<double>* wp = nullptr;
            std::vector<double> bw;
            if (!class_weights.empty()) {
                bw.reserve(batch.labels.size());
                for (int y : batch.labels) bw.push_back(class_weights[static_cast<std::size_t>(y)]);
                wp = &bw;
            }
            double loss = batch_loss(net, batch, config.loss, st.kappa, st.eps_multiplier, wp, &grads);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << " after " << seen << " samples";
                throw NumericError(msg.str());
            }
            opt->step(net.params, grads);
            loss_sum += loss * static_cast<double>(batch.labels.size());
            seen += batch.labels.size();
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = loss_sum / static_cast<double>(seen);
        rec.clean_error = dataset_clean_error(net, dataset);
        rec.eps_multiplier = st.eps_multiplier;
        rec.kappa = st.kappa;
        result.history.push_back(rec);
    }
    result.net = std::move(net);
    return result;
}

std::string history_to_json_lines(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    for (const EpochRecord& r : history) {
        nlohmann::ordered_json j;
        j["epoch"] = r.epoch;
        j["mean_loss"] = r.mean_loss;
        j["clean_error"] = r.clean_error;
        j["eps_multiplier"] = r.eps_multiplier;
        j["kappa"] = r.kappa;
        out << j.dump() << "\n";
    }
    return out.str();
}

} // namespace avt
