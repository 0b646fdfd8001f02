#include "avt/eval.hpp"

#include "avt/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace avt {

namespace {

int argmax_lowest(const Tensor& logits) {
    int best = 0;
    for (int j = 1; j < static_cast<int>(logits.v.size()); ++j)
        if (logits.v[static_cast<std::size_t>(j)] > logits.v[static_cast<std::size_t>(best)]) best = j;
    return best;
}

const Network* as_network(const Predictor& p) {
    if (auto* n = std::get_if<const Network*>(&p)) return *n;
    return nullptr;
}

void require_nonempty(const Dataset& ds) {
    if (ds.size() == 0) throw ConfigError("metrics: empty dataset");
}

// Applies fn(sample_index, margin_lower_row) over the dataset in fixed chunks.
template <typename Fn>
void for_margin_rows(const Network& net, const Dataset& ds, double eps, SpecKind kind,
                     const GroupPartition* partition, Fn&& fn) {
    const int chunk = 256;
    std::vector<int> idx;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + static_cast<std::size_t>(chunk)); ++i)
            idx.push_back(static_cast<int>(i));
        Batch b = make_batch(ds, idx);
        auto [lo, hi] = margin_bounds_batch(net, b.inputs, b.labels, eps, kind, partition);
        for (std::size_t r = 0; r < idx.size(); ++r)
            fn(static_cast<std::size_t>(idx[r]), lo, static_cast<int>(r));
    }
}

// A sample fails a verified metric when some nonzero spec row has a
// non-positive worst-case margin.
bool margin_row_fails(const Tensor& lo, int row, const SpecMatrix& spec) {
    for (int j = 0; j < spec.n; ++j) {
        if (!spec.row_nonzero(j)) continue;
        if (!(lo.at(row, j) > 0.0)) return true;
    }
    return false;
}

} // namespace

int predict_class(const Predictor& p, const Tensor& x) {
    if (const Network* net = as_network(p)) return argmax_lowest(forward(*net, x));
    return ndt_predict(*std::get<const Ndt*>(p), x);
}

double clean_error(const Predictor& p, const Dataset& ds) {
    require_nonempty(ds);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (predict_class(p, ds.inputs[i]) != ds.labels[i]) ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

double inter_group_error(const Predictor& p, const Dataset& ds, const GroupPartition& partition) {
    require_nonempty(ds);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int pred = predict_class(p, ds.inputs[i]);
        if (partition.group(pred) != partition.group(ds.labels[i])) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

double verified_inter_group_error(const Network& net, const Dataset& ds,
                                  const GroupPartition& partition, double eps) {
    require_nonempty(ds);
    std::size_t fails = 0;
    for_margin_rows(net, ds, eps, SpecKind::kOuter, &partition,
                    [&](std::size_t i, const Tensor& lo, int row) {
                        SpecMatrix spec = spec_outer(ds.labels[i], partition, net.n_classes);
                        if (margin_row_fails(lo, row, spec)) ++fails;
                    });
    return static_cast<double>(fails) / static_cast<double>(ds.size());
}

double intra_group_error(const Predictor& p, const Dataset& ds, const GroupPartition& partition) {
    require_nonempty(ds);
    std::size_t wrong = 0;
    if (const Network* net = as_network(p)) {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            Tensor logits = forward(*net, ds.inputs[i]);
            const int y = ds.labels[i];
            const int gy = partition.group(y);
            for (int j = 0; j < net->n_classes; ++j) {
                if (j == y || partition.group(j) != gy) continue;
                if (logits.v[static_cast<std::size_t>(j)] >= logits.v[static_cast<std::size_t>(y)]) {
                    ++wrong;
                    break;
                }
            }
        }
        return static_cast<double>(wrong) / static_cast<double>(ds.size());
    }
    // routing tree: force the true group's branch, then judge the in-group
    // sub-decision along the rest of the path
    const Ndt& ndt = *std::get<const Ndt*>(p);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int y = ds.labels[i];
        const int gy = partition.group(y);
        const NdtNode* node = ndt.root.get();
        int pred = -1;
        for (;;) {
            // in-group once the node's classes all share the true group
            bool inside = true;
            for (const auto& grp : node->child_groups)
                for (int c : grp)
                    if (partition.group(c) != gy) inside = false;
            int chosen;
            if (inside) {
                Tensor logits = forward(node->net, ds.inputs[i]);
                chosen = argmax_lowest(logits);
            } else {
                chosen = -1;
                for (std::size_t gidx = 0; gidx < node->child_groups.size(); ++gidx)
                    for (int c : node->child_groups[gidx])
                        if (c == y) chosen = static_cast<int>(gidx);
                if (chosen < 0) { pred = -1; break; } // y not under this node
            }
            const NdtNode* child = node->children[static_cast<std::size_t>(chosen)].get();
            if (!child) {
                pred = node->child_groups[static_cast<std::size_t>(chosen)][0];
                break;
            }
            node = child;
        }
        if (pred != y) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

double verified_intra_group_error(const Network& net, const Dataset& ds,
                                  const GroupPartition& partition, double eps_inner) {
    require_nonempty(ds);
    std::size_t fails = 0;
    for_margin_rows(net, ds, eps_inner, SpecKind::kInner, &partition,
                    [&](std::size_t i, const Tensor& lo, int row) {
                        SpecMatrix spec = spec_inner(ds.labels[i], partition, net.n_classes);
                        if (margin_row_fails(lo, row, spec)) ++fails;
                    });
    return static_cast<double>(fails) / static_cast<double>(ds.size());
}

double verified_error(const Network& net, const Dataset& ds, double eps) {
    require_nonempty(ds);
    std::size_t fails = 0;
    for_margin_rows(net, ds, eps, SpecKind::kStandard, nullptr,
                    [&](std::size_t i, const Tensor& lo, int row) {
                        SpecMatrix spec = spec_standard(ds.labels[i], net.n_classes);
                        if (margin_row_fails(lo, row, spec)) ++fails;
                    });
    return static_cast<double>(fails) / static_cast<double>(ds.size());
}

std::vector<std::vector<std::int64_t>> confusion(const Predictor& p, const Dataset& ds) {
    require_nonempty(ds);
    int n = ds.n_classes;
    std::vector<std::vector<std::int64_t>> counts(static_cast<std::size_t>(n),
                                                  std::vector<std::int64_t>(static_cast<std::size_t>(n), 0));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int pred = predict_class(p, ds.inputs[i]);
        ++counts[static_cast<std::size_t>(ds.labels[i])][static_cast<std::size_t>(pred)];
    }
    return counts;
}

double ndt_root_verified_error(const Ndt& ndt, const Dataset& ds, double eps) {
    require_nonempty(ds);
    GroupPartition part = root_partition(ndt);
    std::size_t fails = 0;
    const int chunk = 256;
    std::vector<int> idx;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + static_cast<std::size_t>(chunk)); ++i)
            idx.push_back(static_cast<int>(i));
        Batch b = make_batch(ds, idx);
        std::vector<int> groups;
        groups.reserve(idx.size());
        for (int label : b.labels) groups.push_back(part.group(label));
        auto [lo, hi] = margin_bounds_batch(ndt.root->net, b.inputs, groups, eps,
                                            SpecKind::kStandard, nullptr);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            SpecMatrix spec = spec_standard(groups[r], 2);
            if (margin_row_fails(lo, static_cast<int>(r), spec)) ++fails;
        }
    }
    return static_cast<double>(fails) / static_cast<double>(ds.size());
}

MetricsReport evaluate_network(const Network& net, const Dataset& ds,
                               const GroupPartition* partition, double eps,
                               std::optional<double> eps_intra) {
    MetricsReport r;
    Predictor p = &net;
    r.clean_error = clean_error(p, ds);
    r.confusion = confusion(p, ds);
    r.verified_error = verified_error(net, ds, eps);
    r.eps = eps;
    r.eps_intra = eps_intra;
    r.dataset = ds.name;
    r.model_id = net.tag;
    if (partition) {
        double ei = eps_intra.value_or(eps);
        r.inter_group_error = inter_group_error(p, ds, *partition);
        r.verified_inter_group_error = verified_inter_group_error(net, ds, *partition, eps);
        r.intra_group_error = intra_group_error(p, ds, *partition);
        r.verified_intra_group_error = verified_intra_group_error(net, ds, *partition, ei);
        r.partition_groups = partition->groups();
    }
    return r;
}

MetricsReport evaluate_ndt(const Ndt& ndt, const Dataset& ds, double eps) {
    MetricsReport r;
    Predictor p = &ndt;
    GroupPartition part = root_partition(ndt);
    r.clean_error = clean_error(p, ds);
    r.confusion = confusion(p, ds);
    r.inter_group_error = inter_group_error(p, ds, part);
    r.verified_inter_group_error = ndt_root_verified_error(ndt, ds, eps);
    r.intra_group_error = intra_group_error(p, ds, part);
    r.eps = eps;
    r.dataset = ds.name;
    r.model_id = "ndt";
    r.partition_groups = part.groups();
    return r;
}

namespace {

void put_opt(nlohmann::ordered_json& j, const char* key, const std::optional<double>& v) {
    if (v)
        j[key] = *v;
    else
        j[key] = nullptr;
}

std::optional<double> get_opt(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

std::string pct(const std::optional<double>& v) {
    if (!v) return "-";
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << (*v * 100.0) << "%";
    return s.str();
}

} // namespace

std::string report_to_json_text(const MetricsReport& r) {
    nlohmann::ordered_json j;
    j["clean_error"] = r.clean_error;
    put_opt(j, "inter_group_error", r.inter_group_error);
    put_opt(j, "verified_inter_group_error", r.verified_inter_group_error);
    put_opt(j, "intra_group_error", r.intra_group_error);
    put_opt(j, "verified_intra_group_error", r.verified_intra_group_error);
    put_opt(j, "verified_error", r.verified_error);
    j["confusion"] = r.confusion;
    j["eps"] = r.eps;
    put_opt(j, "eps_intra", r.eps_intra);
    j["dataset"] = r.dataset;
    j["model_id"] = r.model_id;
    j["partition_groups"] = r.partition_groups;
    return j.dump(1);
}

MetricsReport report_from_json_text(const std::string& text) {
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        MetricsReport r;
        r.clean_error = j.at("clean_error").get<double>();
        r.inter_group_error = get_opt(j, "inter_group_error");
        r.verified_inter_group_error = get_opt(j, "verified_inter_group_error");
        r.intra_group_error = get_opt(j, "intra_group_error");
        r.verified_intra_group_error = get_opt(j, "verified_intra_group_error");
        r.verified_error = get_opt(j, "verified_error");
        r.confusion = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
        r.eps = j.at("eps").get<double>();
        r.eps_intra = get_opt(j, "eps_intra");
        r.dataset = j.at("dataset").get<std::string>();
        r.model_id = j.at("model_id").get<std::string>();
        r.partition_groups = j.at("partition_groups").get<std::vector<std::vector<int>>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("metrics report: invalid JSON: ") + e.what());
    }
}

std::string report_to_table(const MetricsReport& r) {
    std::ostringstream out;
    out << std::left;
    out << std::setw(10) << "eps" << std::setw(10) << "Error" << std::setw(13) << "InterGrp"
        << std::setw(13) << "VerInterGrp" << std::setw(13) << "IntraGrp" << std::setw(13)
        << "VerIntraGrp" << std::setw(13) << "VerErr" << "\n";
    std::ostringstream epss;
    epss << std::setprecision(6) << r.eps;
    out << std::setw(10) << epss.str() << std::setw(10) << pct(r.clean_error)
        << std::setw(13) << pct(r.inter_group_error) << std::setw(13)
        << pct(r.verified_inter_group_error) << std::setw(13) << pct(r.intra_group_error)
        << std::setw(13) << pct(r.verified_intra_group_error) << std::setw(13)
        << pct(r.verified_error) << "\n";
    return out.str();
}

} // namespace avt
