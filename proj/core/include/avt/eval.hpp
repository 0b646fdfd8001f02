#pragma once

#include "avt/bounds.hpp"
#include "avt/data.hpp"
#include "avt/groups.hpp"
#include "avt/ndt.hpp"
#include "avt/network.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace avt {

// Anything that maps an input to a class: a flat network (argmax of logits)
// or a routing tree.
using Predictor = std::variant<const Network*, const Ndt*>;

int predict_class(const Predictor& p, const Tensor& x);

double clean_error(const Predictor& p, const Dataset& ds);

// Fraction of samples whose predicted group differs from the true group.
double inter_group_error(const Predictor& p, const Dataset& ds, const GroupPartition& partition);

// Fraction of samples with a non-positive worst-case out-group margin at eps.
double verified_inter_group_error(const Network& net, const Dataset& ds,
                                  const GroupPartition& partition, double eps);

// Restricted argmax within the true label's group (ties count as errors).
double intra_group_error(const Predictor& p, const Dataset& ds, const GroupPartition& partition);

double verified_intra_group_error(const Network& net, const Dataset& ds,
                                  const GroupPartition& partition, double eps_inner);

// Fraction of samples not certified under the standard spec at eps.
double verified_error(const Network& net, const Dataset& ds, double eps);

// counts[y][pred]
std::vector<std::vector<std::int64_t>> confusion(const Predictor& p, const Dataset& ds);

// Root certification failure rate of a routing tree (the tree analogue of
// verified inter-group error).
double ndt_root_verified_error(const Ndt& ndt, const Dataset& ds, double eps);

struct MetricsReport {
    double clean_error = 0.0;
    std::optional<double> inter_group_error;
    std::optional<double> verified_inter_group_error;
    std::optional<double> intra_group_error;
    std::optional<double> verified_intra_group_error;
    std::optional<double> verified_error;
    std::vector<std::vector<std::int64_t>> confusion;
    double eps = 0.0;
    std::optional<double> eps_intra;
    std::string dataset;
    std::string model_id;
    std::vector<std::vector<int>> partition_groups;
};

// Full report for a flat network; intra metrics use eps_intra when given,
// otherwise eps.
MetricsReport evaluate_network(const Network& net, const Dataset& ds,
                               const GroupPartition* partition, double eps,
                               std::optional<double> eps_intra = std::nullopt);

// Tree report: verified rates come from root certification.
MetricsReport evaluate_ndt(const Ndt& ndt, const Dataset& ds, double eps);

std::string report_to_json_text(const MetricsReport& r);
MetricsReport report_from_json_text(const std::string& text);
// Aligned one-row table matching the report's columns.
std::string report_to_table(const MetricsReport& r);

} // namespace avt
