#pragma once

// Evaluation metrics: normalised MSE, relative-error accuracy and the rate
// of valid candidates.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "drsr/candidate.hpp"
#include "drsr/dataset.hpp"
#include "drsr/expected.hpp"
#include "drsr/expr.hpp"

namespace drsr::metrics {

/// Targets with zero variance make NMSE undefined.
class DegenerateTargets : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// sum (p - y)^2 / sum (y - mean(y))^2. Needs equal lengths >= 2. Throws
/// DegenerateTargets when all targets are equal.
[[nodiscard]] double nmse(std::span<const double> predictions, std::span<const double> targets);

/// Fraction of points with |(p - y) / y| <= tau. A zero target is a hit only
/// if the prediction is exactly zero.
[[nodiscard]] double acc_tau(std::span<const double> predictions, std::span<const double> targets, double tau);

/// Fraction of non-invalid entries. Throws std::invalid_argument on an empty window.
[[nodiscard]] double valid_rate(std::span<const Category> window);
[[nodiscard]] double valid_rate(std::span<const Candidate> window);

struct MetricReport {
    double nmse = 0.0;
    double acc_tau = 0.0;
    double tau = 0.1;
    std::size_t n_points = 0;
    data::Split split = data::Split::train;
};

[[nodiscard]] nlohmann::json to_json(const MetricReport& r);

/// Scores (e, params) on one split with the dataset's tau. Returns a message
/// if the split is too small, its targets are constant, or evaluation fails.
[[nodiscard]] Expected<MetricReport, std::string> report(const expr::Expression& e, std::span<const double> params,
                                                         const data::Dataset& data, data::Split split);

}  // namespace drsr::metrics
