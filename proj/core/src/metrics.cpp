#include "drsr/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace drsr::metrics {

double nmse(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size()) throw std::invalid_argument("nmse: length mismatch");
    if (targets.size() < 2) throw std::invalid_argument("nmse: need at least two points");
    double mean = 0.0;
    for (double y : targets) mean += y;
    mean /= static_cast<double>(targets.size());
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double r = predictions[i] - targets[i];
        const double d = targets[i] - mean;
        num += r * r;
        den += d * d;
    }
    if (den == 0.0) throw DegenerateTargets("nmse: targets have zero variance");
    return num / den;
}

double acc_tau(std::span<const double> predictions, std::span<const double> targets, double tau) {
    if (predictions.size() != targets.size()) throw std::invalid_argument("acc_tau: length mismatch");
    if (targets.empty()) throw std::invalid_argument("acc_tau: no points");
    if (!(tau > 0.0)) throw std::invalid_argument("acc_tau: tau must be positive");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] == 0.0) {
            hits += predictions[i] == 0.0 ? 1 : 0;
        } else {
            hits += std::fabs((predictions[i] - targets[i]) / targets[i]) <= tau ? 1 : 0;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(targets.size());
}

double valid_rate(std::span<const Category> window) {
    if (window.empty()) throw std::invalid_argument("valid_rate: empty window");
    const auto valid = std::count_if(window.begin(), window.end(), [](Category c) { return c != Category::invalid; });
    return static_cast<double>(valid) / static_cast<double>(window.size());
}

double valid_rate(std::span<const Candidate> window) {
    if (window.empty()) throw std::invalid_argument("valid_rate: empty window");
    const auto valid =
        std::count_if(window.begin(), window.end(), [](const Candidate& c) { return c.category != Category::invalid; });
    return static_cast<double>(valid) / static_cast<double>(window.size());
}

nlohmann::json to_json(const MetricReport& r) {
    return {{"split", std::string(data::to_string(r.split))},
            {"nmse", r.nmse},
            {"acc_tau", r.acc_tau},
            {"tau", r.tau},
            {"n_points", r.n_points}};
}

Expected<MetricReport, std::string> report(const expr::Expression& e, std::span<const double> params,
                                           const data::Dataset& data, data::Split split) {
    const auto rows = data.split(split);
    if (rows.y.size() < 2) return std::string("split ") + std::string(data::to_string(split)) + " has fewer than two rows";
    const auto names = data.variable_names();
    auto pred = expr::evaluate(e, params, rows.X, names);
    if (!pred) return pred.error().describe();
    MetricReport r;
    r.split = split;
    r.tau = data.acc_tau;
    r.n_points = rows.y.size();
    try {
        r.nmse = nmse(*pred, rows.y);
    } catch (const DegenerateTargets& ex) {
        return std::string(ex.what());
    }
    r.acc_tau = acc_tau(*pred, rows.y, r.tau);
    return r;
}

}  // namespace drsr::metrics
