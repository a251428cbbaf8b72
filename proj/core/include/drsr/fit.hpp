#pragma once

// Parameter fitting for equation skeletons: BFGS on the mean squared error
// with central-difference gradients and seeded multi-restart.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drsr/dataset.hpp"
#include "drsr/expected.hpp"
#include "drsr/expr.hpp"
#include "drsr/matrix.hpp"

namespace drsr::fit {

enum class InitDistribution : std::uint8_t { standard_normal, user_supplied };

struct FitConfig {
    std::size_t restarts = 5;
    std::size_t max_iters_per_restart = 200;
    /// Relative finite-difference step; coordinate j uses grad_step * max(1, |theta_j|).
    double grad_step = std::sqrt(std::numeric_limits<double>::epsilon());
    InitDistribution init = InitDistribution::standard_normal;
    /// user_supplied only: one start point per restart (restarts beyond the
    /// list fall back to standard normal draws).
    std::vector<std::vector<double>> initial_points;
    /// Stop when the infinity norm of the gradient drops below this.
    double tolerance = 1e-9;

    /// Throws std::invalid_argument.
    void validate() const;
};

[[nodiscard]] nlohmann::json to_json(const FitConfig& cfg);
/// Missing fields keep their defaults. Throws std::invalid_argument.
[[nodiscard]] FitConfig fit_config_from_json(const nlohmann::json& j);

struct FitResult {
    std::vector<double> params;
    double score = 0.0;
    double mse = 0.0;
    bool converged = false;
    std::size_t restarts_used = 0;
    std::size_t evals = 0;

    bool operator==(const FitResult&) const = default;
};

/// Mean squared error of one skeleton on a fixed design matrix. Non-finite
/// or failing evaluations yield +infinity; the last failure is kept.
class Objective {
public:
    Objective(const expr::Expression& e, const Matrix& inputs, std::span<const double> targets,
              std::span<const std::string> variable_order);

    double operator()(std::span<const double> params);

    /// Central differences with step grad_step * max(1, |theta_j|).
    void gradient(std::span<const double> params, double grad_step, std::span<double> out);

    [[nodiscard]] std::size_t evals() const noexcept { return evals_; }
    [[nodiscard]] const std::optional<expr::EvalError>& last_error() const noexcept { return last_error_; }

private:
    const expr::Expression* e_;
    const Matrix* inputs_;
    std::span<const double> targets_;
    std::vector<std::size_t> columns_;
    std::vector<double> pred_;
    std::vector<double> probe_;
    std::size_t evals_ = 0;
    std::optional<expr::EvalError> last_error_;
};

/// Fits `e` to (inputs, targets). Returns the lowest-mse result across
/// restarts; restart r is seeded by derive_seed(seed, {r}), so adding
/// restarts never worsens the result. EvalError when every restart stays
/// non-finite.
[[nodiscard]] Expected<FitResult, expr::EvalError> fit(const expr::Expression& e, const Matrix& inputs,
                                                       std::span<const double> targets,
                                                       std::span<const std::string> variable_order,
                                                       const FitConfig& cfg, std::uint64_t seed);

/// Fits on the train split of `data`.
[[nodiscard]] Expected<FitResult, expr::EvalError> fit(const expr::Expression& e, const data::Dataset& data,
                                                       const FitConfig& cfg, std::uint64_t seed);

/// Negative mean squared error of `e` with `params` on the given rows.
[[nodiscard]] Expected<double, expr::EvalError> score(const expr::Expression& e, std::span<const double> params,
                                                      const Matrix& inputs, std::span<const double> targets,
                                                      std::span<const std::string> variable_order);

[[nodiscard]] Expected<double, expr::EvalError> score(const expr::Expression& e, std::span<const double> params,
                                                      const data::Dataset& data,
                                                      data::Split split = data::Split::train);

}  // namespace drsr::fit
