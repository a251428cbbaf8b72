#include "drsr/fit.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "drsr/util.hpp"

namespace drsr::fit {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double inf_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

struct LocalResult {
    std::vector<double> x;
    double fx = kInf;
    bool converged = false;
};

// Dense inverse-Hessian BFGS with Armijo backtracking.
LocalResult bfgs(Objective& f, std::vector<double> x, const FitConfig& cfg) {
    const std::size_t n = x.size();
    LocalResult out;
    double fx = f(x);
    if (!std::isfinite(fx)) {
        out.x = std::move(x);
        return out;
    }
    std::vector<double> g(n), gn(n), p(n), xn(n), s(n), yv(n), hy(n);
    f.gradient(x, cfg.grad_step, g);
    std::vector<double> H(n * n, 0.0);
    auto reset_h = [&] {
        std::fill(H.begin(), H.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) H[i * n + i] = 1.0;
    };
    reset_h();
    bool scaled = false;
    bool converged = false;

    for (std::size_t it = 0; it < cfg.max_iters_per_restart; ++it) {
        if (fx == 0.0 || inf_norm(g) < cfg.tolerance) {
            converged = true;
            break;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc -= H[i * n + j] * g[j];
            p[i] = acc;
        }
        double slope = dot(g, p);
        if (!(slope < 0.0)) {
            reset_h();
            for (std::size_t i = 0; i < n; ++i) p[i] = -g[i];
            slope = dot(g, p);
        }

        double alpha = 1.0;
        double fn = kInf;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + alpha * p[i];
            fn = f(xn);
            if (std::isfinite(fn) && fn <= fx + 1e-4 * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            if (scaled || H[0] != 1.0) {
                reset_h();
                scaled = false;
                continue;
            }
            // No descent along the steepest direction: numerically stationary.
            converged = true;
            break;
        }

        f.gradient(xn, cfg.grad_step, gn);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = xn[i] - x[i];
            yv[i] = gn[i] - g[i];
        }
        const double sy = dot(s, yv);
        const double yy = dot(yv, yv);
        if (!scaled && sy > 0.0 && yy > 0.0) {
            reset_h();
            for (std::size_t i = 0; i < n; ++i) H[i * n + i] = sy / yy;
            scaled = true;
        }
        if (sy > 1e-12 * std::sqrt(dot(s, s) * yy)) {
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) acc += H[i * n + j] * yv[j];
                hy[i] = acc;
            }
            const double yhy = dot(yv, hy);
            const double rho = 1.0 / sy;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    H[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        const double drop = fx - fn;
        x.swap(xn);
        g.swap(gn);
        fx = fn;
        if (drop <= 1e-15 * std::fabs(fx) && inf_norm(s) <= 1e-15 * std::max(1.0, inf_norm(x))) {
            converged = true;
            break;
        }
    }
    if (!converged && (fx == 0.0 || inf_norm(g) < cfg.tolerance)) converged = true;
    out.x = std::move(x);
    out.fx = fx;
    out.converged = converged;
    return out;
}

}  // namespace

void FitConfig::validate() const {
    if (restarts == 0) throw std::invalid_argument("fit.restarts must be positive");
    if (max_iters_per_restart == 0) throw std::invalid_argument("fit.max_iters_per_restart must be positive");
    if (!(grad_step > 0.0) || !std::isfinite(grad_step)) throw std::invalid_argument("fit.grad_step must be positive");
    if (!(tolerance > 0.0) || !std::isfinite(tolerance)) throw std::invalid_argument("fit.tolerance must be positive");
    if (init == InitDistribution::user_supplied && initial_points.empty())
        throw std::invalid_argument("fit.init = user_supplied requires initial_points");
}

nlohmann::json to_json(const FitConfig& cfg) {
    nlohmann::json j{{"restarts", cfg.restarts},
                     {"max_iters_per_restart", cfg.max_iters_per_restart},
                     {"grad_step", cfg.grad_step},
                     {"tolerance", cfg.tolerance},
                     {"init", cfg.init == InitDistribution::standard_normal ? "standard_normal" : "user_supplied"}};
    if (!cfg.initial_points.empty()) j["initial_points"] = cfg.initial_points;
    return j;
}

FitConfig fit_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("fit config must be a JSON object");
    FitConfig c;
    try {
        c.restarts = j.value("restarts", c.restarts);
        c.max_iters_per_restart = j.value("max_iters_per_restart", c.max_iters_per_restart);
        c.grad_step = j.value("grad_step", c.grad_step);
        c.tolerance = j.value("tolerance", c.tolerance);
        const auto init = j.value("init", std::string("standard_normal"));
        if (init == "standard_normal") {
            c.init = InitDistribution::standard_normal;
        } else if (init == "user_supplied") {
            c.init = InitDistribution::user_supplied;
        } else {
            throw std::invalid_argument("fit.init must be standard_normal or user_supplied");
        }
        if (j.contains("initial_points")) c.initial_points = j.at("initial_points").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("fit config: ") + e.what());
    }
    c.validate();
    return c;
}

Objective::Objective(const expr::Expression& e, const Matrix& inputs, std::span<const double> targets,
                     std::span<const std::string> variable_order)
    : e_(&e),
      inputs_(&inputs),
      targets_(targets),
      columns_(expr::bind_columns(e, variable_order)),
      pred_(inputs.rows()),
      probe_(e.param_count()) {
    if (targets.size() != inputs.rows()) throw std::invalid_argument("fit: target length does not match row count");
    if (inputs.rows() == 0) throw std::invalid_argument("fit: no rows to fit");
    if (inputs.cols() != variable_order.size())
        throw std::invalid_argument("fit: input column count does not match variable order");
}

double Objective::operator()(std::span<const double> params) {
    ++evals_;
    if (auto err = expr::evaluate_bound(*e_, params, *inputs_, columns_, pred_)) {
        last_error_ = std::move(*err);
        return kInf;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pred_.size(); ++i) {
        const double r = pred_[i] - targets_[i];
        acc += r * r;
    }
    const double mse = acc / static_cast<double>(pred_.size());
    if (!std::isfinite(mse)) {
        last_error_ = expr::EvalError{expr::EvalErrorKind::overflow, 0, "mse", "squared error overflowed"};
        return kInf;
    }
    return mse;
}

void Objective::gradient(std::span<const double> params, double grad_step, std::span<double> out) {
    probe_.assign(params.begin(), params.end());
    for (std::size_t j = 0; j < params.size(); ++j) {
        const double h = grad_step * std::max(1.0, std::fabs(params[j]));
        probe_[j] = params[j] + h;
        const double up = (*this)(probe_);
        probe_[j] = params[j] - h;
        const double down = (*this)(probe_);
        probe_[j] = params[j];
        const double d = (up - down) / (2.0 * h);
        // A one-sided infinity pushes away from the failing side.
        out[j] = std::isfinite(d) ? d : (std::isfinite(up) ? -1.0 : (std::isfinite(down) ? 1.0 : 0.0)) * 1e6;
    }
}

Expected<FitResult, expr::EvalError> fit(const expr::Expression& e, const Matrix& inputs,
                                         std::span<const double> targets,
                                         std::span<const std::string> variable_order, const FitConfig& cfg,
                                         std::uint64_t seed) {
    cfg.validate();
    Objective objective(e, inputs, targets, variable_order);
    const std::size_t n = e.param_count();

    if (n == 0) {
        const double mse = objective({});
        if (!std::isfinite(mse)) return *objective.last_error();
        return FitResult{{}, -mse, mse, true, 1, objective.evals()};
    }

    FitResult best;
    bool have = false;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
        std::vector<double> start;
        if (cfg.init == InitDistribution::user_supplied && r < cfg.initial_points.size()) {
            start = cfg.initial_points[r];
            if (start.size() != n)
                throw std::invalid_argument("fit: initial point " + std::to_string(r) + " has " +
                                            std::to_string(start.size()) + " values, skeleton needs " +
                                            std::to_string(n));
        } else {
            Rng rng(derive_seed(seed, {r}));
            std::normal_distribution<double> normal(0.0, 1.0);
            start.resize(n);
            for (auto& v : start) v = normal(rng);
        }
        auto local = bfgs(objective, std::move(start), cfg);
        if (!std::isfinite(local.fx)) continue;
        if (!have || local.fx < best.mse) {
            best.params = std::move(local.x);
            best.mse = local.fx;
            best.converged = local.converged;
            have = true;
        }
    }
    if (!have) {
        if (objective.last_error()) return *objective.last_error();
        return expr::EvalError{expr::EvalErrorKind::non_finite, 0, "fit", "objective was non-finite at every start"};
    }
    best.score = -best.mse;
    best.restarts_used = cfg.restarts;
    best.evals = objective.evals();
    return best;
}

Expected<FitResult, expr::EvalError> fit(const expr::Expression& e, const data::Dataset& data, const FitConfig& cfg,
                                         std::uint64_t seed) {
    const auto train = data.split(data::Split::train);
    const auto names = data.variable_names();
    return fit(e, train.X, train.y, names, cfg, seed);
}

Expected<double, expr::EvalError> score(const expr::Expression& e, std::span<const double> params,
                                        const Matrix& inputs, std::span<const double> targets,
                                        std::span<const std::string> variable_order) {
    if (targets.size() != inputs.rows()) throw std::invalid_argument("score: target length does not match row count");
    if (targets.empty()) throw std::invalid_argument("score: no rows");
    auto pred = expr::evaluate(e, params, inputs, variable_order);
    if (!pred) return pred.error();
    double acc = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double r = (*pred)[i] - targets[i];
        acc += r * r;
    }
    const double mse = acc / static_cast<double>(targets.size());
    if (!std::isfinite(mse)) return expr::EvalError{expr::EvalErrorKind::overflow, 0, "mse", "squared error overflowed"};
    return -mse;
}

Expected<double, expr::EvalError> score(const expr::Expression& e, std::span<const double> params,
                                        const data::Dataset& data, data::Split split) {
    const auto rows = data.split(split);
    const auto names = data.variable_names();
    return score(e, params, rows.X, rows.y, names);
}

}  // namespace drsr::fit
