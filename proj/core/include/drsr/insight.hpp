#pragma once

// Data-aware insight: a free-text structural analysis of the data written
// by the data role, first from a plain sample of rows and later from rows
// annotated with the residuals of the current best equation.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drsr/candidate.hpp"
#include "drsr/dataset.hpp"
#include "drsr/llm.hpp"
#include "drsr/prompts.hpp"

namespace drsr::insight {

struct Insight {
    std::string content;
    std::size_t iteration = 0;
    /// Score of the candidate that triggered the refinement; empty for version 0.
    std::optional<double> trigger_score;
    std::size_t version = 0;
    std::uint64_t source_view_seed = 0;

    bool operator==(const Insight&) const = default;
};

[[nodiscard]] nlohmann::json to_json(const Insight& i);

/// Result of one data-role call, with the exact prompt that was sent.
struct InsightCall {
    Insight insight;
    std::string prompt;
    data::ResampledView view;
};

struct InsightOptions {
    std::size_t view_size = 100;
    llm::Sampling sampling = llm::Sampling::defaults_for(llm::Role::data);
};

inline constexpr std::string_view kDataSystemPrompt =
    "You are a careful data analyst who describes structure in scientific data.";

/// Fixed-width table with a header row; values use 6 significant digits.
/// Adds a "residual" column when the view carries residuals.
[[nodiscard]] std::string render_rows(const data::Dataset& data, const data::ResampledView& view);

/// One-paragraph description of the problem, variables and units.
[[nodiscard]] std::string describe_dataset(const data::Dataset& data);

/// y - f(x) on train rows; NaN on every other row (length = data.size()).
/// Throws std::logic_error if f fails to evaluate on the train split.
[[nodiscard]] std::vector<double> train_residuals(const expr::Expression& e, std::span<const double> params,
                                                  const data::Dataset& data);

/// Builds the first insight from a uniform sample of train rows. An empty
/// completion is retried once before failing with BackendError(malformed).
[[nodiscard]] InsightCall initial_insight(const data::Dataset& data, llm::ChatBackend& backend,
                                          const prompts::TemplateSet& templates, std::uint64_t seed,
                                          const InsightOptions& options = {});

/// Refines `prev` using the residuals of `f_star` (which must be valid).
[[nodiscard]] InsightCall refine_insight(const Candidate& f_star, const data::Dataset& data, const Insight& prev,
                                         llm::ChatBackend& backend, const prompts::TemplateSet& templates,
                                         std::uint64_t seed, std::size_t iteration,
                                         const InsightOptions& options = {});

}  // namespace drsr::insight
