#pragma once

// Inductive idea extraction: every evaluated candidate is categorised,
// reflected on by the idea role, and the reflection is stored in a
// persistent three-way library that feeds later prompts.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "drsr/candidate.hpp"
#include "drsr/dataset.hpp"
#include "drsr/expr.hpp"
#include "drsr/fit.hpp"
#include "drsr/llm.hpp"
#include "drsr/prompts.hpp"

namespace drsr::ideas {

using Outcome = std::variant<fit::FitResult, expr::EvalError, expr::ParseError>;

/// Any error is invalid; otherwise positive iff score > s_star (strict).
[[nodiscard]] Category categorize(const Outcome& outcome, double s_star) noexcept;

struct Idea {
    Category category = Category::invalid;
    std::string content;
    std::string context;
    /// Absent for invalid ideas.
    std::optional<double> fitness;
    std::size_t iteration = 0;
    std::uint64_t id = 0;

    bool operator==(const Idea&) const = default;
};

[[nodiscard]] nlohmann::json to_json(const Idea& idea);

struct Toggles {
    bool use_positive = true;
    bool use_negative = true;
    bool use_invalid = true;

    [[nodiscard]] bool uses(Category c) const noexcept;
    [[nodiscard]] bool any() const noexcept { return use_positive || use_negative || use_invalid; }
    bool operator==(const Toggles&) const = default;
};

/// Append-only store with one list per category. When a path is set every
/// add() rewrites the JSON file.
class IdeaLibrary {
public:
    IdeaLibrary() = default;
    explicit IdeaLibrary(std::filesystem::path path) : path_(std::move(path)) {}

    IdeaLibrary(const IdeaLibrary& other);
    IdeaLibrary& operator=(const IdeaLibrary& other);

    /// Reads `path` if it exists, otherwise starts empty; later adds persist
    /// to `path`. Throws std::runtime_error on a malformed file.
    static IdeaLibrary open(const std::filesystem::path& path);

    /// Assigns the next id, appends, flushes. Returns the stored idea.
    Idea add(Idea idea);

    [[nodiscard]] std::vector<Idea> entries(Category c) const;
    [[nodiscard]] std::size_t size(Category c) const;
    [[nodiscard]] std::size_t total() const;
    [[nodiscard]] std::uint64_t next_id() const;
    [[nodiscard]] const std::optional<std::filesystem::path>& path() const noexcept { return path_; }

    [[nodiscard]] nlohmann::json to_json() const;
    /// Throws std::runtime_error on a schema violation.
    static IdeaLibrary from_json(const nlohmann::json& j);

    void flush() const;

    bool operator==(const IdeaLibrary& other) const;

private:
    [[nodiscard]] nlohmann::json to_json_locked() const;
    std::vector<Idea>& list(Category c);
    [[nodiscard]] const std::vector<Idea>& list(Category c) const;

    std::vector<Idea> positive_;
    std::vector<Idea> negative_;
    std::vector<Idea> invalid_;
    std::uint64_t next_id_ = 0;
    std::optional<std::filesystem::path> path_;
    mutable std::mutex mu_;
};

/// Size of the recency pool: ceil(lambda * len), computed so that exact
/// products such as 0.3 * 10 are not rounded up by representation error.
[[nodiscard]] std::size_t recent_pool_size(std::size_t len, double lambda);

/// Up to `per_category` ideas from the last recent_pool_size() entries of
/// each enabled category, drawn without replacement. Result is ordered by
/// category (positive, negative, invalid), then by id.
[[nodiscard]] std::vector<Idea> sample_recent(const IdeaLibrary& lib, double lambda, std::size_t per_category,
                                              std::uint64_t seed, const Toggles& toggles = {});

inline constexpr std::string_view kIdeaSystemPrompt =
    "You distil short, reusable lessons from attempts at discovering equations.";

struct Extraction {
    Idea idea;
    std::string prompt;
};

/// Text stored as the idea's context: the candidate and its score or error.
[[nodiscard]] std::string candidate_context(const Candidate& c);

/// Asks the idea role to reflect on `c`. `best_score` is s* at the time the
/// candidate was judged. Throws BackendError.
[[nodiscard]] Extraction extract(const Candidate& c, Category category, const std::string& prompt_state,
                                 double best_score, const data::Dataset& data, llm::ChatBackend& backend,
                                 const prompts::TemplateSet& templates,
                                 const llm::Sampling& sampling = llm::Sampling::defaults_for(llm::Role::idea));

}  // namespace drsr::ideas
