#pragma once

// The search loop: sample skeletons from the main role, fit and score them,
// reflect on each one, refine the data insight whenever the best score
// improves, and rebuild the prompt for the next iteration.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "drsr/candidate.hpp"
#include "drsr/dataset.hpp"
#include "drsr/expr.hpp"
#include "drsr/fit.hpp"
#include "drsr/ideas.hpp"
#include "drsr/insight.hpp"
#include "drsr/llm.hpp"
#include "drsr/prompts.hpp"

namespace drsr::engine {

struct EngineConfig {
    std::size_t iterations = 1000;
    /// In-context examples shown from the experience buffer.
    std::size_t k = 3;
    /// Completions sampled per iteration.
    std::size_t b = 4;
    double lambda = 0.5;
    std::size_t per_category = 3;
    /// Probability that the main prompt includes the current insight. At 0
    /// no insight is ever requested.
    double insight_probability = 1.0;
    ideas::Toggles toggles;
    std::uint64_t seed = 0;
    std::size_t buffer_capacity = 50;
    /// Also keep non-improving valid candidates in the buffer.
    bool retain_negative = false;
    std::size_t view_size = 100;
    std::size_t valid_rate_window = 40;
    std::optional<double> wall_clock_budget_s;
    /// Adds elapsed_ms to history records (breaks byte-identical replays).
    bool record_timestamps = false;
    llm::Sampling main_sampling = llm::Sampling::defaults_for(llm::Role::main);
    llm::Sampling data_sampling = llm::Sampling::defaults_for(llm::Role::data);
    llm::Sampling idea_sampling = llm::Sampling::defaults_for(llm::Role::idea);
    fit::FitConfig fit;
    expr::Limits limits;

    /// Throws std::invalid_argument.
    void validate() const;
    /// No insight and no ideas: the loop degenerates to plain sampling with examples.
    [[nodiscard]] bool llm_sr_equivalent() const noexcept {
        return insight_probability == 0.0 && !toggles.any();
    }
};

[[nodiscard]] nlohmann::json to_json(const EngineConfig& cfg);
/// Missing fields keep their defaults. Throws std::invalid_argument.
[[nodiscard]] EngineConfig engine_config_from_json(const nlohmann::json& j);

struct BufferEntry {
    std::string expression;
    std::vector<double> params;
    double score = 0.0;
    std::size_t iteration = 0;

    bool operator==(const BufferEntry&) const = default;
};

/// Best-first list of distinct rendered expressions, truncated to capacity.
class ExperienceBuffer {
public:
    explicit ExperienceBuffer(std::size_t capacity = 50);

    /// Returns false if the entry was dropped (duplicate with a score no
    /// better than the stored one, or below the capacity cut).
    bool insert(BufferEntry entry);

    /// Best min(k, size) entries, best first.
    [[nodiscard]] std::vector<BufferEntry> top(std::size_t k) const;
    [[nodiscard]] const std::vector<BufferEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

private:
    std::size_t capacity_;
    std::vector<BufferEntry> entries_;
};

struct BestTracker {
    std::optional<Candidate> f_star;
    double s_star = -std::numeric_limits<double>::infinity();
};

inline constexpr std::string_view kMainSystemPrompt =
    "You are an expert scientist who proposes closed-form equations that explain data.";
inline constexpr std::string_view kExamplesHeader = "## Previously evaluated equations";
inline constexpr std::string_view kInsightHeader = "## Data insight";
inline constexpr std::string_view kIdeasHeader = "## Ideas from previous attempts";

/// Main prompt. Examples are the top min(k, size) buffer entries in
/// ascending score order; the insight section appears iff `p_draw` and an
/// insight exists; the idea section appears iff `sampled` is non-empty.
[[nodiscard]] std::string build_prompt(const prompts::TemplateSet& templates, const data::Dataset& data,
                                       const ExperienceBuffer& buffer, const insight::Insight* insight,
                                       std::span<const ideas::Idea> sampled, std::size_t k, bool p_draw,
                                       const expr::Limits& limits = {});

/// Expression text inside a completion: the first fenced block if any,
/// otherwise the whole text. Within it, the first line that parses wins
/// (after stripping "name =", "return" and trailing ';'); failing that, the
/// first non-empty line. Empty if the completion has no text.
[[nodiscard]] std::string extract_expression(std::string_view completion,
                                             std::span<const std::string> allowed_variables,
                                             const expr::Limits& limits = {});

/// Parse and fit one completion; category is left invalid for failures and
/// negative otherwise (see categorize_candidate). Never throws for bad text.
[[nodiscard]] Candidate prepare_candidate(std::string raw, const data::Dataset& data, const EngineConfig& cfg,
                                          std::uint64_t fit_seed, std::size_t iteration, std::size_t index);

[[nodiscard]] ideas::Outcome outcome_of(const Candidate& c);

/// prepare_candidate followed by categorisation against `s_star`.
[[nodiscard]] Candidate ingest_candidate(std::string raw, const data::Dataset& data, double s_star,
                                         const EngineConfig& cfg, std::uint64_t fit_seed, std::size_t iteration,
                                         std::size_t index);

/// Destination of the run's JSONL streams.
class RunLog {
public:
    virtual ~RunLog() = default;
    virtual void candidate(const std::string& line) = 0;
    virtual void prompt(const nlohmann::json& record) = 0;
    virtual void insight(const nlohmann::json& record) = 0;
};

class MemoryRunLog final : public RunLog {
public:
    void candidate(const std::string& line) override { candidates.push_back(line); }
    void prompt(const nlohmann::json& record) override { prompts.push_back(record.dump()); }
    void insight(const nlohmann::json& record) override { insights.push_back(record.dump()); }

    std::vector<std::string> candidates;
    std::vector<std::string> prompts;
    std::vector<std::string> insights;
};

/// Writes history.jsonl, prompts.jsonl and insights.jsonl in `dir`, flushing
/// after every line so an aborted run leaves a readable prefix.
class JsonlRunLog final : public RunLog {
public:
    explicit JsonlRunLog(const std::filesystem::path& dir);

    void candidate(const std::string& line) override;
    void prompt(const nlohmann::json& record) override;
    void insight(const nlohmann::json& record) override;

private:
    std::ofstream history_;
    std::ofstream prompts_;
    std::ofstream insights_;
};

enum class RunStatus : std::uint8_t { completed, budget_exhausted, aborted };

[[nodiscard]] std::string_view to_string(RunStatus s) noexcept;

struct RunStats {
    std::size_t candidates = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;
    std::size_t invalid = 0;
    std::size_t main_calls = 0;
    std::size_t idea_calls = 0;
    std::size_t idea_failures = 0;
    std::size_t insight_calls = 0;
    std::size_t refinements = 0;
};

struct RunResult {
    BestTracker best;
    /// One JSON line per candidate, identical to what the RunLog received.
    std::vector<std::string> history;
    std::vector<insight::Insight> insights;
    RunStats stats;
    std::size_t iterations_completed = 0;
    RunStatus status = RunStatus::completed;
    std::string error;
    std::optional<llm::BackendErrorKind> error_kind;
};

/// Runs the loop. Candidate-level failures become invalid candidates; a
/// failing main or data role call stops the run with status aborted.
[[nodiscard]] RunResult run(const EngineConfig& cfg, const data::Dataset& data, llm::ChatBackend& backend,
                            const prompts::TemplateSet& templates, ideas::IdeaLibrary& library, RunLog& log);

}  // namespace drsr::engine
