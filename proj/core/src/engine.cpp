#include "drsr/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <future>
#include <iostream>
#include <random>
#include <stdexcept>

#include "drsr/metrics.hpp"
#include "drsr/util.hpp"

namespace drsr::engine {

namespace {

// Seed-stream tags.
constexpr std::uint64_t kTagFit = 1;
constexpr std::uint64_t kTagInsight = 2;
constexpr std::uint64_t kTagBernoulli = 3;
constexpr std::uint64_t kTagIdeas = 4;

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        out.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

std::string clean_line(std::string_view line) {
    auto s = trim(line);
    while (!s.empty() && s.front() == '`') s.remove_prefix(1);
    while (!s.empty() && (s.back() == '`' || s.back() == ';')) s.remove_suffix(1);
    s = trim(s);
    if (s.starts_with("return ")) s = trim(s.substr(7));
    if (auto eq = s.rfind('='); eq != std::string_view::npos) s = trim(s.substr(eq + 1));
    return std::string(s);
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

std::string indent_continuation(std::string_view text) {
    std::string out;
    for (char ch : trim(text)) {
        out += ch;
        if (ch == '\n') out += "  ";
    }
    return out;
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void EngineConfig::validate() const {
    if (k == 0) throw std::invalid_argument("engine.k must be positive");
    if (b == 0) throw std::invalid_argument("engine.b must be positive");
    if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("engine.lambda must lie in (0, 1]");
    if (!(insight_probability >= 0.0 && insight_probability <= 1.0))
        throw std::invalid_argument("engine.insight_probability must lie in [0, 1]");
    if (buffer_capacity == 0) throw std::invalid_argument("engine.buffer_capacity must be positive");
    if (view_size == 0) throw std::invalid_argument("engine.view_size must be positive");
    if (valid_rate_window == 0) throw std::invalid_argument("engine.valid_rate_window must be positive");
    if (wall_clock_budget_s && !(*wall_clock_budget_s > 0.0))
        throw std::invalid_argument("engine.wall_clock_budget_s must be positive");
    if (limits.max_depth == 0 || limits.max_nodes == 0)
        throw std::invalid_argument("engine.limits must be positive");
    fit.validate();
}

nlohmann::json to_json(const EngineConfig& c) {
    nlohmann::json j{
        {"iterations", c.iterations},
        {"k", c.k},
        {"b", c.b},
        {"lambda", c.lambda},
        {"per_category", c.per_category},
        {"insight_probability", c.insight_probability},
        {"toggles",
         {{"use_positive", c.toggles.use_positive},
          {"use_negative", c.toggles.use_negative},
          {"use_invalid", c.toggles.use_invalid}}},
        {"seed", c.seed},
        {"buffer_capacity", c.buffer_capacity},
        {"retain_negative", c.retain_negative},
        {"view_size", c.view_size},
        {"valid_rate_window", c.valid_rate_window},
        {"wall_clock_budget_s", c.wall_clock_budget_s ? nlohmann::json(*c.wall_clock_budget_s) : nlohmann::json(nullptr)},
        {"record_timestamps", c.record_timestamps},
        {"sampling",
         {{"main", llm::to_json(c.main_sampling)},
          {"data", llm::to_json(c.data_sampling)},
          {"idea", llm::to_json(c.idea_sampling)}}},
        {"fit", fit::to_json(c.fit)},
        {"limits", {{"max_depth", c.limits.max_depth}, {"max_nodes", c.limits.max_nodes}, {"max_params", c.limits.max_params}}},
    };
    return j;
}

EngineConfig engine_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("engine config must be a JSON object");
    EngineConfig c;
    try {
        read_field(j, "iterations", c.iterations);
        read_field(j, "k", c.k);
        read_field(j, "b", c.b);
        read_field(j, "lambda", c.lambda);
        read_field(j, "per_category", c.per_category);
        read_field(j, "insight_probability", c.insight_probability);
        read_field(j, "seed", c.seed);
        read_field(j, "buffer_capacity", c.buffer_capacity);
        read_field(j, "retain_negative", c.retain_negative);
        read_field(j, "view_size", c.view_size);
        read_field(j, "valid_rate_window", c.valid_rate_window);
        read_field(j, "record_timestamps", c.record_timestamps);
        if (j.contains("wall_clock_budget_s") && !j.at("wall_clock_budget_s").is_null())
            c.wall_clock_budget_s = j.at("wall_clock_budget_s").get<double>();
        if (j.contains("toggles")) {
            const auto& t = j.at("toggles");
            read_field(t, "use_positive", c.toggles.use_positive);
            read_field(t, "use_negative", c.toggles.use_negative);
            read_field(t, "use_invalid", c.toggles.use_invalid);
        }
        if (j.contains("sampling")) {
            const auto& s = j.at("sampling");
            if (s.contains("main")) c.main_sampling = llm::sampling_from_json(s.at("main"), c.main_sampling);
            if (s.contains("data")) c.data_sampling = llm::sampling_from_json(s.at("data"), c.data_sampling);
            if (s.contains("idea")) c.idea_sampling = llm::sampling_from_json(s.at("idea"), c.idea_sampling);
        }
        if (j.contains("fit")) c.fit = fit::fit_config_from_json(j.at("fit"));
        if (j.contains("limits")) {
            const auto& l = j.at("limits");
            read_field(l, "max_depth", c.limits.max_depth);
            read_field(l, "max_nodes", c.limits.max_nodes);
            read_field(l, "max_params", c.limits.max_params);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("engine config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Buffer

ExperienceBuffer::ExperienceBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("ExperienceBuffer capacity must be positive");
}

bool ExperienceBuffer::insert(BufferEntry entry) {
    auto same = std::find_if(entries_.begin(), entries_.end(),
                             [&](const BufferEntry& e) { return e.expression == entry.expression; });
    if (same != entries_.end()) {
        if (!(entry.score > same->score)) return false;
        entries_.erase(same);
    }
    // Stable: equal scores keep insertion order.
    auto pos = std::find_if(entries_.begin(), entries_.end(), [&](const BufferEntry& e) { return e.score < entry.score; });
    if (static_cast<std::size_t>(pos - entries_.begin()) >= capacity_) return false;
    entries_.insert(pos, std::move(entry));
    if (entries_.size() > capacity_) entries_.pop_back();
    return true;
}

std::vector<BufferEntry> ExperienceBuffer::top(std::size_t k) const {
    return {entries_.begin(), entries_.begin() + static_cast<std::ptrdiff_t>(std::min(k, entries_.size()))};
}

// ---------------------------------------------------------------------------
// Prompt

std::string build_prompt(const prompts::TemplateSet& templates, const data::Dataset& data,
                         const ExperienceBuffer& buffer, const insight::Insight* insight,
                         std::span<const ideas::Idea> sampled, std::size_t k, bool p_draw,
                         const expr::Limits& limits) {
    if (k == 0) throw std::invalid_argument("build_prompt: k must be positive");
    std::string variables;
    for (const auto& v : data.variables) {
        variables += "- " + v.name;
        if (!v.description.empty()) variables += ": " + v.description;
        if (!v.unit.empty()) variables += " [" + v.unit + "]";
        variables += '\n';
    }

    std::string examples;
    auto best = buffer.top(k);
    if (!best.empty()) {
        examples += "\n" + std::string(kExamplesHeader) + "\n";
        examples += "Each equation is shown with its score (higher is better); the best one is last.\n";
        for (auto it = best.rbegin(); it != best.rend(); ++it) {
            examples += "\nscore: " + format_double(it->score) + "\n```\n" + it->expression + "\n```\n";
        }
    }

    std::string insight_section;
    if (p_draw && insight != nullptr) {
        insight_section = "\n" + std::string(kInsightHeader) + "\n" + std::string(trim(insight->content)) + "\n";
    }

    std::string idea_section;
    if (!sampled.empty()) {
        idea_section = "\n" + std::string(kIdeasHeader) + "\n";
        const std::pair<Category, const char*> groups[] = {
            {Category::positive, "Patterns that improved the fit:"},
            {Category::negative, "Patterns that did not help:"},
            {Category::invalid, "Mistakes that made answers unusable:"},
        };
        for (const auto& [cat, title] : groups) {
            bool opened = false;
            for (const auto& idea : sampled) {
                if (idea.category != cat) continue;
                if (!opened) {
                    idea_section += std::string(title) + "\n";
                    opened = true;
                }
                idea_section += "- " + indent_continuation(idea.content) + "\n";
            }
        }
    }

    return prompts::render(templates.get("main"), {{"dataset_description", insight::describe_dataset(data)},
                                                    {"variables", variables},
                                                    {"target", data.target.name},
                                                    {"max_params", std::to_string(limits.max_params)},
                                                    {"grammar", std::string(expr::grammar_reference())},
                                                    {"examples_section", examples},
                                                    {"insight_section", insight_section},
                                                    {"ideas_section", idea_section}});
}

// ---------------------------------------------------------------------------
// Candidates

std::string extract_expression(std::string_view completion, std::span<const std::string> allowed_variables,
                               const expr::Limits& limits) {
    std::string_view body = completion;
    if (auto open = completion.find("```"); open != std::string_view::npos) {
        auto start = completion.find('\n', open);
        if (start != std::string_view::npos) {
            auto close = completion.find("```", start + 1);
            body = completion.substr(start + 1, close == std::string_view::npos ? std::string_view::npos
                                                                                : close - start - 1);
        } else {
            body = completion.substr(open + 3);
        }
    }
    std::string first_non_empty;
    for (auto line : lines_of(body)) {
        auto cleaned = clean_line(line);
        if (cleaned.empty()) continue;
        if (first_non_empty.empty()) first_non_empty = cleaned;
        if (expr::parse(cleaned, allowed_variables, limits)) return cleaned;
    }
    return first_non_empty;
}

Candidate prepare_candidate(std::string raw, const data::Dataset& data, const EngineConfig& cfg,
                            std::uint64_t fit_seed, std::size_t iteration, std::size_t index) {
    Candidate c;
    c.iteration = iteration;
    c.index = index;
    c.category = Category::invalid;
    const auto names = data.variable_names();
    c.extracted = extract_expression(raw, names, cfg.limits);
    c.raw_completion = std::move(raw);
    if (c.extracted.empty()) {
        c.error = expr::ParseError{0, expr::ParseErrorKind::syntax, "no expression found in the completion"}.describe();
        return c;
    }
    auto parsed = expr::parse(c.extracted, names, cfg.limits);
    if (!parsed) {
        c.error = parsed.error().describe();
        return c;
    }
    c.expression = *parsed;
    auto fitted = fit::fit(*c.expression, data, cfg.fit, fit_seed);
    if (!fitted) {
        c.error = fitted.error().describe();
        return c;
    }
    c.fit = std::move(fitted).value();
    c.category = Category::negative;
    return c;
}

ideas::Outcome outcome_of(const Candidate& c) {
    if (c.fit) return *c.fit;
    if (c.expression) return expr::EvalError{expr::EvalErrorKind::non_finite, 0, "fit", c.error};
    return expr::ParseError{0, expr::ParseErrorKind::syntax, c.error};
}

Candidate ingest_candidate(std::string raw, const data::Dataset& data, double s_star, const EngineConfig& cfg,
                           std::uint64_t fit_seed, std::size_t iteration, std::size_t index) {
    auto c = prepare_candidate(std::move(raw), data, cfg, fit_seed, iteration, index);
    c.category = ideas::categorize(outcome_of(c), s_star);
    return c;
}

// ---------------------------------------------------------------------------
// Logs

JsonlRunLog::JsonlRunLog(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    history_.open(dir / "history.jsonl", std::ios::binary | std::ios::trunc);
    prompts_.open(dir / "prompts.jsonl", std::ios::binary | std::ios::trunc);
    insights_.open(dir / "insights.jsonl", std::ios::binary | std::ios::trunc);
    if (!history_ || !prompts_ || !insights_) throw std::runtime_error("cannot create run logs in " + dir.string());
}

void JsonlRunLog::candidate(const std::string& line) { history_ << line << '\n' << std::flush; }
void JsonlRunLog::prompt(const nlohmann::json& record) { prompts_ << record.dump() << '\n' << std::flush; }
void JsonlRunLog::insight(const nlohmann::json& record) { insights_ << record.dump() << '\n' << std::flush; }

std::string_view to_string(RunStatus s) noexcept {
    switch (s) {
        case RunStatus::completed: return "completed";
        case RunStatus::budget_exhausted: return "budget_exhausted";
        case RunStatus::aborted: return "aborted";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Loop

RunResult run(const EngineConfig& cfg, const data::Dataset& data, llm::ChatBackend& backend,
              const prompts::TemplateSet& templates, ideas::IdeaLibrary& library, RunLog& log) {
    cfg.validate();
    data.validate();
    RunResult result;
    if (cfg.iterations == 0) return result;

    const auto started = std::chrono::steady_clock::now();
    auto elapsed_s = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    };
    const insight::InsightOptions data_options{cfg.view_size, cfg.data_sampling};
    const bool insight_enabled = cfg.insight_probability > 0.0;

    auto abort_with = [&](const llm::BackendError& e) {
        result.status = RunStatus::aborted;
        result.error = e.what();
        result.error_kind = e.kind();
    };
    auto log_insight = [&](const insight::InsightCall& call) {
        result.insights.push_back(call.insight);
        ++result.stats.insight_calls;
        log.prompt({{"iteration", call.insight.iteration}, {"role", "data"}, {"kind", call.insight.version == 0 ? "insight_initial" : "insight_refine"}, {"prompt", call.prompt}});
        log.insight(insight::to_json(call.insight));
    };

    std::optional<insight::Insight> current;
    if (insight_enabled) {
        try {
            auto call = insight::initial_insight(data, backend, templates, derive_seed(cfg.seed, {kTagInsight, 0}),
                                                 data_options);
            log_insight(call);
            current = call.insight;
        } catch (const llm::BackendError& e) {
            abort_with(e);
            return result;
        }
    }

    auto sample_ideas = [&](std::size_t t) {
        if (!cfg.toggles.any()) return std::vector<ideas::Idea>{};
        return ideas::sample_recent(library, cfg.lambda, cfg.per_category, derive_seed(cfg.seed, {kTagIdeas, t}),
                                    cfg.toggles);
    };

    ExperienceBuffer buffer(cfg.buffer_capacity);
    std::vector<ideas::Idea> sampled = sample_ideas(0);
    std::deque<Category> window;
    std::optional<double> best_train_nmse;

    for (std::size_t t = 1; t <= cfg.iterations; ++t) {
        if (cfg.wall_clock_budget_s && elapsed_s() >= *cfg.wall_clock_budget_s) {
            result.status = RunStatus::budget_exhausted;
            break;
        }
        bool p_draw = false;
        if (current) {
            Rng rng(derive_seed(cfg.seed, {kTagBernoulli, t}));
            p_draw = std::bernoulli_distribution(cfg.insight_probability)(rng);
        }
        const auto prompt = build_prompt(templates, data, buffer, current ? &*current : nullptr, sampled, cfg.k,
                                         p_draw, cfg.limits);
        log.prompt({{"iteration", t}, {"role", "main"}, {"kind", "main"}, {"prompt", prompt}});

        llm::ChatResponse response;
        try {
            ++result.stats.main_calls;
            response = backend.complete(
                {llm::Role::main, std::string(kMainSystemPrompt), prompt, cfg.main_sampling, cfg.b});
            if (response.completions.size() != cfg.b)
                throw llm::BackendError(llm::BackendErrorKind::malformed,
                                        "main role returned " + std::to_string(response.completions.size()) +
                                            " completions, expected " + std::to_string(cfg.b));
        } catch (const llm::BackendError& e) {
            abort_with(e);
            break;
        }

        std::vector<std::future<Candidate>> jobs;
        jobs.reserve(cfg.b);
        for (std::size_t i = 0; i < cfg.b; ++i) {
            jobs.push_back(std::async(std::launch::async, [&, i] {
                return prepare_candidate(response.completions[i], data, cfg, derive_seed(cfg.seed, {kTagFit, t, i}), t,
                                         i);
            }));
        }
        std::vector<Candidate> batch;
        batch.reserve(cfg.b);
        for (auto& j : jobs) batch.push_back(j.get());

        bool aborted = false;
        for (auto& c : batch) {
            const double s_before = result.best.s_star;
            c.category = ideas::categorize(outcome_of(c), s_before);
            ++result.stats.candidates;
            switch (c.category) {
                case Category::positive: ++result.stats.positive; break;
                case Category::negative: ++result.stats.negative; break;
                case Category::invalid: ++result.stats.invalid; break;
            }

            std::optional<std::uint64_t> idea_id;
            std::string idea_error;
            if (cfg.toggles.any()) {
                try {
                    ++result.stats.idea_calls;
                    auto ex = ideas::extract(c, c.category, prompt, s_before, data, backend, templates,
                                             cfg.idea_sampling);
                    log.prompt({{"iteration", t}, {"role", "idea"}, {"kind", "idea_" + std::string(to_string(c.category))}, {"index", c.index}, {"prompt", ex.prompt}});
                    idea_id = library.add(std::move(ex.idea)).id;
                } catch (const llm::BackendError& e) {
                    ++result.stats.idea_failures;
                    idea_error = e.what();
                    std::cerr << "warning: idea extraction failed at iteration " << t << ": " << e.what() << '\n';
                }
            }

            std::string refine_error;
            std::optional<llm::BackendErrorKind> refine_kind;
            if (c.category == Category::positive) {
                if (current) {
                    try {
                        auto call = insight::refine_insight(
                            c, data, *current, backend, templates,
                            derive_seed(cfg.seed, {kTagInsight, current->version + 1}), t, data_options);
                        log_insight(call);
                        current = call.insight;
                        ++result.stats.refinements;
                    } catch (const llm::BackendError& e) {
                        refine_error = e.what();
                        refine_kind = e.kind();
                    }
                }
                result.best.f_star = c;
                result.best.s_star = c.fit->score;
                buffer.insert({expr::render(*c.expression), c.fit->params, c.fit->score, t});
                best_train_nmse.reset();
                try {
                    const auto train = data.split(data::Split::train);
                    const auto names = data.variable_names();
                    auto pred = expr::evaluate(*c.expression, c.fit->params, train.X, names);
                    if (pred) best_train_nmse = metrics::nmse(*pred, train.y);
                } catch (const std::invalid_argument&) {
                    // Degenerate or single-row train split: no NMSE.
                }
            } else if (c.category == Category::negative && cfg.retain_negative) {
                buffer.insert({expr::render(*c.expression), c.fit->params, c.fit->score, t});
            }

            window.push_back(c.category);
            if (window.size() > cfg.valid_rate_window) window.pop_front();
            const std::vector<Category> win(window.begin(), window.end());

            nlohmann::json rec;
            rec["iteration"] = t;
            rec["index"] = c.index;
            rec["raw_hash"] = hex64(fnv1a64(c.raw_completion));
            rec["extracted"] = c.extracted;
            rec["expression"] = c.expression ? nlohmann::json(expr::render(*c.expression)) : nlohmann::json(nullptr);
            rec["complexity"] = c.expression ? nlohmann::json(expr::complexity(*c.expression)) : nlohmann::json(nullptr);
            rec["params"] = c.fit ? nlohmann::json(c.fit->params) : nlohmann::json(nullptr);
            rec["score"] = c.fit ? number_or_null(c.fit->score) : nlohmann::json(nullptr);
            rec["mse"] = c.fit ? number_or_null(c.fit->mse) : nlohmann::json(nullptr);
            rec["category"] = std::string(to_string(c.category));
            rec["error"] = c.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(c.error);
            rec["s_star"] = number_or_null(result.best.s_star);
            rec["best_train_nmse"] = best_train_nmse ? nlohmann::json(*best_train_nmse) : nlohmann::json(nullptr);
            rec["valid_rate"] = metrics::valid_rate(win);
            rec["insight_version"] = current ? nlohmann::json(current->version) : nlohmann::json(nullptr);
            rec["insight_in_prompt"] = p_draw;
            rec["idea_id"] = idea_id ? nlohmann::json(*idea_id) : nlohmann::json(nullptr);
            if (!idea_error.empty()) rec["idea_error"] = idea_error;
            if (cfg.record_timestamps) rec["elapsed_ms"] = static_cast<std::int64_t>(elapsed_s() * 1000.0);
            auto line = rec.dump();
            log.candidate(line);
            result.history.push_back(std::move(line));

            if (refine_kind) {
                result.status = RunStatus::aborted;
                result.error = refine_error;
                result.error_kind = refine_kind;
                aborted = true;
                break;
            }
        }
        if (aborted) break;
        sampled = sample_ideas(t);
        result.iterations_completed = t;
    }
    return result;
}

}  // namespace drsr::engine
