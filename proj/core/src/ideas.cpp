#include "drsr/ideas.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "drsr/insight.hpp"
#include "drsr/util.hpp"

namespace drsr::ideas {

namespace {

constexpr Category kOrder[] = {Category::positive, Category::negative, Category::invalid};

std::string score_text(double s) {
    if (std::isinf(s) && s < 0) return "none yet";
    return format_double(s);
}

Idea idea_from_json(const nlohmann::json& j, Category c) {
    Idea idea;
    idea.category = c;
    idea.id = j.at("id").get<std::uint64_t>();
    idea.iteration = j.at("iteration").get<std::size_t>();
    idea.content = j.at("content").get<std::string>();
    idea.context = j.at("context").get<std::string>();
    if (j.contains("fitness") && !j.at("fitness").is_null()) idea.fitness = j.at("fitness").get<double>();
    return idea;
}

}  // namespace

Category categorize(const Outcome& outcome, double s_star) noexcept {
    if (!std::holds_alternative<fit::FitResult>(outcome)) return Category::invalid;
    return std::get<fit::FitResult>(outcome).score > s_star ? Category::positive : Category::negative;
}

nlohmann::json to_json(const Idea& idea) {
    nlohmann::json j{{"id", idea.id}, {"iteration", idea.iteration}, {"content", idea.content}, {"context", idea.context}};
    if (idea.fitness) j["fitness"] = *idea.fitness;
    return j;
}

bool Toggles::uses(Category c) const noexcept {
    switch (c) {
        case Category::positive: return use_positive;
        case Category::negative: return use_negative;
        case Category::invalid: return use_invalid;
    }
    return false;
}

IdeaLibrary::IdeaLibrary(const IdeaLibrary& other) {
    std::lock_guard lock(other.mu_);
    positive_ = other.positive_;
    negative_ = other.negative_;
    invalid_ = other.invalid_;
    next_id_ = other.next_id_;
    path_ = other.path_;
}

IdeaLibrary& IdeaLibrary::operator=(const IdeaLibrary& other) {
    if (this == &other) return *this;
    std::scoped_lock lock(mu_, other.mu_);
    positive_ = other.positive_;
    negative_ = other.negative_;
    invalid_ = other.invalid_;
    next_id_ = other.next_id_;
    path_ = other.path_;
    return *this;
}

std::vector<Idea>& IdeaLibrary::list(Category c) {
    switch (c) {
        case Category::positive: return positive_;
        case Category::negative: return negative_;
        case Category::invalid: break;
    }
    return invalid_;
}

const std::vector<Idea>& IdeaLibrary::list(Category c) const {
    switch (c) {
        case Category::positive: return positive_;
        case Category::negative: return negative_;
        case Category::invalid: break;
    }
    return invalid_;
}

IdeaLibrary IdeaLibrary::open(const std::filesystem::path& path) {
    IdeaLibrary lib;
    if (std::filesystem::exists(path)) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("idea library " + path.string() + ": " + e.what());
        }
        lib = from_json(j);
    }
    lib.path_ = path;
    return lib;
}

Idea IdeaLibrary::add(Idea idea) {
    if (idea.category == Category::invalid) idea.fitness.reset();
    std::lock_guard lock(mu_);
    idea.id = next_id_++;
    list(idea.category).push_back(idea);
    if (path_) write_file_atomic(*path_, to_json_locked().dump(2) + "\n");
    return idea;
}

std::vector<Idea> IdeaLibrary::entries(Category c) const {
    std::lock_guard lock(mu_);
    return list(c);
}

std::size_t IdeaLibrary::size(Category c) const {
    std::lock_guard lock(mu_);
    return list(c).size();
}

std::size_t IdeaLibrary::total() const {
    std::lock_guard lock(mu_);
    return positive_.size() + negative_.size() + invalid_.size();
}

std::uint64_t IdeaLibrary::next_id() const {
    std::lock_guard lock(mu_);
    return next_id_;
}

nlohmann::json IdeaLibrary::to_json_locked() const {
    nlohmann::json j = nlohmann::json::object();
    for (auto c : kOrder) {
        auto arr = nlohmann::json::array();
        for (const auto& idea : list(c)) arr.push_back(ideas::to_json(idea));
        j[std::string(drsr::to_string(c))] = std::move(arr);
    }
    return j;
}

nlohmann::json IdeaLibrary::to_json() const {
    std::lock_guard lock(mu_);
    return to_json_locked();
}

IdeaLibrary IdeaLibrary::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::runtime_error("idea library must be a JSON object");
    IdeaLibrary lib;
    std::uint64_t max_id = 0;
    bool any = false;
    try {
        for (auto c : kOrder) {
            const auto key = std::string(drsr::to_string(c));
            if (!j.contains(key)) throw std::runtime_error("idea library is missing '" + key + "'");
            std::uint64_t prev = 0;
            bool first = true;
            for (const auto& item : j.at(key)) {
                auto idea = idea_from_json(item, c);
                if (!first && idea.id <= prev) throw std::runtime_error("idea ids in '" + key + "' are not increasing");
                prev = idea.id;
                first = false;
                max_id = std::max(max_id, idea.id);
                any = true;
                lib.list(c).push_back(std::move(idea));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("idea library: ") + e.what());
    }
    lib.next_id_ = any ? max_id + 1 : 0;
    return lib;
}

void IdeaLibrary::flush() const {
    std::lock_guard lock(mu_);
    if (path_) write_file_atomic(*path_, to_json_locked().dump(2) + "\n");
}

bool IdeaLibrary::operator==(const IdeaLibrary& other) const {
    if (this == &other) return true;
    std::scoped_lock lock(mu_, other.mu_);
    return positive_ == other.positive_ && negative_ == other.negative_ && invalid_ == other.invalid_ &&
           next_id_ == other.next_id_;
}

std::size_t recent_pool_size(std::size_t len, double lambda) {
    if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in (0, 1]");
    const double raw = std::ceil(lambda * static_cast<double>(len) - 1e-9);
    return std::min(len, static_cast<std::size_t>(std::max(0.0, raw)));
}

std::vector<Idea> sample_recent(const IdeaLibrary& lib, double lambda, std::size_t per_category, std::uint64_t seed,
                                const Toggles& toggles) {
    std::vector<Idea> out;
    for (auto c : kOrder) {
        const auto all = lib.entries(c);
        const auto pool_size = recent_pool_size(all.size(), lambda);
        if (!toggles.uses(c) || pool_size == 0 || per_category == 0) continue;
        std::vector<std::size_t> pool(pool_size);
        for (std::size_t i = 0; i < pool_size; ++i) pool[i] = all.size() - pool_size + i;
        const auto take = std::min(per_category, pool_size);
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(c)}));
        for (std::size_t i = 0; i < take; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
        }
        pool.resize(take);
        std::sort(pool.begin(), pool.end());
        for (auto i : pool) out.push_back(all[i]);
    }
    return out;
}

std::string candidate_context(const Candidate& c) {
    if (c.valid()) {
        std::string params;
        for (std::size_t i = 0; i < c.fit->params.size(); ++i)
            params += (i ? ", " : "") + format_double(c.fit->params[i]);
        return "equation: " + expr::render(*c.expression) + "\nparams: [" + params +
               "]\nscore: " + format_double(c.fit->score);
    }
    const auto& shown = c.extracted.empty() ? c.raw_completion : c.extracted;
    return "answer: " + shown + "\nerror: " + c.error;
}

Extraction extract(const Candidate& c, Category category, const std::string& prompt_state, double best_score,
                   const data::Dataset& data, llm::ChatBackend& backend, const prompts::TemplateSet& templates,
                   const llm::Sampling& sampling) {
    Extraction out;
    const auto description = insight::describe_dataset(data);
    if (category == Category::invalid) {
        out.prompt = prompts::render(templates.get("idea_invalid"),
                                     {{"dataset_description", description},
                                      {"raw_completion", c.raw_completion},
                                      {"error", c.error},
                                      {"grammar", std::string(expr::grammar_reference())}});
    } else {
        if (!c.valid()) throw std::invalid_argument("extract: valid category for a candidate without a fit");
        out.prompt = prompts::render(templates.get(category == Category::positive ? "idea_positive" : "idea_negative"),
                                     {{"dataset_description", description},
                                      {"target", data.target.name},
                                      {"equation", expr::render(*c.expression)},
                                      {"score", format_double(c.fit->score)},
                                      {"best_score", score_text(best_score)}});
    }
    // The prompt that produced the candidate is kept as system context.
    std::string system(kIdeaSystemPrompt);
    if (!prompt_state.empty()) system += "\n\nThe equation was written in answer to this request:\n" + prompt_state;
    llm::ChatRequest req{llm::Role::idea, system, out.prompt, sampling, 1};
    auto resp = backend.complete(req);
    out.idea.category = category;
    out.idea.content = resp.completions.front();
    out.idea.context = candidate_context(c);
    if (category != Category::invalid) out.idea.fitness = c.fit->score;
    out.idea.iteration = c.iteration;
    return out;
}

}  // namespace drsr::ideas
