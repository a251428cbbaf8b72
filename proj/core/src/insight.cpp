#include "drsr/insight.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "drsr/util.hpp"

namespace drsr::insight {

namespace {

std::string g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

std::string task_requirements(const data::Dataset& data, const prompts::TemplateSet& templates) {
    std::string inputs;
    for (const auto& v : data.variables) inputs += (inputs.empty() ? "" : ", ") + v.name;
    return prompts::render(templates.get("task_requirements"), {{"target", data.target.name}, {"inputs", inputs}});
}

std::string ask(llm::ChatBackend& backend, const std::string& prompt, const llm::Sampling& sampling) {
    llm::ChatRequest req{llm::Role::data, std::string(kDataSystemPrompt), prompt, sampling, 1};
    for (int attempt = 0; attempt < 2; ++attempt) {
        auto resp = backend.complete(req);
        const auto& text = resp.completions.front();
        if (text.find_first_not_of(" \t\r\n") != std::string::npos) return text;
    }
    throw llm::BackendError(llm::BackendErrorKind::malformed, "data role returned an empty insight twice");
}

std::string params_text(std::span<const double> params) {
    std::string out = "[";
    for (std::size_t i = 0; i < params.size(); ++i) out += (i ? ", " : "") + format_double(params[i]);
    return out + "]";
}

}  // namespace

nlohmann::json to_json(const Insight& i) {
    return {{"version", i.version},
            {"iteration", i.iteration},
            {"trigger_score", i.trigger_score ? nlohmann::json(*i.trigger_score) : nlohmann::json("initial")},
            {"source_view_seed", i.source_view_seed},
            {"content", i.content}};
}

std::string render_rows(const data::Dataset& data, const data::ResampledView& view) {
    const bool with_residual = !view.rows.empty() && view.rows.front().residual.has_value();
    std::vector<std::string> header;
    for (const auto& v : data.variables) header.push_back(v.name);
    header.push_back(data.target.name);
    if (with_residual) header.emplace_back("residual");

    std::vector<std::vector<std::string>> cells;
    cells.reserve(view.rows.size());
    for (const auto& row : view.rows) {
        std::vector<std::string> line;
        for (double x : row.x) line.push_back(g6(x));
        line.push_back(g6(row.y));
        if (with_residual) line.push_back(g6(row.residual.value_or(std::numeric_limits<double>::quiet_NaN())));
        cells.push_back(std::move(line));
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t c = 0; c < header.size(); ++c) {
        width[c] = header[c].size();
        for (const auto& line : cells) width[c] = std::max(width[c], line[c].size());
    }
    std::string out;
    auto emit = [&](const std::vector<std::string>& line) {
        for (std::size_t c = 0; c < line.size(); ++c) {
            if (c) out += "  ";
            out += pad(line[c], width[c]);
        }
        out += '\n';
    };
    emit(header);
    for (const auto& line : cells) emit(line);
    return out;
}

std::string describe_dataset(const data::Dataset& data) {
    auto describe = [](const data::VariableInfo& v) {
        std::string s = v.name;
        if (!v.description.empty()) s += " (" + v.description + ")";
        if (!v.unit.empty()) s += " [" + v.unit + "]";
        return s;
    };
    std::string out = "Find an equation for " + describe(data.target) + " as a function of ";
    for (std::size_t i = 0; i < data.variables.size(); ++i) {
        if (i) out += i + 1 == data.variables.size() ? " and " : ", ";
        out += describe(data.variables[i]);
    }
    out += ". Data set: " + data.name + ".";
    return out;
}

std::vector<double> train_residuals(const expr::Expression& e, std::span<const double> params,
                                    const data::Dataset& data) {
    const auto train = data.split(data::Split::train);
    const auto names = data.variable_names();
    auto pred = expr::evaluate(e, params, train.X, names);
    if (!pred) throw std::logic_error("best equation failed on the train split: " + pred.error().describe());
    std::vector<double> res(data.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < train.indices.size(); ++i) res[train.indices[i]] = train.y[i] - (*pred)[i];
    return res;
}

InsightCall initial_insight(const data::Dataset& data, llm::ChatBackend& backend,
                            const prompts::TemplateSet& templates, std::uint64_t seed,
                            const InsightOptions& options) {
    if (data.splits.train.empty()) throw std::invalid_argument("initial_insight: empty train split");
    const auto size = std::min(options.view_size, data.splits.train.size());
    InsightCall call;
    call.view = data::resample(data, std::nullopt, size, seed);
    call.prompt = prompts::render(templates.get("insight_initial"),
                                  {{"dataset_description", describe_dataset(data)},
                                   {"row_count", std::to_string(size)},
                                   {"rows_table", render_rows(data, call.view)},
                                   {"target", data.target.name},
                                   {"task_requirements", task_requirements(data, templates)}});
    call.insight.content = ask(backend, call.prompt, options.sampling);
    call.insight.version = 0;
    call.insight.iteration = 0;
    call.insight.source_view_seed = seed;
    return call;
}

InsightCall refine_insight(const Candidate& f_star, const data::Dataset& data, const Insight& prev,
                           llm::ChatBackend& backend, const prompts::TemplateSet& templates, std::uint64_t seed,
                           std::size_t iteration, const InsightOptions& options) {
    if (!f_star.valid()) throw std::invalid_argument("refine_insight: best candidate has no fitted expression");
    const auto& params = f_star.fit->params;
    const auto residuals = train_residuals(*f_star.expression, params, data);
    const auto size = std::min(options.view_size, data.splits.train.size());
    InsightCall call;
    call.view = data::resample(data, std::span<const double>(residuals), size, seed);
    call.prompt = prompts::render(templates.get("insight_refine"),
                                  {{"dataset_description", describe_dataset(data)},
                                   {"target", data.target.name},
                                   {"best_equation", expr::render(*f_star.expression)},
                                   {"best_params", params_text(params)},
                                   {"best_score", format_double(f_star.fit->score)},
                                   {"previous_insight", prev.content},
                                   {"row_count", std::to_string(size)},
                                   {"rows_table", render_rows(data, call.view)},
                                   {"task_requirements", task_requirements(data, templates)}});
    call.insight.content = ask(backend, call.prompt, options.sampling);
    call.insight.version = prev.version + 1;
    call.insight.iteration = iteration;
    call.insight.trigger_score = f_star.fit->score;
    call.insight.source_view_seed = seed;
    return call;
}

}  // namespace drsr::insight
