#include "drsr_cli/cli.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <vector>

#include <CLI11.hpp>

#include "drsr/dataset.hpp"
#include "drsr/engine.hpp"
#include "drsr/ideas.hpp"
#include "drsr/llm.hpp"
#include "drsr/metrics.hpp"
#include "drsr/prompts.hpp"
#include "drsr/util.hpp"

#ifndef DRSR_VERSION
#define DRSR_VERSION "unknown"
#endif

namespace drsr::cli {

namespace fs = std::filesystem;

namespace {

nlohmann::json load_json(const fs::path& path, int code) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw CommandError(code, e.what());
    }
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CommandError(code, path.string() + ": " + e.what());
    }
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string num_cell(const nlohmann::json& v) {
    if (v.is_null()) return "";
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    return format_double(v.get<double>());
}

struct LoadedDataset {
    data::Dataset data;
    fs::path csv;
    fs::path metadata;
};

LoadedDataset load_dataset(const nlohmann::json& cfg, const fs::path& base_dir, const fs::path& output_dir) {
    if (!cfg.contains("dataset") || !cfg.at("dataset").is_object())
        throw CommandError(kConfigError, "config needs a 'dataset' object");
    const auto& d = cfg.at("dataset");
    LoadedDataset out;
    try {
        if (d.contains("generate")) {
            auto spec = d.at("generate");
            if (spec.contains("csv_path") && spec.at("csv_path").is_string())
                spec["csv_path"] = resolve(base_dir, spec.at("csv_path").get<std::string>()).string();
            const auto gspec = data::generator_spec_from_json(spec);
            out.data = data::generate(gspec);
            out.csv = output_dir / "dataset.csv";
            out.metadata = output_dir / "dataset.meta.json";
            data::write_dataset(out.data, out.csv, out.metadata);
        } else {
            if (!d.contains("csv") || !d.contains("metadata"))
                throw CommandError(kConfigError, "dataset needs 'csv' and 'metadata', or 'generate'");
            out.csv = resolve(base_dir, d.at("csv").get<std::string>());
            out.metadata = resolve(base_dir, d.at("metadata").get<std::string>());
            if (!fs::exists(out.csv)) throw CommandError(kDatasetError, "dataset file not found: " + out.csv.string());
            if (!fs::exists(out.metadata))
                throw CommandError(kDatasetError, "dataset metadata not found: " + out.metadata.string());
            out.data = data::read_dataset(out.csv, out.metadata);
        }
    } catch (const data::SpecError& e) {
        throw CommandError(kConfigError, e.what());
    } catch (const data::DatasetError& e) {
        throw CommandError(kDatasetError, e.what());
    } catch (const nlohmann::json::exception& e) {
        throw CommandError(kConfigError, std::string("dataset config: ") + e.what());
    }
    return out;
}

std::unique_ptr<llm::ChatBackend> make_backend(const nlohmann::json& cfg, const fs::path& base_dir,
                                               const RunOptions& opts) {
    const auto b = cfg.value("backend", nlohmann::json::object());
    const auto kind = b.value("kind", std::string("replay"));
    try {
        if (opts.force_replay || kind == "replay") {
            fs::path script;
            if (opts.replay_script) {
                script = *opts.replay_script;
            } else if (b.contains("script")) {
                script = resolve(base_dir, b.at("script").get<std::string>());
            } else {
                throw CommandError(kConfigError, "replay backend needs a script");
            }
            if (!fs::exists(script)) throw CommandError(kConfigError, "replay script not found: " + script.string());
            return std::make_unique<llm::ReplayBackend>(llm::ReplayBackend::from_file(script));
        }
        if (kind == "openai") {
            llm::HttpConfig http;
            http.base_url = b.value("base_url", std::string());
            http.model = b.value("model", std::string());
            http.max_retries = b.value("max_retries", http.max_retries);
            http.max_concurrency = b.value("max_concurrency", http.max_concurrency);
            http.timeout = std::chrono::seconds(b.value("timeout_s", static_cast<long>(http.timeout.count())));
            http.initial_backoff =
                std::chrono::milliseconds(b.value("initial_backoff_ms", static_cast<long>(http.initial_backoff.count())));
            return std::make_unique<llm::OpenAiBackend>(llm::HttpConfig::from_env(http));
        }
    } catch (const llm::BackendError& e) {
        throw CommandError(kConfigError, e.what());
    } catch (const std::invalid_argument& e) {
        throw CommandError(kConfigError, e.what());
    } catch (const nlohmann::json::exception& e) {
        throw CommandError(kConfigError, std::string("backend config: ") + e.what());
    }
    throw CommandError(kConfigError, "unknown backend kind '" + kind + "' (expected replay or openai)");
}

nlohmann::json best_json(const engine::BestTracker& best) {
    if (!best.f_star || !best.f_star->valid()) return nullptr;
    const auto& c = *best.f_star;
    return {{"expression", expr::render(*c.expression)},
            {"params", c.fit->params},
            {"score", c.fit->score},
            {"mse", c.fit->mse},
            {"iteration", c.iteration},
            {"index", c.index},
            {"complexity", expr::complexity(*c.expression)}};
}

nlohmann::json metrics_json(const engine::BestTracker& best, const data::Dataset& d) {
    nlohmann::json out = nlohmann::json::object();
    if (!best.f_star || !best.f_star->valid()) return out;
    for (auto split : {data::Split::train, data::Split::id_test, data::Split::ood_test}) {
        auto r = metrics::report(*best.f_star->expression, best.f_star->fit->params, d, split);
        out[std::string(data::to_string(split))] =
            r ? metrics::to_json(*r) : nlohmann::json{{"error", r.error()}};
    }
    return out;
}

void merge_into(nlohmann::json& target, const nlohmann::json& patch) {
    for (const auto& [k, v] : patch.items()) {
        if (v.is_object() && target.contains(k) && target.at(k).is_object()) {
            merge_into(target[k], v);
        } else {
            target[k] = v;
        }
    }
}

std::vector<nlohmann::json> read_history(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CommandError(kConfigError, "cannot open history " + path.string());
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t line_no = 0;
    const char* required[] = {"iteration", "index", "category", "s_star", "best_train_nmse", "expression"};
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw CommandError(kConfigError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!rec.is_object())
            throw CommandError(kConfigError, path.string() + ":" + std::to_string(line_no) + ": not a JSON object");
        for (const char* key : required)
            if (!rec.contains(key))
                throw CommandError(kConfigError,
                                   path.string() + ":" + std::to_string(line_no) + ": missing field '" + key + "'");
        try {
            (void)category_from_string(rec.at("category").get<std::string>());
            (void)rec.at("iteration").get<std::size_t>();
        } catch (const std::exception& e) {
            throw CommandError(kConfigError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(std::move(rec));
    }
    return out;
}

int report_error(std::ostream& err, const std::exception& e, int code) {
    err << "error: " << e.what() << '\n';
    return code;
}

}  // namespace

std::string dataset_fingerprint(const fs::path& csv, const fs::path& metadata) {
    return hex64(fnv1a64(read_file(metadata), fnv1a64(read_file(csv))));
}

fs::path generate_files(const fs::path& spec_path, const GenerateOptions& opts) {
    auto j = load_json(spec_path, kConfigError);
    const auto base_dir = spec_path.parent_path();
    if (j.is_object() && j.contains("csv_path") && j.at("csv_path").is_string())
        j["csv_path"] = resolve(base_dir, j.at("csv_path").get<std::string>()).string();
    data::GeneratorSpec spec;
    try {
        spec = data::generator_spec_from_json(j);
    } catch (const data::SpecError& e) {
        throw CommandError(kConfigError, e.what());
    }
    data::Dataset d;
    try {
        d = data::generate(spec);
    } catch (const data::DatasetError& e) {
        throw CommandError(kDatasetError, e.what());
    } catch (const data::SpecError& e) {
        throw CommandError(kConfigError, e.what());
    }
    const auto dir = opts.out_dir.value_or(base_dir.empty() ? fs::path(".") : base_dir);
    const auto name = opts.name.value_or(std::string(data::to_string(spec.benchmark)));
    const auto csv = dir / (name + ".csv");
    data::write_dataset(d, csv, dir / (name + ".meta.json"));
    return csv;
}

nlohmann::json run_from_config(const fs::path& config_path, const RunOptions& opts) {
    auto cfg = load_json(config_path, kConfigError);
    if (!cfg.is_object()) throw CommandError(kConfigError, "run config must be a JSON object");
    const auto base_dir = config_path.parent_path();

    engine::EngineConfig ecfg;
    auto engine_json = cfg.value("engine", nlohmann::json::object());
    merge_into(engine_json, opts.engine_overrides);
    cfg["engine"] = engine_json;
    try {
        ecfg = engine::engine_config_from_json(engine_json);
    } catch (const std::invalid_argument& e) {
        throw CommandError(kConfigError, e.what());
    }

    fs::path output_dir;
    if (opts.output_dir) {
        output_dir = *opts.output_dir;
    } else if (cfg.contains("output_dir")) {
        output_dir = resolve(base_dir, cfg.at("output_dir").get<std::string>());
    } else {
        throw CommandError(kConfigError, "config needs 'output_dir'");
    }

    prompts::TemplateSet templates = prompts::TemplateSet::defaults();
    if (cfg.contains("prompts_dir")) {
        try {
            templates = prompts::TemplateSet::from_directory(resolve(base_dir, cfg.at("prompts_dir").get<std::string>()));
        } catch (const std::exception& e) {
            throw CommandError(kConfigError, e.what());
        }
    }

    // Dataset problems must surface before any backend is touched.
    fs::create_directories(output_dir);
    auto loaded = load_dataset(cfg, base_dir, output_dir);
    auto backend = make_backend(cfg, base_dir, opts);

    const auto library_path = cfg.contains("idea_library")
                                  ? resolve(base_dir, cfg.at("idea_library").get<std::string>())
                                  : output_dir / "ideas.json";
    ideas::IdeaLibrary library;
    try {
        library = ideas::IdeaLibrary::open(library_path);
    } catch (const std::exception& e) {
        throw CommandError(kConfigError, e.what());
    }

    nlohmann::json manifest;
    manifest["config"] = cfg;
    manifest["config_path"] = fs::absolute(config_path).string();
    manifest["code_version"] = DRSR_VERSION;
    manifest["started_at"] = utc_now();
    manifest["dataset"] = {{"name", loaded.data.name},
                           {"csv", loaded.csv.string()},
                           {"metadata", loaded.metadata.string()},
                           {"rows", loaded.data.size()},
                           {"fingerprint", dataset_fingerprint(loaded.csv, loaded.metadata)}};
    manifest["backend_id"] = backend->id();
    manifest["uses_network"] = backend->uses_network();
    manifest["ablation"] = ecfg.llm_sr_equivalent() ? "llm-sr-equivalent" : "none";
    manifest["idea_library"] = library_path.string();

    engine::JsonlRunLog log(output_dir);
    auto result = engine::run(ecfg, loaded.data, *backend, templates, library, log);
    library.flush();

    manifest["finished_at"] = utc_now();
    manifest["status"] = std::string(engine::to_string(result.status));
    manifest["error"] = result.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(result.error);
    manifest["iterations_completed"] = result.iterations_completed;
    manifest["stats"] = {{"candidates", result.stats.candidates},
                         {"positive", result.stats.positive},
                         {"negative", result.stats.negative},
                         {"invalid", result.stats.invalid},
                         {"main_calls", result.stats.main_calls},
                         {"idea_calls", result.stats.idea_calls},
                         {"idea_failures", result.stats.idea_failures},
                         {"insight_calls", result.stats.insight_calls},
                         {"refinements", result.stats.refinements}};
    if (!result.history.empty()) {
        manifest["valid_rate"] = nlohmann::json::parse(result.history.back()).at("valid_rate");
    } else {
        manifest["valid_rate"] = nullptr;
    }
    manifest["s_star"] = std::isfinite(result.best.s_star) ? nlohmann::json(result.best.s_star) : nlohmann::json(nullptr);
    manifest["best"] = best_json(result.best);
    manifest["metrics"] = metrics_json(result.best, loaded.data);
    write_file_atomic(output_dir / "manifest.json", manifest.dump(2) + "\n");

    if (result.status == engine::RunStatus::aborted)
        throw CommandError(kBackendError, "run aborted: " + result.error + " (partial logs in " + output_dir.string() + ")");
    return manifest;
}

fs::path write_reports(const fs::path& history_path, const ReportOptions& opts) {
    if (opts.window == 0) throw CommandError(kConfigError, "report window must be positive");
    const auto records = read_history(history_path);
    const auto dir = opts.out_dir.value_or(history_path.parent_path() / "report");
    fs::create_directories(dir);

    std::string convergence = "iteration,best_train_nmse,s_star\n";
    std::string valid = "candidate,iteration,index,category,valid_rate\n";
    std::string categories = "iteration,positive,negative,invalid\n";
    std::string trajectory = "iteration,index,score,best_train_nmse,complexity,expression\n";

    std::vector<Category> window_all;
    std::size_t pos = 0;
    while (pos < records.size()) {
        const auto iteration = records[pos].at("iteration").get<std::size_t>();
        std::size_t counts[3] = {0, 0, 0};
        const nlohmann::json* last = nullptr;
        for (; pos < records.size() && records[pos].at("iteration").get<std::size_t>() == iteration; ++pos) {
            const auto& r = records[pos];
            const auto cat = category_from_string(r.at("category").get<std::string>());
            ++counts[static_cast<int>(cat)];
            window_all.push_back(cat);
            const auto from = window_all.size() > opts.window ? window_all.size() - opts.window : 0;
            const std::vector<Category> win(window_all.begin() + static_cast<std::ptrdiff_t>(from), window_all.end());
            valid += std::to_string(window_all.size()) + "," + std::to_string(iteration) + "," +
                     num_cell(r.at("index")) + "," + std::string(to_string(cat)) + "," +
                     format_double(metrics::valid_rate(win)) + "\n";
            if (cat == Category::positive) {
                trajectory += std::to_string(iteration) + "," + num_cell(r.at("index")) + "," +
                              num_cell(r.value("score", nlohmann::json(nullptr))) + "," +
                              num_cell(r.at("best_train_nmse")) + "," +
                              num_cell(r.value("complexity", nlohmann::json(nullptr))) + "," +
                              csv_quote(r.at("expression").is_string() ? r.at("expression").get<std::string>() : "") +
                              "\n";
            }
            last = &r;
        }
        convergence += std::to_string(iteration) + "," + num_cell(last->at("best_train_nmse")) + "," +
                       num_cell(last->at("s_star")) + "\n";
        categories += std::to_string(iteration) + "," + std::to_string(counts[0]) + "," + std::to_string(counts[1]) +
                      "," + std::to_string(counts[2]) + "\n";
    }
    write_file_atomic(dir / "convergence.csv", convergence);
    write_file_atomic(dir / "valid_rate.csv", valid);
    write_file_atomic(dir / "categories.csv", categories);
    write_file_atomic(dir / "trajectory.csv", trajectory);
    return dir;
}

int cmd_generate(const fs::path& spec_path, const GenerateOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        const auto csv = generate_files(spec_path, opts);
        out << "wrote " << csv.string() << '\n';
        return kOk;
    } catch (const CommandError& e) {
        return report_error(err, e, e.code());
    } catch (const std::exception& e) {
        return report_error(err, e, kDatasetError);
    }
}

int cmd_run(const fs::path& config_path, const RunOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        const auto manifest = run_from_config(config_path, opts);
        out << "status: " << manifest.at("status").get<std::string>() << '\n';
        if (!manifest.at("best").is_null()) {
            out << "best: " << manifest.at("best").at("expression").get<std::string>() << '\n';
            out << "score: " << format_double(manifest.at("best").at("score").get<double>()) << '\n';
        } else {
            out << "best: none\n";
        }
        return kOk;
    } catch (const CommandError& e) {
        return report_error(err, e, e.code());
    } catch (const llm::BackendError& e) {
        return report_error(err, e, kBackendError);
    } catch (const std::exception& e) {
        return report_error(err, e, kFailure);
    }
}

int cmd_report(const fs::path& history_path, const ReportOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        const auto dir = write_reports(history_path, opts);
        out << "wrote reports to " << dir.string() << '\n';
        return kOk;
    } catch (const CommandError& e) {
        return report_error(err, e, e.code());
    } catch (const std::exception& e) {
        return report_error(err, e, kFailure);
    }
}

int cmd_sweep(const fs::path& config_path, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
    struct ToggleSet {
        const char* name;
        bool pos, neg, inv;
    };
    const ToggleSet toggle_sets[] = {
        {"all_ideas", true, true, true},
        {"no_valid_ideas", false, false, true},
        {"no_invalid_ideas", true, true, false},
        {"no_ideas", false, false, false},
    };
    const double probabilities[] = {0.0, 0.5, 1.0};
    std::string summary = "insight_probability,ideas,status,best_score,train_nmse,id_nmse,ood_nmse,run_dir\n";
    int worst = kOk;
    for (double p : probabilities) {
        for (const auto& t : toggle_sets) {
            RunOptions opts;
            opts.output_dir = out_dir / ("p" + format_double(p) + "_" + t.name);
            opts.engine_overrides = {{"insight_probability", p},
                                     {"toggles", {{"use_positive", t.pos}, {"use_negative", t.neg}, {"use_invalid", t.inv}}}};
            std::string status = "failed";
            std::string best;
            std::string nmse[3];
            try {
                const auto m = run_from_config(config_path, opts);
                status = m.at("status").get<std::string>();
                if (!m.at("best").is_null()) best = format_double(m.at("best").at("score").get<double>());
                int idx = 0;
                for (const char* split : {"train", "id_test", "ood_test"}) {
                    const auto& metrics = m.at("metrics");
                    if (metrics.contains(split) && metrics.at(split).contains("nmse"))
                        nmse[idx] = format_double(metrics.at(split).at("nmse").get<double>());
                    ++idx;
                }
            } catch (const CommandError& e) {
                err << "error: " << e.what() << '\n';
                worst = std::max(worst, e.code());
                if (e.code() == kConfigError || e.code() == kDatasetError) return e.code();
            }
            summary += format_double(p) + "," + t.name + "," + status + "," + best + "," + nmse[0] + "," + nmse[1] +
                       "," + nmse[2] + "," + csv_quote(opts.output_dir->string()) + "\n";
        }
    }
    write_file_atomic(out_dir / "sweep.csv", summary);
    out << "wrote " << (out_dir / "sweep.csv").string() << '\n';
    return worst;
}

int main_entry(int argc, char** argv) {
    CLI::App app{"Equation discovery with language-model guidance"};
    app.require_subcommand(1);

    std::string spec_path;
    GenerateOptions gen;
    std::string gen_out;
    std::string gen_name;
    auto* generate = app.add_subcommand("generate", "Generate a benchmark dataset from a spec file");
    generate->add_option("spec", spec_path, "Generator spec (JSON)")->required()->check(CLI::ExistingFile);
    generate->add_option("--out", gen_out, "Output directory (default: the spec's directory)");
    generate->add_option("--name", gen_name, "Base name of the output files (default: benchmark name)");

    std::string config_path;
    std::string run_out;
    auto* run = app.add_subcommand("run", "Run the search described by a config file");
    run->add_option("config", config_path, "Run config (JSON)")->required();
    run->add_option("--out", run_out, "Override the config's output_dir");

    std::string replay_config;
    std::string replay_script;
    std::string replay_out;
    auto* replay = app.add_subcommand("replay", "Run with the replay backend");
    replay->add_option("config", replay_config, "Run config (JSON)")->required();
    replay->add_option("--script", replay_script, "Replay script (default: backend.script in the config)");
    replay->add_option("--out", replay_out, "Override the config's output_dir");

    std::string history_path;
    std::string report_out;
    std::size_t window = 40;
    auto* report = app.add_subcommand("report", "Write CSV reports from a run history");
    report->add_option("history", history_path, "history.jsonl of a run")->required();
    report->add_option("--out", report_out, "Output directory (default: <run>/report)");
    report->add_option("--window", window, "Sliding window for the valid-rate curve")->check(CLI::PositiveNumber);

    std::string sweep_config;
    std::string sweep_out;
    auto* sweep = app.add_subcommand("sweep", "Ablation sweep over insight probability and idea categories");
    sweep->add_option("config", sweep_config, "Run config (JSON)")->required();
    sweep->add_option("--out", sweep_out, "Directory for the sweep runs")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    if (generate->parsed()) {
        if (!gen_out.empty()) gen.out_dir = gen_out;
        if (!gen_name.empty()) gen.name = gen_name;
        return cmd_generate(spec_path, gen, std::cout, std::cerr);
    }
    if (run->parsed()) {
        RunOptions opts;
        if (!run_out.empty()) opts.output_dir = run_out;
        return cmd_run(config_path, opts, std::cout, std::cerr);
    }
    if (replay->parsed()) {
        RunOptions opts;
        opts.force_replay = true;
        if (!replay_script.empty()) opts.replay_script = replay_script;
        if (!replay_out.empty()) opts.output_dir = replay_out;
        return cmd_run(replay_config, opts, std::cout, std::cerr);
    }
    if (report->parsed()) {
        ReportOptions opts;
        opts.window = window;
        if (!report_out.empty()) opts.out_dir = report_out;
        return cmd_report(history_path, opts, std::cout, std::cerr);
    }
    if (sweep->parsed()) return cmd_sweep(sweep_config, sweep_out, std::cout, std::cerr);
    return kConfigError;
}

}  // namespace drsr::cli
