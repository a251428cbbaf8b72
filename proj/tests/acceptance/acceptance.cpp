// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "drsr/dataset.hpp"
#include "drsr/engine.hpp"
#include "drsr/expr.hpp"
#include "drsr/fit.hpp"
#include "drsr/ideas.hpp"
#include "drsr/metrics.hpp"
#include "drsr/util.hpp"
#include "drsr_cli/cli.hpp"
#include "mock_chat_server.hpp"
#include "test_support.hpp"

using namespace drsr;
namespace fs = std::filesystem;

namespace {

struct Failure {
    std::string what;
};

#define CHECK(cond, msg)                                                 \
    do {                                                                 \
        if (!(cond)) {                                                   \
            std::ostringstream os_;                                      \
            os_ << msg << " [line " << __LINE__ << "]";                  \
            throw Failure{os_.str()};                                    \
        }                                                                \
    } while (0)

expr::Expression must_parse(std::string_view text, std::span<const std::string> vars) {
    auto r = expr::parse(text, vars);
    CHECK(r.has_value(), "parse failed for '" << text << "': " << r.error().describe());
    return std::move(r).value();
}

// 1 ------------------------------------------------------------------------
void ground_truth_recovery() {
    data::GeneratorSpec spec;
    spec.benchmark = data::Benchmark::oscillator1;
    spec.seed = 2024;
    const auto d = data::generate(spec);
    const auto vars = d.variable_names();
    // The x*cos(x) term of the governing equation carries no coefficient.
    const auto e = must_parse("params[0]*sin(x) - params[1]*x*v - params[2]*v^3 - params[3]*x^3 - x*cos(x)", vars);
    const auto r = fit::fit(e, d, {}, 7);
    CHECK(r.has_value(), "fit failed: " << r.error().describe());
    const double want[] = {0.8, 0.5, 0.5, 0.2};
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(std::fabs(r->params[i] - want[i]) < 1e-2, "params[" << i << "] = " << r->params[i] << ", want " << want[i]);
    const auto id = metrics::report(e, r->params, d, data::Split::id_test);
    CHECK(id.has_value(), "ID report failed: " << id.error());
    CHECK(id->nmse < 1e-8, "ID NMSE " << id->nmse);
}

// 2 ------------------------------------------------------------------------
double brute_nmse(const std::vector<double>& p, const std::vector<double>& y) {
    long double mean = 0;
    for (double v : y) mean += v;
    mean /= y.size();
    long double num = 0, den = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        num += (static_cast<long double>(p[i]) - y[i]) * (static_cast<long double>(p[i]) - y[i]);
        den += (y[i] - mean) * (y[i] - mean);
    }
    return static_cast<double>(num / den);
}

double brute_acc(const std::vector<double>& p, const std::vector<double>& y, double tau) {
    int hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] == 0.0 ? p[i] == 0.0 : std::fabs((p[i] - y[i]) / y[i]) <= tau) ++hits;
    return static_cast<double>(hits) / static_cast<double>(y.size());
}

void metric_oracles() {
    std::mt19937_64 rng(31337);
    std::normal_distribution<double> n(0.0, 2.0);
    std::uniform_int_distribution<std::size_t> len(2, 200);
    const std::vector<double> taus = {1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.5, 1.0, 10.0};
    for (int trial = 0; trial < 1000; ++trial) {
        const auto k = len(rng);
        std::vector<double> p(k), y(k);
        for (std::size_t i = 0; i < k; ++i) {
            y[i] = n(rng);
            p[i] = trial % 7 == 0 ? y[i] : y[i] + 0.1 * n(rng);
        }
        const double ref = brute_nmse(p, y);
        const double got = metrics::nmse(p, y);
        CHECK(std::fabs(got - ref) <= 1e-12 * std::max(std::fabs(ref), 1e-300), "nmse " << got << " vs " << ref);
        double prev = -1.0;
        for (double tau : taus) {
            const double a = metrics::acc_tau(p, y, tau);
            CHECK(a == brute_acc(p, y, tau), "acc_tau mismatch at tau " << tau);
            CHECK(a >= prev, "acc_tau not monotone at tau " << tau);
            prev = a;
        }
    }
}

// 3 ------------------------------------------------------------------------
void decision_table() {
    const double inf = std::numeric_limits<double>::infinity();
    for (double s_star : {-inf, -0.25}) {
        CHECK(ideas::categorize(expr::EvalError{}, s_star) == Category::invalid, "eval error not invalid");
        CHECK(ideas::categorize(expr::ParseError{}, s_star) == Category::invalid, "parse error not invalid");
        const double finite_star = std::isfinite(s_star) ? s_star : -1.0;
        for (double delta : {-0.5, 0.0, 0.5}) {
            fit::FitResult f;
            f.score = finite_star + delta;
            const auto got = ideas::categorize(f, s_star);
            Category want;
            if (!std::isfinite(s_star)) {
                want = Category::positive;
            } else {
                want = delta > 0.0 ? Category::positive : Category::negative;
            }
            CHECK(got == want, "score " << f.score << " vs s* " << s_star << " gave " << to_string(got));
        }
    }
}

// 4 ------------------------------------------------------------------------
void recency_sampling() {
    std::mt19937_64 rng(4242);
    for (int trial = 0; trial < 1000; ++trial) {
        ideas::IdeaLibrary lib;
        const auto n = rng() % 30;
        for (std::size_t i = 0; i < n; ++i) {
            ideas::Idea idea;
            idea.category = static_cast<Category>(rng() % 3);
            idea.content = "idea";
            lib.add(idea);
        }
        const auto seed = rng();
        const auto sampled = ideas::sample_recent(lib, 0.5, 3, seed);
        for (auto c : {Category::positive, Category::negative, Category::invalid}) {
            const auto all = lib.entries(c);
            const std::size_t window = (all.size() + 1) / 2;  // ceil(len / 2)
            std::set<std::uint64_t> recent;
            for (std::size_t i = all.size() - window; i < all.size(); ++i) recent.insert(all[i].id);
            std::size_t count = 0;
            for (const auto& s : sampled) {
                if (s.category != c) continue;
                ++count;
                CHECK(recent.count(s.id) == 1, "idea " << s.id << " outside the recent half");
            }
            CHECK(count == std::min<std::size_t>(3, window), "sampled " << count << " of window " << window);
        }
        const double lambda = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
        for (const auto& s : ideas::sample_recent(lib, lambda, 3, seed)) {
            const auto all = lib.entries(s.category);
            const auto pool = ideas::recent_pool_size(all.size(), lambda);
            CHECK(pool >= 1 && static_cast<double>(pool) >= lambda * static_cast<double>(all.size()) - 1e-9 &&
                      static_cast<double>(pool) < lambda * static_cast<double>(all.size()) + 1.0,
                  "pool size " << pool << " for len " << all.size() << ", lambda " << lambda);
            bool inside = false;
            for (std::size_t i = all.size() - pool; i < all.size(); ++i) inside |= all[i].id == s.id;
            CHECK(inside, "idea outside recency window for lambda " << lambda);
        }
    }
}

// 5 ------------------------------------------------------------------------
engine::EngineConfig replay_config() {
    engine::EngineConfig cfg;
    cfg.iterations = 10;
    cfg.b = 4;
    cfg.seed = 99;
    cfg.view_size = 30;
    cfg.fit.restarts = 3;
    return cfg;
}

void replay_determinism() {
    const auto d = data::generate(testkit::small_oscillator1_spec(11));
    const auto cfg = replay_config();
    testkit::TempDir dir("accept5");
    std::vector<engine::RunResult> results;
    for (const char* name : {"a", "b"}) {
        llm::ReplayBackend backend(testkit::replay_script(cfg.iterations, cfg.b));
        ideas::IdeaLibrary lib;
        engine::JsonlRunLog log(dir / name);
        results.push_back(engine::run(cfg, d, backend, prompts::TemplateSet::defaults(), lib, log));
    }
    const auto& r = results[0];
    CHECK(r.status == engine::RunStatus::completed, "run status " << engine::to_string(r.status) << ": " << r.error);
    CHECK(r.history.size() == 40, "candidate count " << r.history.size());
    CHECK(r.stats.candidates == 40, "stats.candidates " << r.stats.candidates);

    double prev = -std::numeric_limits<double>::infinity();
    std::vector<double> increases;
    for (const auto& line : r.history) {
        const auto rec = nlohmann::json::parse(line);
        const double s = rec.at("s_star").is_null() ? -std::numeric_limits<double>::infinity()
                                                    : rec.at("s_star").get<double>();
        CHECK(s >= prev, "s* decreased");
        if (s > prev) increases.push_back(s);
        prev = s;
    }
    CHECK(!increases.empty(), "no improvement in the scripted run");
    CHECK(r.stats.refinements == increases.size(),
          r.stats.refinements << " refinements for " << increases.size() << " improvements");
    CHECK(r.insights.size() == increases.size() + 1, "insight versions " << r.insights.size());
    for (std::size_t k = 0; k < increases.size(); ++k) {
        const auto& ins = r.insights[k + 1];
        CHECK(ins.version == k + 1 && ins.trigger_score && *ins.trigger_score == increases[k],
              "refinement " << k + 1 << " not tied to improvement");
    }
    const auto a = read_file(dir / "a" / "history.jsonl");
    const auto b = read_file(dir / "b" / "history.jsonl");
    CHECK(!a.empty() && a == b, "history logs differ between executions");
}

// 6 ------------------------------------------------------------------------
void dataset_fidelity() {
    for (auto bm : {data::Benchmark::oscillator1, data::Benchmark::oscillator2}) {
        data::GeneratorSpec spec;
        spec.benchmark = bm;
        const auto sys = data::ode_system(spec);
        const auto coarse = data::integrate_rk4(sys.rhs, sys.initial, 0.0, 50.0, 0.01);
        const auto fine = data::integrate_rk4(sys.rhs, sys.initial, 0.0, 50.0, 0.005);
        CHECK(fine.size() == 2 * coarse.size() - 1, "grid sizes");
        double worst = 0.0;
        for (std::size_t i = 0; i < coarse.size(); ++i)
            for (std::size_t k = 0; k < coarse[i].size(); ++k)
                worst = std::max(worst, std::fabs(coarse[i][k] - fine[2 * i][k]));
        CHECK(worst < 1e-6, data::to_string(bm) << " halved-step deviation " << worst);
    }
    for (auto bm : {data::Benchmark::oscillator1, data::Benchmark::oscillator2, data::Benchmark::ecoli_growth,
                    data::Benchmark::lsr_transform_I_37_4, data::Benchmark::lsr_transform_III_4_33,
                    data::Benchmark::lsr_synth_crk0}) {
        data::GeneratorSpec spec;
        spec.benchmark = bm;
        spec.seed = 6;
        const auto d = data::generate(spec);
        const auto vars = d.variable_names();
        const auto e = must_parse(data::ground_truth(spec).expression, vars);
        const auto pred = expr::evaluate(e, {}, d.X, vars);
        CHECK(pred.has_value(), data::to_string(bm) << " ground truth failed to evaluate");
        for (std::size_t i = 0; i < d.size(); ++i)
            CHECK(std::fabs((*pred)[i] - d.y[i]) <= 1e-10 * std::max(1.0, std::fabs(d.y[i])),
                  data::to_string(bm) << " row " << i << ": " << (*pred)[i] << " vs " << d.y[i]);
    }
    data::GeneratorSpec crk0;
    crk0.benchmark = data::Benchmark::lsr_synth_crk0;
    const double row[] = {1.0, 0.0};
    CHECK(data::governing_rhs(crk0, row) == 0.0, "CRK0 at A=0 is " << data::governing_rhs(crk0, row));
    const std::vector<std::string> vars = {"t", "A"};
    const auto parsed = expr::evaluate_row(must_parse(data::ground_truth(crk0).expression, vars), {}, row, vars);
    CHECK(parsed.has_value() && *parsed == 0.0, "parsed CRK0 at A=0 is not 0");
}

// 7 ------------------------------------------------------------------------
void noise_protocol() {
    data::GeneratorSpec clean_spec;
    clean_spec.benchmark = data::Benchmark::oscillator1;
    clean_spec.seed = 77;
    clean_spec.n_train = 10000;
    clean_spec.ode.step_size = 0.001;  // the default grid holds too few early-time points
    auto noisy_spec = clean_spec;
    noisy_spec.noise_sigma = 0.002;
    const auto clean = data::generate(clean_spec);
    const auto noisy = data::generate(noisy_spec);
    CHECK(clean.X == noisy.X && clean.splits == noisy.splits, "noise changed inputs or splits");
    double sum = 0.0, sq = 0.0;
    for (auto i : clean.splits.train) {
        const double diff = noisy.y[i] - clean.y[i];
        sum += diff;
        sq += diff * diff;
    }
    const double n = static_cast<double>(clean.splits.train.size());
    const double sd = std::sqrt((sq - sum * sum / n) / (n - 1.0));
    CHECK(std::fabs(sd - 0.002) <= 0.1 * 0.002, "noise sd " << sd);
    for (auto split : {data::Split::id_test, data::Split::ood_test})
        for (auto i : clean.splits.get(split))
            CHECK(std::memcmp(&clean.y[i], &noisy.y[i], sizeof(double)) == 0, "test target changed at row " << i);
    const auto gt = data::ground_truth(noisy_spec);
    const auto vars = noisy.variable_names();
    const auto e = must_parse(gt.skeleton, vars);
    for (auto split : {data::Split::id_test, data::Split::ood_test}) {
        const auto rep = metrics::report(e, gt.true_params, noisy, split);
        CHECK(rep.has_value(), "metrics failed on " << data::to_string(split) << ": " << rep.error());
        CHECK(rep->nmse < 1e-20, "clean split NMSE " << rep->nmse);
    }
}

// 8 ------------------------------------------------------------------------
expr::NodePtr random_tree(std::mt19937_64& rng, const std::vector<std::string>& vars, int depth) {
    const int pick = static_cast<int>(rng() % (depth <= 0 ? 3 : 5));
    switch (pick) {
        case 0: return expr::var(vars[rng() % vars.size()]);
        case 1:
            return expr::lit(rng() % 3 == 0 ? static_cast<double>(rng() % 50)
                                            : std::uniform_real_distribution<double>(0.0, 1e3)(rng));
        case 2: return expr::param(rng() % 10);
        case 3: return expr::unary(static_cast<expr::UnaryOp>(rng() % 9), random_tree(rng, vars, depth - 1));
        default:
            return expr::binary(static_cast<expr::BinaryOp>(rng() % 5), random_tree(rng, vars, depth - 1),
                                random_tree(rng, vars, depth - 1));
    }
}

void parser_suite() {
    const std::vector<std::string> vars = {"x", "v", "t"};
    std::mt19937_64 rng(8);
    for (int i = 0; i < 10000; ++i) {
        const auto e = expr::Expression::from_tree(random_tree(rng, vars, 6));
        const auto text = expr::render(e);
        const auto back = expr::parse(text, vars);
        CHECK(back.has_value(), "re-parse failed: " << text);
        CHECK(*back == e && expr::render(*back) == text, "round trip changed " << text);
    }
    for (const char* bad : {"erf(x)", "gamma(x)", "sinh(x)", "max(x, v)", "x % v", "x | v", "arcsin(x)", "y + 1"}) {
        const auto r = expr::parse(bad, vars);
        CHECK(!r.has_value(), "accepted '" << bad << "'");
    }
    const std::vector<double> none;
    const auto run = [&](const char* text, double value) {
        const std::vector<std::string> one = {"x"};
        return expr::evaluate(must_parse(text, one), none, Matrix(1, 1, value), one);
    };
    const auto domain = run("sqrt(x)", -4.0);
    CHECK(!domain && domain.error().kind == expr::EvalErrorKind::domain, "sqrt(-4) not a domain error");
    const auto overflow = run("exp(x)", 800.0);
    CHECK(!overflow && overflow.error().kind == expr::EvalErrorKind::overflow, "exp(800) not an overflow");
    const auto non_finite = run("x * 2", std::numeric_limits<double>::infinity());
    CHECK(!non_finite && non_finite.error().kind == expr::EvalErrorKind::non_finite, "inf input not non_finite");
}

// 9 ------------------------------------------------------------------------
void ablation_reduction() {
    const auto d = data::generate(testkit::small_oscillator1_spec(12));
    auto cfg = replay_config();
    cfg.insight_probability = 0.0;
    cfg.toggles = {false, false, false};
    CHECK(cfg.llm_sr_equivalent(), "config not recognised as the reduced loop");
    llm::ReplayBackend backend(testkit::replay_script(cfg.iterations, cfg.b));
    ideas::IdeaLibrary lib;
    engine::MemoryRunLog log;
    const auto r = engine::run(cfg, d, backend, prompts::TemplateSet::defaults(), lib, log);
    CHECK(r.status == engine::RunStatus::completed, "run " << engine::to_string(r.status) << ": " << r.error);
    CHECK(log.prompts.size() == cfg.iterations, "prompt count " << log.prompts.size());
    for (const auto& line : log.prompts) {
        const auto prompt = nlohmann::json::parse(line).at("prompt").get<std::string>();
        CHECK(prompt.find(engine::kInsightHeader) == std::string::npos, "insight section in a prompt");
        CHECK(prompt.find(engine::kIdeasHeader) == std::string::npos, "idea section in a prompt");
    }
    CHECK(backend.served(llm::Role::data) == 0 && backend.served(llm::Role::idea) == 0,
          "data or idea role was called");
    CHECK(lib.total() == 0, "ideas were stored");
}

// 10 -----------------------------------------------------------------------
void check_live_run(const fs::path& dir, const nlohmann::json& backend) {
    const nlohmann::json cfg = {
        {"dataset", {{"generate", {{"benchmark", "oscillator1"}, {"seed", 1}, {"n_train", 100}, {"n_id", 50}, {"n_ood", 50}}}}},
        {"engine", {{"iterations", 20}, {"b", 4}, {"seed", 3}, {"view_size", 30}, {"fit", {{"restarts", 2}}}}},
        {"backend", backend},
        {"output_dir", "run"}};
    write_file_atomic(dir / "config.json", cfg.dump(2));
    nlohmann::json manifest;
    try {
        manifest = cli::run_from_config(dir / "config.json", {});
    } catch (const cli::CommandError& e) {
        CHECK(false, "run failed with exit code " << e.code() << ": " << e.what());
    }
    CHECK(fs::exists(dir / "run" / "manifest.json"), "manifest missing");
    CHECK(manifest.at("status") == "completed", "status " << manifest.at("status"));
    CHECK(manifest.at("uses_network") == true, "backend not flagged as networked");
    const auto history = read_file(dir / "run" / "history.jsonl");
    std::istringstream in(history);
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line); ++lines) {
        const double vr = nlohmann::json::parse(line).at("valid_rate").get<double>();
        CHECK(vr >= 0.0 && vr <= 1.0, "valid_rate " << vr);
    }
    CHECK(lines == 80, "history lines " << lines);
}

std::string live_note;

void live_backend_smoke() {
    {
        testkit::MockChatServer server;
        testkit::TempDir dir("accept10");
        check_live_run(dir.path(), {{"kind", "openai"},
                                    {"base_url", server.base_url()},
                                    {"model", "mock"},
                                    {"max_retries", 1},
                                    {"timeout_s", 10}});
        CHECK(!server.bodies().empty(), "mock endpoint saw no traffic");
    }
    const char* live = std::getenv("DRSR_LIVE_BASE_URL");
    if (live == nullptr || *live == '\0') {
        live_note = " (local endpoint; set DRSR_LIVE_BASE_URL to also exercise a remote one)";
        return;
    }
    const char* model = std::getenv("DRSR_LIVE_MODEL");
    testkit::TempDir dir("accept10live");
    check_live_run(dir.path(), {{"kind", "openai"},
                                {"base_url", live},
                                {"model", model ? model : ""},
                                {"max_retries", 3},
                                {"timeout_s", 120}});
    live_note = " (local and remote endpoints)";
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<void()> body;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "ground-truth recovery", 30, ground_truth_recovery},
        {2, "metric oracles", 5, metric_oracles},
        {3, "categorisation decision table", 1, decision_table},
        {4, "recency sampling", 5, recency_sampling},
        {5, "replay determinism", 20, replay_determinism},
        {6, "dataset fidelity", 30, dataset_fidelity},
        {7, "noise protocol", 10, noise_protocol},
        {8, "parser and evaluator suite", 30, parser_suite},
        {9, "ablation reduction", 20, ablation_reduction},
        {10, "chat backend smoke run", 600, live_backend_smoke},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            c.body();
        } catch (const Failure& f) {
            error = f.what;
        } catch (const std::exception& e) {
            error = std::string("unexpected exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (error.empty() && secs > c.budget_s) {
            std::ostringstream os;
            os << "took " << secs << " s, budget " << c.budget_s << " s";
            error = os.str();
        }
        std::ostringstream line;
        line.setf(std::ios::fixed);
        line.precision(2);
        if (error.empty()) {
            line << "PASS " << c.id << " " << c.name << " (" << secs << " s)";
            if (c.id == 10) line << live_note;
        } else {
            ++failures;
            line << "FAIL " << c.id << " " << c.name << " (" << secs << " s): " << error;
        }
        std::cout << line.str() << std::endl;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
