#include <benchmark/benchmark.h>

#include <vector>

#include "drsr/dataset.hpp"
#include "drsr/expr.hpp"
#include "drsr/fit.hpp"

using namespace drsr;

namespace {

const std::vector<std::string> kVars = {"x", "v"};
constexpr const char* kSkeleton = "params[0]*sin(x) - params[1]*x*v - params[2]*v^3 - params[3]*x^3 - x*cos(x)";

data::Dataset oscillator(std::size_t n_train) {
    data::GeneratorSpec spec;
    spec.benchmark = data::Benchmark::oscillator1;
    spec.n_train = n_train;
    spec.seed = 1;
    return data::generate(spec);
}

}  // namespace

static void BM_Parse(benchmark::State& state) {
    for (auto _ : state) {
        auto e = expr::parse(kSkeleton, kVars);
        benchmark::DoNotOptimize(e);
    }
}
BENCHMARK(BM_Parse);

static void BM_Evaluate(benchmark::State& state) {
    const auto d = oscillator(static_cast<std::size_t>(state.range(0)));
    const auto e = *expr::parse(kSkeleton, kVars);
    const std::vector<double> params = {0.8, 0.5, 0.5, 0.2};
    const auto names = d.variable_names();
    for (auto _ : state) {
        auto r = expr::evaluate(e, params, d.X, names);
        benchmark::DoNotOptimize(r);
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * d.size()));
}
BENCHMARK(BM_Evaluate)->Arg(100)->Arg(500)->Arg(2000);

static void BM_Fit(benchmark::State& state) {
    const auto d = oscillator(500);
    const auto e = *expr::parse(kSkeleton, kVars);
    fit::FitConfig cfg;
    cfg.restarts = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        auto r = fit::fit(e, d, cfg, 3);
        benchmark::DoNotOptimize(r);
    }
}
BENCHMARK(BM_Fit)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

static void BM_Rk4(benchmark::State& state) {
    data::GeneratorSpec spec;
    spec.benchmark = data::Benchmark::oscillator2;
    const auto sys = data::ode_system(spec);
    for (auto _ : state) {
        auto traj = data::integrate_rk4(sys.rhs, sys.initial, 0.0, 50.0, 0.01);
        benchmark::DoNotOptimize(traj);
    }
}
BENCHMARK(BM_Rk4)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
