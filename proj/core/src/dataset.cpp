#include "drsr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "drsr/expr.hpp"
#include "drsr/util.hpp"

namespace drsr::data {

namespace {

constexpr double kPi = std::numbers::pi;

// Literal in expression grammar (literals are unsigned).
std::string lit(double v) {
    if (std::signbit(v)) return "(-" + format_double(-v) + ")";
    return format_double(v);
}

double constant(const std::map<std::string, double>& c, const std::string& name) {
    auto it = c.find(name);
    if (it == c.end()) throw SpecError("missing benchmark constant '" + name + "'");
    return it->second;
}

std::map<std::string, double> resolved_constants(const GeneratorSpec& spec) {
    auto c = default_constants(spec.benchmark);
    for (const auto& [k, v] : spec.constants) {
        if (!c.contains(k))
            throw SpecError("unknown constant '" + k + "' for benchmark " + std::string(to_string(spec.benchmark)));
        c[k] = v;
    }
    return c;
}

struct InputRange {
    double lo;
    double hi;
};

std::vector<InputRange> input_ranges(Benchmark b) {
    switch (b) {
        case Benchmark::ecoli_growth: return {{0.1, 10.0}, {0.1, 10.0}, {10.0, 50.0}, {4.0, 10.0}};
        case Benchmark::lsr_transform_I_37_4: return {{1.0, 5.0}, {1.0, 5.0}, {1.0, 5.0}};
        case Benchmark::lsr_transform_III_4_33: return {{1.0, 5.0}, {1.0, 5.0}, {1.0, 5.0}, {1.0, 5.0}};
        default: return {};
    }
}

// Native right-hand sides. Argument order matches GroundTruth::inputs.
double oscillator1_rhs(const std::map<std::string, double>& c, double x, double v) {
    return constant(c, "F") * std::sin(constant(c, "omega") * x) - constant(c, "alpha") * v * v * v -
           constant(c, "beta") * x * x * x - constant(c, "gamma") * x * v - x * std::cos(x);
}

double oscillator2_rhs(const std::map<std::string, double>& c, double t, double x, double v) {
    return constant(c, "F") * std::sin(constant(c, "omega") * t) - constant(c, "alpha") * v * v * v -
           constant(c, "beta") * x * v - constant(c, "delta") * x * std::exp(constant(c, "gamma") * x);
}

double crk0_rhs(const std::map<std::string, double>& c, double a) {
    const double a2 = a * a;
    return -constant(c, "k1") * a2 + constant(c, "k2") * a2 / (constant(c, "c") * a2 * a2 + 1.0);
}

double ecoli_rhs(const std::map<std::string, double>& c, double b, double s, double temp, double ph) {
    const double ph_min = constant(c, "pH_min");
    const double ph_max = constant(c, "pH_max");
    const double growth = constant(c, "mu_max") * b * (s / (constant(c, "K_S") + s));
    const double thermal = std::tanh(constant(c, "k") * (temp - constant(c, "x0"))) /
                           (1.0 + constant(c, "c") * std::pow(temp - constant(c, "x_decay"), 4.0));
    const double acidity = std::exp(-std::fabs(ph - constant(c, "pH_opt"))) *
                           std::pow(std::sin((ph - ph_min) * kPi / (ph_max - ph_min)), 2.0);
    return growth * thermal * acidity;
}

double wave_intensity_rhs(double delta, double i2, double in) {
    const double c = std::cos(delta);
    const double inner = i2 * c * c + i2 + in;
    return 2.0 * i2 * c * c + i2 + in + 2.0 * std::sqrt(i2 * inner) * c;
}

double oscillator_temperature_rhs(double en, double h, double omega, double kb) {
    return h * omega / (2.0 * kPi * kb * std::log(1.0 + h * omega / (2.0 * kPi * en)));
}

std::vector<std::size_t> choose_without_replacement(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(count);
    return pool;
}

void add_rows(Dataset& d, const std::vector<std::vector<double>>& inputs, const std::vector<double>& targets,
              std::vector<std::size_t>& split) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        split.push_back(d.y.size());
        d.X.append_row(inputs[i]);
        d.y.push_back(targets[i]);
    }
}

Dataset empty_dataset(const GeneratorSpec& spec, const GroundTruth& gt) {
    Dataset d;
    d.name = std::string(to_string(spec.benchmark));
    d.benchmark = d.name;
    d.variables = gt.inputs;
    d.target = gt.target;
    d.X = Matrix(0, gt.inputs.size());
    d.seed = spec.seed;
    d.noise_sigma = spec.noise_sigma;
    d.acc_tau = default_acc_tau(spec.benchmark);
    d.ground_truth = gt.expression;
    return d;
}

Dataset generate_time_series(const GeneratorSpec& spec) {
    const auto gt = ground_truth(spec);
    const auto system = ode_system(spec);
    const auto states = integrate_rk4(system.rhs, system.initial, 0.0, spec.ode.t_max, spec.ode.step_size);
    const std::size_t steps = states.size() - 1;
    const double h = spec.ode.t_max / static_cast<double>(steps);
    const double cutoff = spec.ode.id_fraction * spec.ode.t_max;

    std::vector<std::size_t> id_pool;
    std::vector<std::size_t> ood_pool;
    for (std::size_t i = 0; i < states.size(); ++i) {
        (static_cast<double>(i) * h <= cutoff + 1e-12 ? id_pool : ood_pool).push_back(i);
    }
    if (id_pool.size() < spec.n_train + spec.n_id)
        throw DatasetError("time grid holds " + std::to_string(id_pool.size()) + " in-distribution points, " +
                           std::to_string(spec.n_train + spec.n_id) + " requested; decrease ode.step_size");
    if (ood_pool.size() < spec.n_ood)
        throw DatasetError("time grid holds " + std::to_string(ood_pool.size()) + " out-of-distribution points, " +
                           std::to_string(spec.n_ood) + " requested; decrease ode.step_size");

    Rng rng(derive_seed(spec.seed, {0x73706c6974ULL}));
    auto picked = choose_without_replacement(id_pool, spec.n_train + spec.n_id, rng);
    std::vector<std::size_t> train(picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(spec.n_train));
    std::vector<std::size_t> id(picked.begin() + static_cast<std::ptrdiff_t>(spec.n_train), picked.end());
    auto ood = choose_without_replacement(ood_pool, spec.n_ood, rng);
    std::sort(train.begin(), train.end());
    std::sort(id.begin(), id.end());
    std::sort(ood.begin(), ood.end());

    auto rows_for = [&](const std::vector<std::size_t>& grid) {
        std::vector<std::vector<double>> inputs;
        std::vector<double> targets;
        for (auto g : grid) {
            const double t = static_cast<double>(g) * h;
            const auto& s = states[g];
            std::vector<double> row;
            switch (spec.benchmark) {
                case Benchmark::oscillator1: row = {s[0], s[1]}; break;
                case Benchmark::oscillator2: row = {t, s[0], s[1]}; break;
                case Benchmark::lsr_synth_crk0: row = {t, s[0]}; break;
                default: throw SpecError("not a time-series benchmark");
            }
            targets.push_back(governing_rhs(spec, row));
            inputs.push_back(std::move(row));
        }
        return std::pair{inputs, targets};
    };

    Dataset d = empty_dataset(spec, gt);
    auto [tr_x, tr_y] = rows_for(train);
    auto [id_x, id_y] = rows_for(id);
    auto [ood_x, ood_y] = rows_for(ood);
    add_rows(d, tr_x, tr_y, d.splits.train);
    add_rows(d, id_x, id_y, d.splits.id_test);
    add_rows(d, ood_x, ood_y, d.splits.ood_test);
    return d;
}

Dataset generate_tabular(const GeneratorSpec& spec) {
    const auto gt = ground_truth(spec);
    const auto ranges = input_ranges(spec.benchmark);
    const double half_band = spec.ood_band / 2.0;
    Rng rng(derive_seed(spec.seed, {0x7461626c65ULL}));

    auto draw_inner = [&]() {
        std::vector<double> row;
        for (const auto& r : ranges) {
            const double w = r.hi - r.lo;
            std::uniform_real_distribution<double> u(r.lo + half_band * w, r.hi - half_band * w);
            row.push_back(u(rng));
        }
        return row;
    };
    auto draw_outer = [&]() {
        while (true) {
            std::vector<double> row;
            bool outside = false;
            for (const auto& r : ranges) {
                const double w = r.hi - r.lo;
                std::uniform_real_distribution<double> u(r.lo, r.hi);
                const double v = u(rng);
                outside = outside || v < r.lo + half_band * w || v > r.hi - half_band * w;
                row.push_back(v);
            }
            if (outside) return row;
        }
    };
    auto draw = [&](std::size_t n, bool outer) {
        std::vector<std::vector<double>> inputs;
        std::vector<double> targets;
        for (std::size_t i = 0; i < n; ++i) {
            auto row = outer ? draw_outer() : draw_inner();
            const double y = governing_rhs(spec, row);
            if (!std::isfinite(y)) throw DatasetError("non-finite target while sampling " + std::string(to_string(spec.benchmark)));
            targets.push_back(y);
            inputs.push_back(std::move(row));
        }
        return std::pair{inputs, targets};
    };

    Dataset d = empty_dataset(spec, gt);
    auto [tr_x, tr_y] = draw(spec.n_train, false);
    auto [id_x, id_y] = draw(spec.n_id, false);
    auto [ood_x, ood_y] = draw(spec.n_ood, true);
    add_rows(d, tr_x, tr_y, d.splits.train);
    add_rows(d, id_x, id_y, d.splits.id_test);
    add_rows(d, ood_x, ood_y, d.splits.ood_test);
    return d;
}

void add_train_noise(Dataset& d, double sigma, std::uint64_t seed) {
    if (sigma <= 0.0) return;
    Rng rng(derive_seed(seed, {0x6e6f697365ULL}));
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto i : d.splits.train) d.y[i] += noise(rng);
}

// --------------------------------------------------------------------------
// CSV

std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        auto comma = line.find(',', start);
        auto cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
        while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
        cells.push_back(cell);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open CSV file " + path.string());
    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view(line);
        if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
        if (view.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        auto cells = split_csv_line(view);
        if (table.header.empty()) {
            for (auto c : cells) table.header.emplace_back(c);
            continue;
        }
        if (cells.size() != table.header.size())
            throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(table.header.size()) + " values, found " + std::to_string(cells.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (auto c : cells) {
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
            if (c.empty() || ec != std::errc{} || ptr != c.data() + c.size())
                throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": malformed number '" +
                                   std::string(c) + "'");
            if (!std::isfinite(v))
                throw DatasetError(path.string() + ":" + std::to_string(line_no) + ": non-finite value '" +
                                   std::string(c) + "'");
            row.push_back(v);
        }
        table.rows.push_back(std::move(row));
    }
    if (table.header.empty()) throw DatasetError(path.string() + ": missing header row");
    return table;
}

Splits range_splits(const Matrix& X, const SplitPolicy& policy) {
    const std::size_t n = X.rows();
    const std::size_t d = X.cols();
    std::vector<double> lo(d, 0.0), hi(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
        lo[c] = hi[c] = n > 0 ? X(0, c) : 0.0;
        for (std::size_t r = 1; r < n; ++r) {
            lo[c] = std::min(lo[c], X(r, c));
            hi[c] = std::max(hi[c], X(r, c));
        }
    }
    const double half_band = policy.ood_band / 2.0;
    std::vector<std::size_t> inner;
    std::vector<std::size_t> outer;
    for (std::size_t r = 0; r < n; ++r) {
        bool out = false;
        for (std::size_t c = 0; c < d; ++c) {
            const double w = hi[c] - lo[c];
            if (w > 0.0 && (X(r, c) < lo[c] + half_band * w || X(r, c) > hi[c] - half_band * w)) out = true;
        }
        (out ? outer : inner).push_back(r);
    }
    // Too few interior rows to train on: keep everything in-distribution.
    if (inner.size() < 2) {
        inner.resize(n);
        std::iota(inner.begin(), inner.end(), std::size_t{0});
        outer.clear();
    }
    Rng rng(derive_seed(policy.seed, {0x637376ULL}));
    std::shuffle(inner.begin(), inner.end(), rng);
    const auto n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(policy.train_fraction * static_cast<double>(inner.size()) - 1e-9)));
    Splits s;
    s.train.assign(inner.begin(), inner.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, inner.size())));
    s.id_test.assign(inner.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, inner.size())), inner.end());
    s.ood_test = outer;
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.id_test.begin(), s.id_test.end());
    return s;
}

std::vector<std::size_t> index_list(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_array()) throw DatasetError(std::string("metadata: missing split '") + key + "'");
    std::vector<std::size_t> out;
    for (const auto& v : j.at(key)) {
        if (!v.is_number_unsigned()) throw DatasetError(std::string("metadata: split '") + key + "' holds a non-index");
        out.push_back(v.get<std::size_t>());
    }
    return out;
}

nlohmann::json variable_json(const VariableInfo& v) {
    return {{"name", v.name}, {"unit", v.unit}, {"description", v.description}};
}

VariableInfo variable_from_json(const nlohmann::json& j) {
    VariableInfo v;
    v.name = j.at("name").get<std::string>();
    v.unit = j.value("unit", "");
    v.description = j.value("description", "");
    return v;
}

template <typename T>
T spec_field(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v.is_number_unsigned()) throw SpecError(std::string("'") + key + "' must be a non-negative integer");
        return v.get<T>();
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw SpecError(std::string("'") + key + "' must be a number");
        return v.get<double>();
    } else {
        if (!v.is_string()) throw SpecError(std::string("'") + key + "' must be a string");
        return v.get<std::string>();
    }
}

}  // namespace

// --------------------------------------------------------------------------

std::string_view to_string(Split s) noexcept {
    switch (s) {
        case Split::train: return "train";
        case Split::id_test: return "id_test";
        case Split::ood_test: return "ood_test";
    }
    return "?";
}

const std::vector<std::size_t>& Splits::get(Split s) const noexcept {
    switch (s) {
        case Split::train: return train;
        case Split::id_test: return id_test;
        case Split::ood_test: return ood_test;
    }
    return train;
}

std::vector<std::string> Dataset::variable_names() const {
    std::vector<std::string> names;
    names.reserve(variables.size());
    for (const auto& v : variables) names.push_back(v.name);
    return names;
}

SplitData Dataset::split(Split s) const {
    SplitData out;
    out.indices = splits.get(s);
    out.X = Matrix(0, X.cols());
    for (auto i : out.indices) {
        out.X.append_row(X.row(i));
        out.y.push_back(y[i]);
    }
    return out;
}

void Dataset::validate() const {
    if (variables.empty()) throw DatasetError("dataset '" + name + "' has no input variables");
    std::set<std::string> names;
    for (const auto& v : variables) {
        if (!expr::is_valid_variable_name(v.name))
            throw DatasetError("variable name '" + v.name + "' is not a valid identifier");
        if (!names.insert(v.name).second) throw DatasetError("duplicate variable name '" + v.name + "'");
    }
    if (X.cols() != variables.size()) throw DatasetError("input matrix width does not match variable list");
    if (X.rows() != y.size()) throw DatasetError("input and target row counts differ");
    for (double v : X.data())
        if (!std::isfinite(v)) throw DatasetError("non-finite input value in dataset '" + name + "'");
    for (double v : y)
        if (!std::isfinite(v)) throw DatasetError("non-finite target value in dataset '" + name + "'");
    if (splits.train.empty()) throw DatasetError("train split of '" + name + "' is empty");
    std::vector<bool> used(y.size(), false);
    for (const auto* split : {&splits.train, &splits.id_test, &splits.ood_test}) {
        for (auto i : *split) {
            if (i >= y.size()) throw DatasetError("split index " + std::to_string(i) + " out of range");
            if (used[i]) throw DatasetError("row " + std::to_string(i) + " belongs to more than one split");
            used[i] = true;
        }
    }
}

std::string_view to_string(Benchmark b) noexcept {
    switch (b) {
        case Benchmark::oscillator1: return "oscillator1";
        case Benchmark::oscillator2: return "oscillator2";
        case Benchmark::ecoli_growth: return "ecoli_growth";
        case Benchmark::stress_strain_csv: return "stress_strain_csv";
        case Benchmark::lsr_transform_I_37_4: return "lsr_transform_I_37_4";
        case Benchmark::lsr_transform_III_4_33: return "lsr_transform_III_4_33";
        case Benchmark::lsr_synth_crk0: return "lsr_synth_crk0";
    }
    return "?";
}

Benchmark benchmark_from_string(std::string_view name) {
    for (auto b : {Benchmark::oscillator1, Benchmark::oscillator2, Benchmark::ecoli_growth, Benchmark::stress_strain_csv,
                   Benchmark::lsr_transform_I_37_4, Benchmark::lsr_transform_III_4_33, Benchmark::lsr_synth_crk0}) {
        if (to_string(b) == name) return b;
    }
    throw SpecError("unknown benchmark '" + std::string(name) + "'");
}

bool is_time_series(Benchmark b) noexcept {
    return b == Benchmark::oscillator1 || b == Benchmark::oscillator2 || b == Benchmark::lsr_synth_crk0;
}

double default_acc_tau(Benchmark b) noexcept {
    return (b == Benchmark::oscillator1 || b == Benchmark::oscillator2) ? 0.001 : 0.1;
}

void GeneratorSpec::validate() const {
    if (n_train == 0) throw SpecError("n_train must be positive");
    if (n_id == 0) throw SpecError("n_id must be positive");
    if (n_ood == 0) throw SpecError("n_ood must be positive");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw SpecError("noise_sigma must be finite and >= 0");
    if (!(ode.step_size > 0.0) || !(ode.t_max > 0.0) || ode.step_size > ode.t_max)
        throw SpecError("ode.step_size and ode.t_max must be positive with step_size <= t_max");
    if (!(ode.id_fraction > 0.0 && ode.id_fraction < 1.0)) throw SpecError("ode.id_fraction must lie in (0, 1)");
    if (!(ood_band > 0.0 && ood_band < 1.0)) throw SpecError("ood_band must lie in (0, 1)");
    if (benchmark == Benchmark::stress_strain_csv && csv_path.empty())
        throw SpecError("stress_strain_csv requires csv_path");
    if (benchmark != Benchmark::stress_strain_csv) (void)resolved_constants(*this);
}

nlohmann::json to_json(const GeneratorSpec& spec) {
    nlohmann::json j;
    j["benchmark"] = std::string(to_string(spec.benchmark));
    j["seed"] = spec.seed;
    j["n_train"] = spec.n_train;
    j["n_id"] = spec.n_id;
    j["n_ood"] = spec.n_ood;
    j["noise_sigma"] = spec.noise_sigma;
    j["ode"] = {{"step_size", spec.ode.step_size}, {"t_max", spec.ode.t_max}, {"id_fraction", spec.ode.id_fraction}};
    j["ood_band"] = spec.ood_band;
    j["constants"] = spec.constants;
    if (!spec.csv_path.empty()) j["csv_path"] = spec.csv_path;
    if (!spec.target_name.empty()) j["target"] = spec.target_name;
    return j;
}

GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SpecError("generator spec must be a JSON object");
    if (!j.contains("benchmark") || !j.at("benchmark").is_string()) throw SpecError("generator spec needs 'benchmark'");
    GeneratorSpec s;
    s.benchmark = benchmark_from_string(j.at("benchmark").get<std::string>());
    s.seed = spec_field<std::uint64_t>(j, "seed", s.seed);
    s.n_train = spec_field<std::size_t>(j, "n_train", s.n_train);
    s.n_id = spec_field<std::size_t>(j, "n_id", s.n_id);
    s.n_ood = spec_field<std::size_t>(j, "n_ood", s.n_ood);
    s.noise_sigma = spec_field<double>(j, "noise_sigma", s.noise_sigma);
    s.ood_band = spec_field<double>(j, "ood_band", s.ood_band);
    s.csv_path = spec_field<std::string>(j, "csv_path", s.csv_path);
    s.target_name = spec_field<std::string>(j, "target", s.target_name);
    if (j.contains("ode")) {
        const auto& o = j.at("ode");
        if (!o.is_object()) throw SpecError("'ode' must be an object");
        s.ode.step_size = spec_field<double>(o, "step_size", s.ode.step_size);
        s.ode.t_max = spec_field<double>(o, "t_max", s.ode.t_max);
        s.ode.id_fraction = spec_field<double>(o, "id_fraction", s.ode.id_fraction);
        if (o.contains("method") && o.at("method") != "RK4") throw SpecError("only the RK4 integrator is supported");
    }
    if (j.contains("constants")) {
        if (!j.at("constants").is_object()) throw SpecError("'constants' must be an object");
        for (const auto& [k, v] : j.at("constants").items()) {
            if (!v.is_number()) throw SpecError("constant '" + k + "' must be a number");
            s.constants[k] = v.get<double>();
        }
    }
    s.validate();
    return s;
}

std::map<std::string, double> default_constants(Benchmark b) {
    switch (b) {
        case Benchmark::oscillator1:
            return {{"F", 0.8}, {"alpha", 0.5}, {"beta", 0.2}, {"gamma", 0.5}, {"omega", 1.0}, {"x_init", 0.5}, {"v_init", 0.5}};
        case Benchmark::oscillator2:
            return {{"F", 0.3},   {"alpha", 0.5}, {"beta", 1.0},   {"delta", 5.0},
                    {"gamma", 0.5}, {"omega", 1.0}, {"x_init", 0.5}, {"v_init", 0.5}};
        case Benchmark::ecoli_growth:
            return {{"mu_max", 1.0}, {"K_S", 2.0},     {"k", 0.3},      {"x0", 20.0},    {"c", 1e-5},
                    {"x_decay", 40.0}, {"pH_opt", 7.0}, {"pH_min", 4.0}, {"pH_max", 10.0}};
        case Benchmark::lsr_synth_crk0: return {{"k1", 0.1899}, {"k2", 0.1899}, {"c", 0.7498}, {"A_init", 1.5}};
        case Benchmark::lsr_transform_I_37_4:
        case Benchmark::lsr_transform_III_4_33:
        case Benchmark::stress_strain_csv: return {};
    }
    return {};
}

GroundTruth ground_truth(const GeneratorSpec& spec) {
    const auto c = resolved_constants(spec);
    auto k = [&](const char* name) { return lit(constant(c, name)); };
    GroundTruth g;
    switch (spec.benchmark) {
        case Benchmark::oscillator1:
            g.inputs = {{"x", "", "displacement"}, {"v", "", "velocity"}};
            g.target = {"dv_dt", "", "acceleration"};
            g.expression = k("F") + "*sin(" + k("omega") + "*x) - " + k("alpha") + "*v^3 - " + k("beta") + "*x^3 - " +
                           k("gamma") + "*x*v - x*cos(x)";
            g.skeleton = "params[0]*sin(params[4]*x) - params[1]*v^3 - params[2]*x^3 - params[3]*x*v - x*cos(x)";
            g.true_params = {c.at("F"), c.at("alpha"), c.at("beta"), c.at("gamma"), c.at("omega")};
            break;
        case Benchmark::oscillator2:
            g.inputs = {{"t", "", "time"}, {"x", "", "displacement"}, {"v", "", "velocity"}};
            g.target = {"dv_dt", "", "acceleration"};
            g.expression = k("F") + "*sin(" + k("omega") + "*t) - " + k("alpha") + "*v^3 - " + k("beta") + "*x*v - " +
                           k("delta") + "*x*exp(" + k("gamma") + "*x)";
            g.skeleton =
                "params[0]*sin(params[5]*t) - params[1]*v^3 - params[2]*x*v - params[3]*x*exp(params[4]*x)";
            g.true_params = {c.at("F"), c.at("alpha"), c.at("beta"), c.at("delta"), c.at("gamma"), c.at("omega")};
            break;
        case Benchmark::lsr_synth_crk0:
            g.inputs = {{"t", "", "time"}, {"A", "", "concentration"}};
            g.target = {"dA_dt", "", "reaction rate"};
            g.expression = "-" + k("k1") + "*A^2 + " + k("k2") + "*A^2/(" + k("c") + "*A^4 + 1)";
            g.skeleton = "-params[0]*A^2 + params[1]*A^2/(params[2]*A^4 + 1)";
            g.true_params = {c.at("k1"), c.at("k2"), c.at("c")};
            break;
        case Benchmark::ecoli_growth:
            g.inputs = {{"B", "", "population density"},
                        {"S", "", "substrate concentration"},
                        {"T", "", "temperature"},
                        {"pH", "", "pH level"}};
            g.target = {"dB_dt", "", "population growth rate"};
            g.expression = k("mu_max") + "*B*(S/(" + k("K_S") + " + S))*(tanh(" + k("k") + "*(T - " + k("x0") +
                           "))/(1 + " + k("c") + "*(T - " + k("x_decay") + ")^4))*exp(-abs(pH - " + k("pH_opt") +
                           "))*sin((pH - " + k("pH_min") + ")*" + lit(kPi) + "/(" + k("pH_max") + " - " + k("pH_min") +
                           "))^2";
            g.skeleton =
                "params[0]*B*(S/(params[1] + S))*(tanh(params[2]*(T - params[3]))/(1 + params[4]*(T - params[5])^4))"
                "*exp(-abs(pH - params[6]))*sin((pH - params[7])*" + lit(kPi) + "/(params[8] - params[7]))^2";
            g.true_params = {c.at("mu_max"), c.at("K_S"), c.at("k"),      c.at("x0"),    c.at("c"),
                             c.at("x_decay"), c.at("pH_opt"), c.at("pH_min"), c.at("pH_max")};
            break;
        case Benchmark::lsr_transform_I_37_4:
            g.inputs = {{"delta", "rad", "phase difference"},
                        {"I2", "", "intensity of the second source"},
                        {"Int", "", "intensity of the first source"}};
            g.target = {"I1", "", "resultant intensity"};
            g.expression = "2*I2*cos(delta)^2 + I2 + Int + 2*sqrt(I2*(I2*cos(delta)^2 + I2 + Int))*cos(delta)";
            g.skeleton =
                "params[0]*I2*cos(delta)^2 + I2 + Int + params[1]*sqrt(I2*(I2*cos(delta)^2 + I2 + Int))*cos(delta)";
            g.true_params = {2.0, 2.0};
            break;
        case Benchmark::lsr_transform_III_4_33:
            g.inputs = {{"E_n", "", "energy of the n-th mode"},
                        {"h", "", "Planck constant"},
                        {"omega", "", "angular frequency"},
                        {"kb", "", "Boltzmann constant"}};
            g.target = {"T", "", "temperature"};
            g.expression = "h*omega/(2*" + lit(kPi) + "*kb*log(1 + h*omega/(2*" + lit(kPi) + "*E_n)))";
            g.skeleton = "h*omega/(params[0]*kb*log(1 + h*omega/(params[1]*E_n)))";
            g.true_params = {2.0 * kPi, 2.0 * kPi};
            break;
        case Benchmark::stress_strain_csv: throw SpecError("stress_strain_csv has no closed-form ground truth");
    }
    return g;
}

double governing_rhs(const GeneratorSpec& spec, std::span<const double> in) {
    const auto c = resolved_constants(spec);
    switch (spec.benchmark) {
        case Benchmark::oscillator1: return oscillator1_rhs(c, in[0], in[1]);
        case Benchmark::oscillator2: return oscillator2_rhs(c, in[0], in[1], in[2]);
        case Benchmark::lsr_synth_crk0: return crk0_rhs(c, in[1]);
        case Benchmark::ecoli_growth: return ecoli_rhs(c, in[0], in[1], in[2], in[3]);
        case Benchmark::lsr_transform_I_37_4: return wave_intensity_rhs(in[0], in[1], in[2]);
        case Benchmark::lsr_transform_III_4_33: return oscillator_temperature_rhs(in[0], in[1], in[2], in[3]);
        case Benchmark::stress_strain_csv: break;
    }
    throw SpecError("stress_strain_csv has no closed-form ground truth");
}

OdeSystem ode_system(const GeneratorSpec& spec) {
    const auto c = resolved_constants(spec);
    switch (spec.benchmark) {
        case Benchmark::oscillator1:
            return {[c](double, std::span<const double> s, std::span<double> ds) {
                        ds[0] = s[1];
                        ds[1] = oscillator1_rhs(c, s[0], s[1]);
                    },
                    {c.at("x_init"), c.at("v_init")}};
        case Benchmark::oscillator2:
            return {[c](double t, std::span<const double> s, std::span<double> ds) {
                        ds[0] = s[1];
                        ds[1] = oscillator2_rhs(c, t, s[0], s[1]);
                    },
                    {c.at("x_init"), c.at("v_init")}};
        case Benchmark::lsr_synth_crk0:
            return {[c](double, std::span<const double> s, std::span<double> ds) { ds[0] = crk0_rhs(c, s[0]); },
                    {c.at("A_init")}};
        default: throw SpecError(std::string(to_string(spec.benchmark)) + " is not a time-series benchmark");
    }
}

std::vector<std::vector<double>> integrate_rk4(const OdeRhs& rhs, std::vector<double> initial, double t0, double t1,
                                               double step) {
    if (!(step > 0.0) || !(t1 > t0)) throw std::invalid_argument("integrate_rk4: need step > 0 and t1 > t0");
    const auto steps = static_cast<std::size_t>(std::llround((t1 - t0) / step));
    if (steps == 0) throw std::invalid_argument("integrate_rk4: step larger than the interval");
    const double h = (t1 - t0) / static_cast<double>(steps);
    const std::size_t dim = initial.size();
    std::vector<std::vector<double>> out;
    out.reserve(steps + 1);
    out.push_back(initial);
    std::vector<double> y = std::move(initial);
    std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), tmp(dim);
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = t0 + static_cast<double>(i) * h;
        rhs(t, y, k1);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + 0.5 * h * k1[j];
        rhs(t + 0.5 * h, tmp, k2);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + 0.5 * h * k2[j];
        rhs(t + 0.5 * h, tmp, k3);
        for (std::size_t j = 0; j < dim; ++j) tmp[j] = y[j] + h * k3[j];
        rhs(t + h, tmp, k4);
        for (std::size_t j = 0; j < dim; ++j) {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            if (!std::isfinite(y[j]))
                throw DatasetError("integration blew up at t = " + format_double(t + h));
        }
        out.push_back(y);
    }
    return out;
}

Dataset generate(const GeneratorSpec& spec) {
    spec.validate();
    Dataset d;
    if (spec.benchmark == Benchmark::stress_strain_csv) {
        const auto table = read_csv(spec.csv_path);
        if (table.header.size() < 2) throw DatasetError("stress-strain CSV needs at least one input and a target column");
        const std::string target = spec.target_name.empty() ? table.header.back() : spec.target_name;
        std::vector<VariableInfo> schema;
        for (const auto& h : table.header)
            if (h != target) schema.push_back({h, "", ""});
        if (schema.size() + 1 != table.header.size())
            throw DatasetError("target column '" + target + "' not found in " + spec.csv_path);
        // load_csv expects the target last.
        if (table.header.back() != target) throw DatasetError("target column must be the last CSV column");
        d = load_csv(spec.csv_path, schema, {target, "", ""}, {spec.ood_band, 2.0 / 3.0, spec.seed});
        d.name = std::filesystem::path(spec.csv_path).stem().string();
        d.benchmark = std::string(to_string(spec.benchmark));
        d.acc_tau = default_acc_tau(spec.benchmark);
    } else if (is_time_series(spec.benchmark)) {
        d = generate_time_series(spec);
    } else {
        d = generate_tabular(spec);
    }
    d.seed = spec.seed;
    d.noise_sigma = spec.noise_sigma;
    add_train_noise(d, spec.noise_sigma, spec.seed);
    d.validate();
    return d;
}

Dataset load_csv(const std::filesystem::path& path, std::span<const VariableInfo> schema, const VariableInfo& target,
                 const SplitPolicy& policy) {
    const auto table = read_csv(path);
    std::vector<std::string> expected;
    for (const auto& v : schema) expected.push_back(v.name);
    expected.push_back(target.name);
    if (table.header != expected) {
        std::string want;
        for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
        throw DatasetError(path.string() + ": header does not match schema (expected " + want + ")");
    }
    Dataset d;
    d.name = path.stem().string();
    d.benchmark = "csv";
    d.variables.assign(schema.begin(), schema.end());
    d.target = target;
    d.X = Matrix(0, schema.size());
    for (const auto& row : table.rows) {
        d.X.append_row(std::span<const double>(row.data(), schema.size()));
        d.y.push_back(row.back());
    }
    if (d.y.empty()) throw DatasetError(path.string() + ": no data rows");
    d.splits = range_splits(d.X, policy);
    d.seed = policy.seed;
    d.validate();
    return d;
}

nlohmann::json metadata_json(const Dataset& d) {
    nlohmann::json vars = nlohmann::json::array();
    for (const auto& v : d.variables) vars.push_back(variable_json(v));
    return {
        {"name", d.name},
        {"benchmark", d.benchmark},
        {"variables", vars},
        {"target", variable_json(d.target)},
        {"rows", d.y.size()},
        {"splits", {{"train", d.splits.train}, {"id_test", d.splits.id_test}, {"ood_test", d.splits.ood_test}}},
        {"seed", d.seed},
        {"noise_sigma", d.noise_sigma},
        {"acc_tau", d.acc_tau},
        {"ground_truth", d.ground_truth},
    };
}

void write_dataset(const Dataset& d, const std::filesystem::path& csv_path,
                   const std::filesystem::path& metadata_path) {
    d.validate();
    std::string csv;
    for (const auto& v : d.variables) csv += v.name + ",";
    csv += d.target.name + "\n";
    for (std::size_t r = 0; r < d.y.size(); ++r) {
        for (double v : d.X.row(r)) {
            csv += format_double(v);
            csv += ',';
        }
        csv += format_double(d.y[r]);
        csv += '\n';
    }
    write_file_atomic(csv_path, csv);
    write_file_atomic(metadata_path, metadata_json(d).dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& metadata_path) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(metadata_path));
    } catch (const std::exception& e) {
        throw DatasetError("cannot read dataset metadata " + metadata_path.string() + ": " + e.what());
    }
    try {
        std::vector<VariableInfo> schema;
        for (const auto& v : meta.at("variables")) schema.push_back(variable_from_json(v));
        const auto target = variable_from_json(meta.at("target"));
        const auto table = read_csv(csv_path);
        std::vector<std::string> expected;
        for (const auto& v : schema) expected.push_back(v.name);
        expected.push_back(target.name);
        if (table.header != expected) throw DatasetError(csv_path.string() + ": header does not match metadata");
        Dataset d;
        d.name = meta.at("name").get<std::string>();
        d.benchmark = meta.value("benchmark", "csv");
        d.variables = schema;
        d.target = target;
        d.X = Matrix(0, schema.size());
        for (const auto& row : table.rows) {
            d.X.append_row(std::span<const double>(row.data(), schema.size()));
            d.y.push_back(row.back());
        }
        const auto& s = meta.at("splits");
        d.splits.train = index_list(s, "train");
        d.splits.id_test = index_list(s, "id_test");
        d.splits.ood_test = index_list(s, "ood_test");
        d.seed = meta.value("seed", std::uint64_t{0});
        d.noise_sigma = meta.value("noise_sigma", 0.0);
        d.acc_tau = meta.value("acc_tau", 0.1);
        d.ground_truth = meta.value("ground_truth", "");
        d.validate();
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError("malformed dataset metadata " + metadata_path.string() + ": " + e.what());
    }
}

ResampledView resample(const Dataset& data, std::optional<std::span<const double>> residuals, std::size_t size,
                       std::uint64_t seed) {
    const auto& train = data.splits.train;
    if (size == 0) throw std::invalid_argument("resample: size must be positive");
    if (size > train.size())
        throw std::invalid_argument("resample: size " + std::to_string(size) + " exceeds train split of " +
                                    std::to_string(train.size()));
    if (residuals && residuals->size() != data.size())
        throw std::invalid_argument("resample: residual vector length must equal the dataset row count");
    Rng rng(derive_seed(seed, {0x7265736dULL}));
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    ResampledView view;
    view.size = size;
    view.seed = seed;
    view.rows.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        const auto idx = train[pick(rng)];
        ResampledRow row;
        row.source_index = idx;
        const auto x = data.X.row(idx);
        row.x.assign(x.begin(), x.end());
        row.y = data.y[idx];
        if (residuals) row.residual = (*residuals)[idx];
        view.rows.push_back(std::move(row));
    }
    return view;
}

}  // namespace drsr::data
