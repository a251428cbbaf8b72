#pragma once

// Benchmark datasets: generation from governing equations, CSV ingestion,
// train / in-distribution / out-of-distribution splits, target noise and
// uniform resampling.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "drsr/matrix.hpp"

namespace drsr::data {

/// Generation, I/O or validation failure of a dataset.
class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed generator spec (bad counts, unknown benchmark, ...).
class SpecError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct VariableInfo {
    std::string name;
    std::string unit;
    std::string description;

    bool operator==(const VariableInfo&) const = default;
};

enum class Split : std::uint8_t { train, id_test, ood_test };

[[nodiscard]] std::string_view to_string(Split s) noexcept;

struct Splits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> id_test;
    std::vector<std::size_t> ood_test;

    [[nodiscard]] const std::vector<std::size_t>& get(Split s) const noexcept;
    bool operator==(const Splits&) const = default;
};

/// Rows of one split, in split order.
struct SplitData {
    Matrix X;
    std::vector<double> y;
    std::vector<std::size_t> indices;
};

struct Dataset {
    std::string name;
    std::string benchmark;
    std::vector<VariableInfo> variables;
    VariableInfo target;
    Matrix X;
    std::vector<double> y;
    Splits splits;

    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
    /// Relative-error threshold used for the accuracy metric of this benchmark.
    double acc_tau = 0.1;
    /// Governing equation in expression grammar (literal constants), if known.
    std::string ground_truth;

    [[nodiscard]] std::vector<std::string> variable_names() const;
    [[nodiscard]] SplitData split(Split s) const;
    [[nodiscard]] std::size_t size() const noexcept { return y.size(); }

    /// Throws DatasetError when an invariant is violated: disjoint in-range
    /// splits, non-empty train split, finite values, distinct valid names.
    void validate() const;

    bool operator==(const Dataset&) const = default;
};

enum class Benchmark : std::uint8_t {
    oscillator1,
    oscillator2,
    ecoli_growth,
    stress_strain_csv,
    lsr_transform_I_37_4,
    lsr_transform_III_4_33,
    lsr_synth_crk0,
};

[[nodiscard]] std::string_view to_string(Benchmark b) noexcept;
/// Throws SpecError for an unknown name.
[[nodiscard]] Benchmark benchmark_from_string(std::string_view name);
[[nodiscard]] bool is_time_series(Benchmark b) noexcept;
/// Acc_tau threshold used for the benchmark (0.001 for the oscillators, 0.1 otherwise).
[[nodiscard]] double default_acc_tau(Benchmark b) noexcept;

struct OdeSettings {
    double step_size = 0.01;
    double t_max = 50.0;
    /// Train and ID rows come from t <= id_fraction * t_max, OOD rows from later times.
    double id_fraction = 0.7;
};

struct GeneratorSpec {
    Benchmark benchmark = Benchmark::oscillator1;
    std::uint64_t seed = 0;
    std::size_t n_train = 500;
    std::size_t n_id = 250;
    std::size_t n_ood = 250;
    double noise_sigma = 0.0;
    OdeSettings ode;
    /// Width of the outer band (fraction of each input range) reserved for OOD
    /// rows of non-temporal benchmarks.
    double ood_band = 0.15;
    /// Overrides of the benchmark constants (see default_constants).
    std::map<std::string, double> constants;
    /// stress_strain_csv only: source file and target column (default: last).
    std::string csv_path;
    std::string target_name;

    /// Throws SpecError.
    void validate() const;
};

[[nodiscard]] nlohmann::json to_json(const GeneratorSpec& spec);
/// Throws SpecError on missing or ill-typed fields.
[[nodiscard]] GeneratorSpec generator_spec_from_json(const nlohmann::json& j);

/// Named constants of a simulated benchmark with their default values.
[[nodiscard]] std::map<std::string, double> default_constants(Benchmark b);

struct GroundTruth {
    /// Right-hand side with the constants written as literals.
    std::string expression;
    /// Same structure with every constant replaced by params[i].
    std::string skeleton;
    std::vector<double> true_params;
    std::vector<VariableInfo> inputs;
    VariableInfo target;
};

/// Governing equation of a simulated benchmark. Throws SpecError for
/// stress_strain_csv, which has no known closed form.
[[nodiscard]] GroundTruth ground_truth(const GeneratorSpec& spec);

/// Evaluates the governing right-hand side natively at one input row
/// (ordered like ground_truth(spec).inputs).
[[nodiscard]] double governing_rhs(const GeneratorSpec& spec, std::span<const double> inputs);

/// Generates a dataset. Deterministic given spec.seed. Throws DatasetError if
/// integration blows up or if the grid cannot supply the requested rows.
[[nodiscard]] Dataset generate(const GeneratorSpec& spec);

using OdeRhs = std::function<void(double t, std::span<const double> state, std::span<double> derivative)>;

/// Classic fourth-order Runge-Kutta on a uniform grid. Returns the state at
/// every grid point t0, t0+h, ..., t1 (the step count is round((t1-t0)/h)).
/// Throws DatasetError naming the time at which the state became non-finite.
[[nodiscard]] std::vector<std::vector<double>> integrate_rk4(const OdeRhs& rhs, std::vector<double> initial,
                                                             double t0, double t1, double step);

/// ODE of a time-series benchmark: right-hand side and initial state.
struct OdeSystem {
    OdeRhs rhs;
    std::vector<double> initial;
};

[[nodiscard]] OdeSystem ode_system(const GeneratorSpec& spec);

struct SplitPolicy {
    double ood_band = 0.15;
    /// Share of the non-OOD rows that go to the train split; the rest is ID.
    double train_fraction = 2.0 / 3.0;
    std::uint64_t seed = 0;
};

/// Reads a CSV whose header is the schema names followed by the target
/// name. Throws DatasetError naming the line of a malformed or non-finite
/// value, or on a header mismatch.
[[nodiscard]] Dataset load_csv(const std::filesystem::path& path, std::span<const VariableInfo> schema,
                               const VariableInfo& target, const SplitPolicy& policy = {});

/// Writes `<csv>` (header + rows, shortest round-trip decimals) and the JSON
/// metadata sidecar.
void write_dataset(const Dataset& data, const std::filesystem::path& csv_path,
                   const std::filesystem::path& metadata_path);

/// Inverse of write_dataset. Throws DatasetError.
[[nodiscard]] Dataset read_dataset(const std::filesystem::path& csv_path, const std::filesystem::path& metadata_path);

[[nodiscard]] nlohmann::json metadata_json(const Dataset& data);

struct ResampledRow {
    std::size_t source_index = 0;
    std::vector<double> x;
    double y = 0.0;
    std::optional<double> residual;
};

struct ResampledView {
    std::vector<ResampledRow> rows;
    std::size_t size = 0;
    std::uint64_t seed = 0;
};

/// Draws `size` rows uniformly with replacement from the train split.
/// `residuals`, when given, is indexed by dataset row and must have length n.
/// Throws std::invalid_argument for size 0, size larger than the train
/// split, or a residual vector of the wrong length.
[[nodiscard]] ResampledView resample(const Dataset& data, std::optional<std::span<const double>> residuals,
                                     std::size_t size, std::uint64_t seed);

}  // namespace drsr::data
