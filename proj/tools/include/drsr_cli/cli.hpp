#pragma once

// Command implementations behind the `drsr` executable. Each returns a
// process exit code.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace drsr::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kBackendError = 3, kDatasetError = 4 };

/// Error carrying the exit code it maps to.
class CommandError : public std::runtime_error {
public:
    CommandError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
    [[nodiscard]] int code() const noexcept { return code_; }

private:
    int code_;
};

struct GenerateOptions {
    std::optional<std::filesystem::path> out_dir;
    /// Base name of the two files; defaults to the benchmark name.
    std::optional<std::string> name;
};

/// Writes <name>.csv and <name>.meta.json. Returns the CSV path.
std::filesystem::path generate_files(const std::filesystem::path& spec_path, const GenerateOptions& opts);

struct RunOptions {
    /// Use a replay backend even if the config names another one.
    bool force_replay = false;
    std::optional<std::filesystem::path> replay_script;
    std::optional<std::filesystem::path> output_dir;
    /// Applied on top of the config's "engine" object.
    nlohmann::json engine_overrides = nlohmann::json::object();
};

/// Executes one run and returns its manifest (also written to
/// <output_dir>/manifest.json). Throws CommandError.
nlohmann::json run_from_config(const std::filesystem::path& config_path, const RunOptions& opts);

struct ReportOptions {
    std::optional<std::filesystem::path> out_dir;
    std::size_t window = 40;
};

/// Writes convergence.csv, valid_rate.csv, categories.csv and
/// trajectory.csv. Returns the output directory. Throws CommandError naming
/// the line of a malformed record.
std::filesystem::path write_reports(const std::filesystem::path& history_path, const ReportOptions& opts);

/// Dataset fingerprint: FNV-1a over the CSV bytes followed by the metadata bytes.
[[nodiscard]] std::string dataset_fingerprint(const std::filesystem::path& csv, const std::filesystem::path& metadata);

int cmd_generate(const std::filesystem::path& spec_path, const GenerateOptions& opts, std::ostream& out,
                 std::ostream& err);
int cmd_run(const std::filesystem::path& config_path, const RunOptions& opts, std::ostream& out, std::ostream& err);
int cmd_report(const std::filesystem::path& history_path, const ReportOptions& opts, std::ostream& out,
               std::ostream& err);
/// Runs every combination of insight probability {0, 0.5, 1} and idea
/// toggle set {all, no-valid, no-invalid, none} and writes sweep.csv.
int cmd_sweep(const std::filesystem::path& config_path, const std::filesystem::path& out_dir, std::ostream& out,
              std::ostream& err);

/// Parses argv and dispatches.
int main_entry(int argc, char** argv);

}  // namespace drsr::cli
