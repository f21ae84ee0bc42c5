#pragma once

#include "reptree/harness.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace reptree::cli {

/// Error in a configuration key or value; the message names the key.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` text. `[section]` prefixes following keys with `section.`;
/// `[client N]` prefixes them with `client.N.`. `#` starts a comment.
[[nodiscard]] KeyValues parse_config_text(const std::string& text, const std::string& origin = "<config>");
[[nodiscard]] KeyValues read_config_file(const std::filesystem::path& path);

/// Applies `key=value` overrides (as given to --set).
void apply_overrides(KeyValues& keys, const std::vector<std::string>& overrides);

[[nodiscard]] ExperimentConfig config_from_keys(const KeyValues& keys);

/// Every effective setting, fully resolved (per-client values spelled out).
[[nodiscard]] KeyValues config_to_keys(const ExperimentConfig& config);

/// Sorted `key=value` lines of the effective configuration.
[[nodiscard]] std::string canonical_text(const ExperimentConfig& config);

/// Git blob object id (SHA-1 of "blob <size>\0" + text), lowercase hex.
[[nodiscard]] std::string git_blob_hash(const std::string& text);

/// Shortest round-trip decimal form.
[[nodiscard]] std::string format_real(double v);

struct RunOptions {
    std::optional<std::filesystem::path> config_path;
    std::optional<std::string> method;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out_dir = "out";
    int parallel = 1;
    std::vector<std::string> overrides;
};

/// Resolves file, --set overrides and flag overrides into an experiment configuration.
[[nodiscard]] ExperimentConfig resolve_config(const RunOptions& options);

/// Writes manifest.json, rounds.csv and results.json for one finished experiment.
void write_run_outputs(const ExperimentResult& result, const std::filesystem::path& out_dir,
                       const std::string& started_at, int parallel);

void write_rounds_csv(const ExperimentResult& result, const std::filesystem::path& path);

[[nodiscard]] std::string results_json(const ExperimentResult& result);

int cmd_run(const RunOptions& options, std::ostream& err);
int cmd_sweep(const RunOptions& options, const Sweep& sweep, std::ostream& err);

/// Long-format CSV (method,client,fold,metric,value) from result directories. A directory
/// without results.json contributes each immediate subdirectory that has one.
int cmd_plotdata(const std::vector<std::filesystem::path>& dirs, std::ostream& out, std::ostream& err);

}  // namespace reptree::cli
