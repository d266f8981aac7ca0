#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "topology.hpp"

namespace nelastic {

inline constexpr const char* kVersion = "0.1.0";

struct SimParams {
    double epsilon = 1e-3;
    double horizon = 1.0;
    double grid_dt = 1e-3;
    std::uint64_t replicas = 16;
    std::uint64_t seed = 1;
    std::optional<double> h0;  // default: middle of the root edge
    std::optional<double> q0;  // default: middle of the well holding h0
};

struct AnalysisParams {
    std::string method = "ladder";
    std::uint64_t budget = 100000;
    int grid_points = 4096;
    double parity_level = 50.0;
    std::string branch;          // p,p,... in ascending interior id
    int segments = 64;
    int rare_edge = 1;
    std::optional<double> rare_h0;
    std::vector<double> rare_delta_h{0.02, 0.04, 0.06};
    std::vector<double> rare_epsilons{0.05, 0.02, 0.01};
    double rare_horizon = 1.0;
    std::uint64_t rare_budget = 10000;
    std::string rare_method = "tilted";
};

struct Config {
    std::string text;
    WellSystem system;
    SimParams sim;
    AnalysisParams analysis;
    bool has_kicks = false;
};

/// Parses the sectioned config format ([walls], [floors], [kicks], [sim],
/// [analysis]). Grammar errors carry line and column; topology errors name
/// the violated constraint.
[[nodiscard]] Config parse_config(const std::string& text);

[[nodiscard]] std::uint64_t fnv1a(const std::string& bytes) noexcept;

struct RunRequest {
    std::string command;
    std::string config_text;   // empty when no config was given
    std::string vtable_text;   // empty when no v-table was given
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> replicas;
    std::optional<double> epsilon;
    std::optional<std::string> method;
    std::optional<std::string> branch;
    std::string out_dir;
};

struct RunOutput {
    std::string file;  // name inside the output directory
    std::uint64_t hash = 0;
};

struct RunResult {
    std::string command;
    std::string summary_text;
    std::string summary_json;
    std::vector<RunOutput> outputs;
    std::string manifest_path;
    bool checks_failed = false;  // validate found a failing invariant
};

/// Runs one subcommand, writes its outputs and manifest.json into out_dir.
[[nodiscard]] RunResult run_command(const RunRequest& request);

/// Re-runs the command recorded in a manifest into out_dir and verifies that
/// every recorded output is reproduced byte for byte (Invariant error if not).
[[nodiscard]] RunResult rerun_manifest(const std::string& manifest_path, const std::string& out_dir);

/// Output directory: explicit flag, else NELASTIC_OUT_DIR, else "nelastic-out".
[[nodiscard]] std::string resolve_out_dir(const std::string& flag);

[[nodiscard]] std::string read_file(const std::string& path);

}  // namespace nelastic
