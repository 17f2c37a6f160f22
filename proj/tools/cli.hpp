#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "otakf/bench.hpp"

namespace otakf::cli {

enum ExitCode { kSuccess = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Every value the subcommands consume, after flags, config file, environment and defaults
/// have been merged.
struct RunConfig {
    std::string command;
    std::string model = "lorenz";
    int T = 100;
    std::uint64_t seed = 1;
    std::optional<int> runs;
    std::optional<double> inv_r2_db;
    double nu_db = 0.0;
    std::string method = "fixed";
    bool oracle = false;
    AdaptConfig adapt;
    std::string out = ".";
    std::string config_file;
    std::string suite = "lorenz-drift";
    std::vector<double> levels;
    std::string drift_mode = "measurement";
    int threads = 1;
    bool full = false;
    int verbosity = 0;
    std::vector<std::string> inputs;
};

/// Covariances implied by --model, --inv-r2-db and --nu-db.
CovariancePair flag_covariances(const RunConfig& cfg, const SsmSpec& spec);

/// Parses argv and runs the selected subcommand. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace otakf::cli
