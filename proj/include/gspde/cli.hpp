#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>

#include "gspde/config.hpp"

namespace gspde {

inline constexpr int kExitPass = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

/// Loads a config file and applies the command-line overrides for seed and output directory
/// before validation, so the config hash covers them.
[[nodiscard]] ExperimentConfig load_config_with_overrides(const std::string& path, std::optional<std::uint64_t> seed,
                                                          std::optional<std::string> out_dir);

/// Contraction margins and derived Picard constants printed by `validate`.
struct ValidationSummary {
    double sigma_bar = 0.0;
    double lambda = 0.0;
    double big_lambda = 0.0;
    double gspde_margin = 0.0;  // 2 lambda - alpha_bar sigma_bar^2
    double bdsde_margin = 0.0;  // 2 lambda - alpha Lambda sigma_bar^2
    double kappa = 0.0;
    double eps = 0.0;
    double gamma = 0.0;
    double delta = 0.0;
    double bdsde_bound = 0.0;
    double bdsde_eps = 0.0;
    double bdsde_delta = 0.0;
    double beta = 0.0;
};

[[nodiscard]] ValidationSummary summarize(const ExperimentConfig& cfg);
void print_validation(std::ostream& os, const ValidationSummary& s);

/// Entry point of the `gspde` executable. Returns the process exit code:
/// 0 all checks pass, 1 a check failed, 2 invalid usage or config, 3 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gspde
