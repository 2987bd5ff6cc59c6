#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gspde/config.hpp"

namespace gspde {

/// One row of a report: `tolerance` is empty for informational metrics.
struct CheckResult {
    std::string check;
    long scenario_id = -1;
    std::string metric;
    double value = 0.0;
    std::optional<double> tolerance;
    bool pass = true;
};

[[nodiscard]] Json to_json(const CheckResult& r);
[[nodiscard]] bool all_pass(const std::vector<CheckResult>& results);

/// Seed of an independent random stream for a named check.
[[nodiscard]] std::uint64_t check_seed(std::uint64_t seed, std::uint64_t tag);

/// G-Brownian bundles (one per schedule) on `grid`, built from drivers sampled on a grid
/// `factor` times finer and coarsened, so levels of a refinement study share paths.
[[nodiscard]] std::vector<GBMPaths> make_bundles(const ExperimentConfig& cfg, const ScenarioSet& set,
                                                 const DriverPaths& fine, std::size_t factor);

// Named suite checks. Each returns its report rows; tolerances are fixed.
[[nodiscard]] std::vector<CheckResult> run_backward_integral_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_bracket_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_semigroup_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_gspde_contraction_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_linear_gspde_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_linear_bdsde_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_bdsde_contraction_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_representation_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_comparison_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_energy_identity_check(const ExperimentConfig& cfg);
[[nodiscard]] std::vector<CheckResult> run_linear_transport_check(const ExperimentConfig& cfg);

/// Closed-form heat-kernel image of a centred Gaussian of width s under exp(tau a d^2/dx^2).
[[nodiscard]] double heat_kernel_gaussian(double x, double s, double a, double tau);
/// Independent Crank-Nicolson (theta = 1/2) solution of -du/dt = d/dx(a du/dx) + f(t, x),
/// u(T) = Psi on the same spatial grid with `steps` uniform steps; returns the m x (steps+1) field.
[[nodiscard]] Matrix theta_scheme_reference(const SpatialGrid& grid, const CoefficientField& field,
                                            const SpatialFunction& terminal, const ReactionTerm& f, double horizon,
                                            std::size_t steps);

/// Every enabled check; writes report.json, summary.csv and CSV artifacts under `out`.
[[nodiscard]] std::vector<CheckResult> run_suite(const ExperimentConfig& cfg, const std::filesystem::path& out);

// Single-module commands. Each writes its CSV artifact and manifest.json under `out`;
// the solver commands also write report.json and summary.csv with their contraction rows.
void run_simulate_gbm(const ExperimentConfig& cfg, const std::filesystem::path& out);
void run_simulate_hunt(const ExperimentConfig& cfg, const std::filesystem::path& out);
[[nodiscard]] std::vector<CheckResult> run_solve_gspde(const ExperimentConfig& cfg, const std::filesystem::path& out);
[[nodiscard]] std::vector<CheckResult> run_solve_gbdsde(const ExperimentConfig& cfg, const std::filesystem::path& out);
/// Runs `rows` through report.json, summary.csv and manifest.json in `out`.
void write_check_outputs(const std::filesystem::path& out, const ExperimentConfig& cfg,
                         const std::vector<CheckResult>& rows);

/// Pretty JSON with sorted keys: {"config_hash", "seed", "all_pass", "results": [...]}.
void write_report(const std::filesystem::path& file, const ExperimentConfig& cfg,
                  const std::vector<CheckResult>& results);
/// CSV with columns config_hash, seed, check, scenario_id, metric, value, tolerance, pass.
void write_summary(const std::filesystem::path& file, const ExperimentConfig& cfg,
                   const std::vector<CheckResult>& results);
/// Writes manifest.json listing the FNV-1a digest of every other file in `dir`.
void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg);

/// Concatenates the reports of several run directories into one summary CSV
/// (columns run_dir, config_hash, seed, check, scenario_id, metric, value, tolerance, pass).
void merge_reports(const std::vector<std::filesystem::path>& run_dirs, std::ostream& out);

}  // namespace gspde
