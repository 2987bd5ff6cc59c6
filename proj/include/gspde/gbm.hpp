#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "gspde/common.hpp"
#include "gspde/scenario.hpp"

namespace gspde {

/// Wiener increments dW, layout [path][step][coord], variance dt per coordinate.
struct DriverPaths {
    TimeGrid grid{1.0, 1};
    std::size_t n_paths = 0;
    std::size_t l = 0;
    std::uint64_t seed = 0;
    PathProcess dw;

    [[nodiscard]] double operator()(std::size_t p, std::size_t i, std::size_t j) const { return dw(p, i, j); }
    /// Sums consecutive groups of `factor` increments: the coarse-grid view of the same Brownian paths.
    [[nodiscard]] DriverPaths coarsened(std::size_t factor) const;
};

/// Samples n_paths independent l-dimensional Wiener increment paths on `grid`.
/// Each path uses its own engine seeded from (seed, path index), so the output
/// does not depend on the thread count.
[[nodiscard]] DriverPaths sample_driver(const TimeGrid& grid, std::size_t n_paths, std::size_t l, std::uint64_t seed);

/// Backward G-Brownian increments dB_i = B_{t_i} - B_{t_{i+1}} under one control schedule.
struct GBMPaths {
    TimeGrid grid{1.0, 1};
    std::size_t n_paths = 0;
    std::size_t l = 0;
    std::uint64_t seed = 0;
    ControlSchedule control;
    std::vector<Matrix> covariance_per_step;  // beta beta^T of the scheduled scenario at step i
    PathProcess db;

    [[nodiscard]] double operator()(std::size_t p, std::size_t i, std::size_t j) const { return db(p, i, j); }
    /// B_{t_n} - B_T for path p, coordinate j.
    [[nodiscard]] double b_minus_bt(std::size_t p, std::size_t n, std::size_t j) const;
    /// Scenario id if the schedule is constant, otherwise -1.
    [[nodiscard]] long scenario_id() const { return control.constant_index(); }
};

/// dB_i = -beta_{k(i)} dW_{N-1-i}.
[[nodiscard]] GBMPaths build_gbm(const DriverPaths& driver, const ControlSchedule& control, const ScenarioSet& set);

/// Integrand for a backward integral, layout [path][slot 0..N][coord 0..l-1].
/// Slot i+1 multiplies dB_i.
using Integrand = PathProcess;

/// I_{t_n} = sum_{i >= n} Xi_{t_{i+1}} . dB_i, returned as [path][n = 0..N][0].
[[nodiscard]] PathProcess backward_integral(const Integrand& xi, const GBMPaths& paths);

/// Named integrand families used by the diagnostics and the acceptance suite.
enum class IntegrandPreset {
    kConstant,  // Xi^j = c
    kTimeCos,   // Xi^j_t = cos(2 pi t / T + j)
    kPathTanh,  // Xi^j_t = tanh(B^j_t - B^j_T), backward adapted
};

[[nodiscard]] IntegrandPreset integrand_preset_from_string(const std::string& name);
[[nodiscard]] std::string to_string(IntegrandPreset p);

[[nodiscard]] Integrand make_integrand(IntegrandPreset preset, const GBMPaths& paths, double c = 1.0);

struct ScenarioIntegralStats {
    double mean_i0 = 0.0;
    double se_i0 = 0.0;
    double second_moment = 0.0;  // E|I_0|^2
    double second_moment_se = 0.0;
    double sup_moment = 0.0;  // E sup_t |I_t|^2
    double sup_moment_se = 0.0;
    double integrand_energy = 0.0;  // E int_0^T |Xi|^2 ds
};

struct IntegralDiagnostics {
    std::vector<ScenarioIntegralStats> per_scenario;
    double sigma_bar = 0.0;
    double mean_i0 = 0.0;  // value with largest |mean| across scenarios
    double se = 0.0;
    double var_i0 = 0.0;  // upper expectation of |I_0|^2
    double var_i0_rel_se = 0.0;
    double bound = 0.0;  // sigma_bar^2 * upper expectation of int |Xi|^2
    double sup_stat = 0.0;
    double sup_stat_rel_se = 0.0;
    double doob_bound = 0.0;  // 4 sigma_bar^2 * upper expectation of int |Xi|^2

    [[nodiscard]] bool mean_zero_holds(double n_se = 3.0) const;
    [[nodiscard]] bool isometry_bound_holds(double n_se = 3.0) const;
    [[nodiscard]] bool doob_bound_holds(double n_se = 3.0) const;
};

/// Evaluates the backward-integral diagnostics for one integrand family over
/// a list of scenario path bundles (one bundle per schedule).
[[nodiscard]] IntegralDiagnostics integral_diagnostics(IntegrandPreset preset, const std::vector<GBMPaths>& bundles,
                                                       const ScenarioSet& set, double c = 1.0);

/// CSV dump: path_id, scenario_id, step, coord, dB_backward.
void write_gbm_csv(std::ostream& os, const std::vector<GBMPaths>& bundles, std::size_t max_paths);

}  // namespace gspde
