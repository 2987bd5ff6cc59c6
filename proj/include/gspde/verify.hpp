#pragma once

#include <cstddef>
#include <vector>

#include "gspde/bdsde.hpp"
#include "gspde/common.hpp"
#include "gspde/gbm.hpp"
#include "gspde/hunt.hpp"
#include "gspde/pde.hpp"

namespace gspde {

/// Max relative RMS over scenarios at one Delta t level.
struct RefinementRow {
    double dt = 0.0;
    std::vector<double> rel_rms;  // per checkpoint
    [[nodiscard]] double max_rel_rms() const;
};

struct RepresentationReport {
    std::vector<double> checkpoints;
    std::vector<long> scenario_ids;
    /// [scenario][checkpoint] relative RMS of u(t, X_t) - Y_t.
    std::vector<std::vector<double>> rel_rms_y;
    /// [scenario][checkpoint] relative RMS of grad u(t, X_t) - Z_t.
    std::vector<std::vector<double>> rel_rms_z;
    /// [scenario][checkpoint] relative RMS of (grad u - Z) sigma(X_t) measured against grad u sigma.
    std::vector<std::vector<double>> rel_rms_z_sigma;
    double tolerance = 0.05;
    /// One row per Delta t level, coarsest first; filled by add_refinement_level.
    std::vector<RefinementRow> refinement;

    /// Worst case over scenarios, per checkpoint.
    [[nodiscard]] std::vector<double> worst_y() const;
    [[nodiscard]] std::vector<double> worst_z() const;
    [[nodiscard]] bool within_tolerance() const;
    /// No checkpoint's worst-case RMS increases from one level to the next.
    [[nodiscard]] bool non_increasing() const;
};

/// Compares the grid solution u (one field per bundle) with the regression
/// solution along the shared X-ensemble. Both must come from the same
/// G-Brownian bundles (seeds and scenario ids are compared) and the same
/// X-ensemble seed, on the same time grid. Checkpoints must be grid times.
[[nodiscard]] RepresentationReport check_representation(const std::vector<RandomField>& u, const BdsdeSolution& sol,
                                                        const HuntPaths& paths, const std::vector<GBMPaths>& gbm,
                                                        const CoefficientField& field,
                                                        const std::vector<double>& checkpoints);

/// Appends the worst-case row of `level` to the refinement table of `base`.
void add_refinement_level(RepresentationReport& base, const RepresentationReport& level);

struct ComparisonReport {
    double min_gap = 0.0;                     // min over grid, time, path and scenario of u_b - u_a
    std::vector<double> min_gap_per_bundle;   // same minimum per bundle
    std::vector<long> scenario_ids;
    double eps_grid = 0.0;                    // max |u - u_refined| over both problems at shared nodes
    double collar = 0.0;                      // excluded distance from each end of the box
};

/// Ordering of the data is verified before solving: Psi_a <= Psi_b at all
/// nodes, f_a <= f_b and g_a == g_b on nodes x grid times x a (y, z) lattice.
/// `gbm_fine` are bundles built from the same drivers on the twice-finer time
/// grid; the grid-error scale compares the base solve with the solve at
/// (dt/2, dx/2) over the nodes outside the collar.
[[nodiscard]] ComparisonReport check_comparison(const GspdeProblem& a, const GspdeProblem& b, const PicardConfig& cfg,
                                                const std::vector<GBMPaths>& gbm,
                                                const std::vector<GBMPaths>& gbm_fine, double collar_fraction = 0.05);

struct TransportReport {
    std::vector<long> scenario_ids;
    std::vector<double> rel_rms;  // per bundle: RMS(lhs - rhs) / RMS(lhs)
    std::vector<double> rms;      // per bundle: RMS(lhs - rhs)
    [[nodiscard]] double worst_rel_rms() const;
};

/// Evaluates u_0(X_0) against sum_i g(X_{i+1}) . dB_i - sum_i grad u_{t_i}(X_i) . dM_i along
/// shared paths, where u is the grid solution of the linear problem with Psi = 0, f = 0
/// and y-independent g. `u` holds one field per bundle of `gbm`.
[[nodiscard]] TransportReport check_linear_transport(const std::vector<RandomField>& u,
                                                     const std::vector<ReactionTerm>& g, const HuntPaths& paths,
                                                     const std::vector<GBMPaths>& gbm);

}  // namespace gspde
