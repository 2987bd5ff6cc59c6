#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gspde/bdsde.hpp"
#include "gspde/common.hpp"
#include "gspde/hunt.hpp"
#include "gspde/pde.hpp"
#include "gspde/presets.hpp"
#include "gspde/scenario.hpp"

namespace gspde {

using Json = nlohmann::json;

inline constexpr const char* kConfigSchema = "gspde-config/1";

/// Terminal data, reaction terms and declared Lipschitz constants.
struct ProblemData {
    SpatialFunction terminal;
    ReactionTerm f;               // f(t, x, y, w) with w = z sigma(x)
    std::vector<ReactionTerm> g;  // one term per noise coordinate
    double c_bar = 0.0;           // declared constants for the grid problem
    double alpha_bar = 0.0;
    double k = 0.0;  // declared constants for the backward doubly stochastic problem
    double alpha = 0.0;
};

struct GspdeSettings {
    std::size_t b_paths = 16;
    std::optional<double> eps;
    std::size_t max_iter = 50;
    double tol_rel = 1e-6;
    double dt_max = 0.01;
    PicardConfig::InitialGuess init = PicardConfig::InitialGuess::kZero;
};

struct BdsdeSettings {
    std::size_t x_paths = 2000;
    std::size_t b_paths = 16;
    std::size_t max_iter = 30;
    double tol = 1e-6;
    std::optional<double> eps;
    bool use_weights = false;
    bool implicit_y = false;
    RegressionBasis basis;
    InitialLaw initial;
};

struct IntegralCheck {
    bool enabled = true;
    std::optional<ScenarioSet> scenarios;
    std::size_t paths = 10000;
    std::size_t singleton_paths = 40000;
    std::size_t steps = 256;
    double horizon = 1.0;
};

struct BracketCheck {
    bool enabled = true;
    std::string field = "sinusoidal-1d";
    std::size_t paths = 10000;
    std::size_t steps = 512;
    double horizon = 1.0;
    double x0 = 0.0;
};

struct SemigroupCheck {
    bool enabled = true;
    std::size_t points = 2001;
    double half_width = 10.0;
    double tau = 0.5;
    double a = 0.5;
};

struct LinearGspdeCheck {
    bool enabled = true;
    std::size_t steps = 400;
    std::size_t oracle_steps = 2000;
};

struct LinearBdsdeCheck {
    bool enabled = true;
    std::size_t x_paths = 2000;
    std::size_t b_paths = 4;
    std::size_t steps = 16;
};

struct RepresentationCheck {
    bool enabled = true;
    std::size_t steps = 4;                            // base time steps; the check also runs at 2x
    std::vector<double> checkpoints{0.0, 0.25, 0.5, 0.75};  // fractions of the horizon
};

struct ComparisonCheck {
    bool enabled = true;
    std::optional<SpatialGrid> space;
    std::size_t steps = 16;
    std::size_t b_paths = 8;
    std::optional<ProblemData> problem;
    double shift = 1.0;
    double f_shift = 0.1;
    double collar = 0.05;
};

struct EnergyCheck {
    bool enabled = true;
    std::size_t b_paths = 200;
    std::size_t base_steps = 16;
    std::size_t levels = 3;
};

struct TransportCheck {
    bool enabled = true;
    std::size_t x_paths = 2000;
    std::size_t b_paths = 8;
    std::size_t steps = 256;
};

struct ContractionChecks {
    bool gspde = true;
    bool bdsde = true;
};

struct SuiteChecks {
    IntegralCheck backward_integral;
    BracketCheck bracket;
    SemigroupCheck semigroup;
    ContractionChecks contraction;
    LinearGspdeCheck linear_gspde;
    LinearBdsdeCheck linear_bdsde;
    RepresentationCheck representation;
    ComparisonCheck comparison;
    EnergyCheck energy_identity;
    TransportCheck linear_transport;
};

struct ExperimentConfig {
    std::string schema = kConfigSchema;
    std::uint64_t seed = 0;
    std::string output_dir = "gspde-out";
    ScenarioSet scenarios{1, {Matrix::Identity(1, 1)}};
    std::size_t random_schedules = 0;
    std::size_t schedule_pieces = 4;
    std::string field_preset = "constant";
    double field_c = 1.0;
    TimeGrid tgrid{1.0, 32};
    SpatialGrid sgrid{1, 8.0, 321, Boundary::kDirichlet0};
    ProblemData problem;
    GspdeSettings gspde;
    BdsdeSettings bdsde;
    SuiteChecks checks;
    /// Canonical (sorted-key, compact) dump of the parsed document without output_dir.
    std::string canonical;

    [[nodiscard]] CoefficientField field() const;
    /// FNV-1a 64 of the canonical dump, as 16 hex digits.
    [[nodiscard]] std::string hash() const;
    /// Problem for the grid solver with drivers f(t, x, u, sigma(x) grad u).
    [[nodiscard]] GspdeProblem gspde_problem(const SpatialGrid& sgrid, const TimeGrid& tgrid) const;
    [[nodiscard]] GspdeProblem gspde_problem() const { return gspde_problem(sgrid, tgrid); }
    [[nodiscard]] BdsdeProblem bdsde_problem(const TimeGrid& tgrid) const;
    [[nodiscard]] BdsdeProblem bdsde_problem() const { return bdsde_problem(tgrid); }
    [[nodiscard]] PicardConfig picard_config(const GspdeProblem& problem) const;
    [[nodiscard]] std::vector<ControlSchedule> schedules(std::size_t steps) const;
};

/// Parses and validates a config document. Unknown keys, missing fields and
/// violated contraction properties raise UsageError naming the field.
[[nodiscard]] ExperimentConfig parse_config(const Json& doc);
[[nodiscard]] ExperimentConfig load_config(const std::string& path);

/// Reaction-term preset from JSON: {"preset": "zero" | "constant" | "affine_y" | "sin_x" |
/// "gauss_bump" | "tanh", ...parameters}; an array means the sum of its entries.
[[nodiscard]] ReactionTerm parse_reaction(const Json& node, const std::string& where);
/// Spatial preset: {"preset": "zero" | "constant" | "gaussian" | "sine", ...}.
[[nodiscard]] SpatialFunction parse_spatial(const Json& node, const std::string& where);

[[nodiscard]] std::string fnv1a_hex(const std::string& bytes);

}  // namespace gspde
