#include "gspde/suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gspde/format.hpp"
#include "gspde/verify.hpp"

namespace gspde {

namespace {

namespace fs = std::filesystem;

enum CheckTag : std::uint64_t {
    kTagIntegral = 1,
    kTagBracket = 2,
    kTagLinearGspde = 3,
    kTagLinearBdsde = 4,
    kTagRepresentation = 6,
    kTagComparison = 7,
    kTagEnergy = 8,
    kTagTransport = 9,
    kTagSingleton = 10,
};

std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

CheckResult upper(std::string check, long sid, std::string metric, double value, double limit) {
    return {std::move(check), sid, std::move(metric), value, limit, value <= limit};
}

CheckResult lower(std::string check, long sid, std::string metric, double value, double limit) {
    return {std::move(check), sid, std::move(metric), value, limit, value >= limit};
}

CheckResult info(std::string check, long sid, std::string metric, double value) {
    return {std::move(check), sid, std::move(metric), value, std::nullopt, true};
}

double max_of(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, x);
    return m;
}

double rms(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

ScenarioSet integral_scenarios(const ExperimentConfig& cfg) {
    return cfg.checks.backward_integral.scenarios.value_or(cfg.scenarios);
}

struct MainGspde {
    GspdeSolution solution;
    std::vector<GBMPaths> bundles;
};

MainGspde solve_main_gspde(const ExperimentConfig& cfg) {
    const GspdeProblem problem = cfg.gspde_problem();
    const PicardConfig pc = cfg.picard_config(problem);
    const DriverPaths drv = sample_driver(cfg.tgrid, cfg.gspde.b_paths, cfg.scenarios.dim(), cfg.seed);
    MainGspde out;
    out.bundles = make_bundles(cfg, cfg.scenarios, drv, 1);
    out.solution = solve_gspde_picard(problem, pc, out.bundles);
    return out;
}

BdsdePicardOptions bdsde_options(const ExperimentConfig& cfg) {
    BdsdePicardOptions opt;
    opt.max_iter = cfg.bdsde.max_iter;
    opt.tol = cfg.bdsde.tol;
    opt.eps = cfg.bdsde.eps;
    opt.use_weights = cfg.bdsde.use_weights;
    opt.implicit_y = cfg.bdsde.implicit_y;
    return opt;
}

struct MainBdsde {
    HuntPaths hunt;
    std::vector<GBMPaths> bundles;
    BdsdeSolution solution;
};

MainBdsde solve_main_bdsde(const ExperimentConfig& cfg) {
    const BdsdeProblem problem = cfg.bdsde_problem();
    MainBdsde out;
    out.hunt = simulate_hunt(cfg.field(), cfg.bdsde.initial, cfg.tgrid, cfg.bdsde.x_paths, cfg.seed);
    const DriverPaths drv = sample_driver(cfg.tgrid, cfg.bdsde.b_paths, cfg.scenarios.dim(), cfg.seed);
    out.bundles = make_bundles(cfg, cfg.scenarios, drv, 1);
    out.solution =
        solve_gbdsde_picard(problem, BdsdeEnsemble{&out.hunt, &out.bundles}, cfg.bdsde.basis, bdsde_options(cfg));
    return out;
}

std::vector<CheckResult> gspde_contraction_rows(const ExperimentConfig& cfg, const GspdeSolution& sol) {
    const SolverReport& r = sol.report;
    const std::string c = "gspde_contraction";
    std::vector<CheckResult> out;
    out.push_back(upper(c, -1, "max_increment_ratio", max_of(r.ratios), r.kappa + 0.05));
    out.push_back(upper(c, -1, "iterations", static_cast<double>(r.iterations), 15.0));
    const double rel = r.norms.back() > 0.0 ? std::sqrt(r.increments.back() / r.norms.back()) : 0.0;
    out.push_back(upper(c, -1, "final_relative_increment", rel, cfg.gspde.tol_rel));
    out.push_back(info(c, -1, "kappa", r.kappa));
    out.push_back(info(c, -1, "eps", r.eps));
    out.push_back(info(c, -1, "gamma", r.gamma));
    out.push_back(info(c, -1, "delta", r.delta));
    out.push_back(info(c, -1, "sigma_bar", r.sigma_bar));
    out.push_back(info(c, -1, "contraction_margin", r.contraction_margin));
    return out;
}

std::vector<CheckResult> bdsde_contraction_rows(const BdsdeSolution& sol, double tol) {
    const BdsdePicardReport& r = sol.report;
    const std::string c = "bdsde_contraction";
    std::vector<CheckResult> out;
    out.push_back(upper(c, -1, "max_increment_ratio", max_of(r.ratios), r.constants.bound + 0.05));
    const double rel = r.norms.back() > 0.0 ? r.increments.back() / r.norms.back() : 0.0;
    out.push_back(upper(c, -1, "final_relative_increment", rel, tol));
    out.push_back(info(c, -1, "iterations", static_cast<double>(r.iterations)));
    out.push_back(info(c, -1, "bound", r.constants.bound));
    out.push_back(info(c, -1, "eps", r.constants.eps));
    out.push_back(info(c, -1, "beta", r.constants.beta));
    out.push_back(info(c, -1, "delta", r.constants.delta));
    out.push_back(info(c, -1, "contraction_margin", r.contraction_margin));
    return out;
}

RepresentationReport representation_level(const ExperimentConfig& cfg, const TimeGrid& tg, const DriverPaths& fine,
                                          std::size_t factor, std::uint64_t hunt_seed) {
    const std::vector<GBMPaths> bundles = make_bundles(cfg, cfg.scenarios, fine, factor);
    const GspdeProblem gp = cfg.gspde_problem(cfg.sgrid, tg);
    const GspdeSolution u = solve_gspde_picard(gp, cfg.picard_config(gp), bundles);
    const HuntPaths hunt = simulate_hunt(cfg.field(), cfg.bdsde.initial, tg, cfg.bdsde.x_paths, hunt_seed, factor);
    const BdsdeSolution y = solve_gbdsde_picard(cfg.bdsde_problem(tg), BdsdeEnsemble{&hunt, &bundles},
                                                cfg.bdsde.basis, bdsde_options(cfg));
    std::vector<double> times;
    for (double c : cfg.checks.representation.checkpoints) times.push_back(c * tg.horizon());
    return check_representation(u.fields, y, hunt, bundles, cfg.field(), times);
}

}  // namespace

Json to_json(const CheckResult& r) {
    Json j;
    j["check"] = r.check;
    j["scenario_id"] = r.scenario_id;
    j["metric"] = r.metric;
    j["value"] = r.value;
    j["tolerance"] = r.tolerance ? Json(*r.tolerance) : Json(nullptr);
    j["pass"] = r.pass;
    return j;
}

bool all_pass(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.pass; });
}

std::uint64_t check_seed(std::uint64_t seed, std::uint64_t tag) { return stream_seed(seed, Stream::kTest, tag); }

std::vector<GBMPaths> make_bundles(const ExperimentConfig& cfg, const ScenarioSet& set, const DriverPaths& fine,
                                   std::size_t factor) {
    const DriverPaths drv = factor > 1 ? fine.coarsened(factor) : fine;
    const auto schedules =
        enumerate_schedules(set, drv.grid.steps(), cfg.random_schedules, cfg.schedule_pieces, cfg.seed);
    std::vector<GBMPaths> out;
    for (const auto& s : schedules) out.push_back(build_gbm(drv, s, set));
    return out;
}

// ---------------------------------------------------------------------------
// Checks
// ---------------------------------------------------------------------------

std::vector<CheckResult> run_backward_integral_check(const ExperimentConfig& cfg) {
    const IntegralCheck& ic = cfg.checks.backward_integral;
    const ScenarioSet set = integral_scenarios(cfg);
    const TimeGrid tg(ic.horizon, ic.steps);
    const DriverPaths drv = sample_driver(tg, ic.paths, set.dim(), check_seed(cfg.seed, kTagIntegral));
    const std::vector<GBMPaths> bundles = make_bundles(cfg, set, drv, 1);

    const Matrix single_beta = set.sigma_bar() * Matrix::Identity(static_cast<Eigen::Index>(set.dim()),
                                                                  static_cast<Eigen::Index>(set.dim()));
    const ScenarioSet singleton(set.dim(), {single_beta});
    const DriverPaths drv1 = sample_driver(tg, ic.singleton_paths, set.dim(), check_seed(cfg.seed, kTagSingleton));
    const std::vector<GBMPaths> single_bundle{build_gbm(drv1, ControlSchedule::constant(0, tg.steps()), singleton)};

    std::vector<CheckResult> out;
    for (IntegrandPreset p : {IntegrandPreset::kConstant, IntegrandPreset::kTimeCos, IntegrandPreset::kPathTanh}) {
        const std::string name = to_string(p);
        const IntegralDiagnostics d = integral_diagnostics(p, bundles, set);
        for (std::size_t b = 0; b < bundles.size(); ++b) {
            const auto& s = d.per_scenario[b];
            const double z = s.se_i0 > 0.0 ? std::abs(s.mean_i0) / s.se_i0 : 0.0;
            out.push_back(upper("backward_integral.mean_zero", bundles[b].scenario_id(), "abs_mean_over_se/" + name, z, 3.0));
        }
        out.push_back(upper("backward_integral.isometry", -1, "second_moment_over_bound/" + name,
                            d.bound > 0.0 ? d.var_i0 / d.bound : 0.0, 1.0 + 3.0 * d.var_i0_rel_se));
        out.push_back(upper("backward_integral.doob", -1, "sup_moment_over_bound/" + name,
                            d.doob_bound > 0.0 ? d.sup_stat / d.doob_bound : 0.0, 1.0 + 3.0 * d.sup_stat_rel_se));
        const IntegralDiagnostics s1 = integral_diagnostics(p, single_bundle, singleton);
        out.push_back(upper("backward_integral.isometry_singleton", 0, "abs_relative_gap/" + name,
                            s1.bound > 0.0 ? std::abs(s1.var_i0 / s1.bound - 1.0) : 0.0, 0.02));
    }
    return out;
}

std::vector<CheckResult> run_bracket_check(const ExperimentConfig& cfg) {
    const BracketCheck& bc = cfg.checks.bracket;
    const std::size_t dim = bc.field == "diagonal-2d" ? 2 : 1;
    const CoefficientField field = CoefficientField::from_preset(bc.field, dim);
    const TimeGrid tg(bc.horizon, bc.steps);
    const HuntPaths paths = simulate_hunt(field, InitialLaw::point(Vector::Constant(static_cast<Eigen::Index>(dim), bc.x0)),
                                          tg, bc.paths, check_seed(cfg.seed, kTagBracket));
    const BracketReport rep = empirical_bracket(paths, field);
    std::vector<CheckResult> out;
    out.push_back(upper("bracket", -1, "max_relative_deviation", rep.max_relative_deviation, 0.05));
    if (dim > 1) out.push_back(info("bracket", -1, "max_offdiag_z", rep.max_offdiag_z));
    return out;
}

double heat_kernel_gaussian(double x, double s, double a, double tau) {
    const double v = s * s + 2.0 * a * tau;
    return s / std::sqrt(v) * std::exp(-x * x / (2.0 * v));
}

std::vector<CheckResult> run_semigroup_check(const ExperimentConfig& cfg) {
    const SemigroupCheck& sc = cfg.checks.semigroup;
    const SpatialGrid grid(1, sc.half_width, sc.points, Boundary::kDirichlet0);
    const CoefficientField field = CoefficientField::constant(1, sc.a);
    const GridFunction in{grid, grid.sample(spatial::gaussian(1.0, 1.0, 0.0))};
    const GridFunction res = apply_semigroup(DivergenceOperator(field, grid), in, sc.tau, cfg.gspde.dt_max);
    double err = 0.0;
    for (std::size_t k = 0; k < grid.points(); ++k) {
        err = std::max(err, std::abs(res.values(static_cast<Eigen::Index>(k)) -
                                     heat_kernel_gaussian(grid.x(k), 1.0, sc.a, sc.tau)));
    }
    return {upper("semigroup", -1, "linf_error_vs_heat_kernel", err, 1e-3)};
}

std::vector<CheckResult> run_gspde_contraction_check(const ExperimentConfig& cfg) {
    return gspde_contraction_rows(cfg, solve_main_gspde(cfg).solution);
}

Matrix theta_scheme_reference(const SpatialGrid& grid, const CoefficientField& field, const SpatialFunction& terminal,
                              const ReactionTerm& f, double horizon, std::size_t steps) {
    if (grid.boundary() != Boundary::kDirichlet0) {
        throw UsageError("theta_scheme_reference: only Dirichlet grids are supported");
    }
    const std::size_t m = grid.points();
    const std::size_t n = m - 2;
    const double h = grid.dx();
    const double dt = horizon / static_cast<double>(steps);
    std::vector<double> face(m - 1);
    for (std::size_t k = 0; k + 1 < m; ++k) face[k] = field.a1(0.5 * (grid.x(k) + grid.x(k + 1)));
    // A u at interior node k (1..m-2): (face[k] (u_{k+1} - u_k) - face[k-1] (u_k - u_{k-1})) / h^2
    std::vector<double> lo(n), di(n), up(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t k = r + 1;
        lo[r] = -0.5 * dt * face[k - 1] / (h * h);
        up[r] = -0.5 * dt * face[k] / (h * h);
        di[r] = 1.0 + 0.5 * dt * (face[k - 1] + face[k]) / (h * h);
    }
    auto fvals = [&](double t) {
        std::vector<double> out(m, 0.0);
        for (std::size_t k = 1; k + 1 < m; ++k) out[k] = f.eval1(t, grid.x(k), 0.0, 0.0);
        return out;
    };
    Matrix u = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(steps + 1));
    for (std::size_t k = 1; k + 1 < m; ++k) u(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(steps)) = terminal.eval1(grid.x(k));
    std::vector<double> rhs(n), cp(n), dp(n);
    std::vector<double> f_next = fvals(horizon);
    for (std::size_t i = steps; i-- > 0;) {
        const double t = horizon * static_cast<double>(i) / static_cast<double>(steps);
        const std::vector<double> f_now = fvals(t);
        const auto c = static_cast<Eigen::Index>(i + 1);
        for (std::size_t r = 0; r < n; ++r) {
            const auto k = static_cast<Eigen::Index>(r + 1);
            const double au = (face[r + 1] * (u(k + 1, c) - u(k, c)) - face[r] * (u(k, c) - u(k - 1, c))) / (h * h);
            rhs[r] = u(k, c) + 0.5 * dt * au + 0.5 * dt * (f_now[r + 1] + f_next[r + 1]);
        }
        cp[0] = up[0] / di[0];
        dp[0] = rhs[0] / di[0];
        for (std::size_t r = 1; r < n; ++r) {
            const double den = di[r] - lo[r] * cp[r - 1];
            cp[r] = up[r] / den;
            dp[r] = (rhs[r] - lo[r] * dp[r - 1]) / den;
        }
        const auto col = static_cast<Eigen::Index>(i);
        u(static_cast<Eigen::Index>(n), col) = dp[n - 1];
        for (std::size_t r = n - 1; r-- > 0;) {
            u(static_cast<Eigen::Index>(r + 1), col) = dp[r] - cp[r] * u(static_cast<Eigen::Index>(r + 2), col);
        }
        f_next = f_now;
    }
    return u;
}

std::vector<CheckResult> run_linear_gspde_check(const ExperimentConfig& cfg) {
    const LinearGspdeCheck& lc = cfg.checks.linear_gspde;
    const CoefficientField field = cfg.field();
    const std::size_t l = cfg.scenarios.dim();
    const std::vector<ReactionTerm> g0(l, reaction::zero());
    std::vector<CheckResult> out;
    {
        const GspdeProblem p(cfg.sgrid, cfg.tgrid, field, cfg.scenarios, cfg.problem.terminal, reaction::zero(), g0,
                             cfg.problem.c_bar, cfg.problem.alpha_bar);
        PicardConfig pc = cfg.picard_config(p);
        pc.init = PicardConfig::InitialGuess::kZero;
        const DriverPaths drv = sample_driver(cfg.tgrid, 2, l, check_seed(cfg.seed, kTagLinearGspde));
        const GspdeSolution sol = solve_gspde_picard(p, pc, make_bundles(cfg, cfg.scenarios, drv, 1));
        const Semigroup sg(DivergenceOperator(field, cfg.sgrid), pc.dt_max);
        const Matrix homog = homogeneous_solution(p, sg);
        double diff = 0.0;
        for (const auto& f : sol.fields) {
            for (const auto& path : f.paths) diff = std::max(diff, (path - homog).cwiseAbs().maxCoeff());
        }
        out.push_back(upper("linear_gspde.homogeneous", -1, "max_abs_diff_vs_semigroup", diff, 0.0));
        out.push_back(upper("linear_gspde.homogeneous", -1, "iterations", static_cast<double>(sol.report.iterations), 2.0));
    }
    {
        if (lc.oracle_steps % lc.steps != 0) {
            throw UsageError("checks.linear_gspde: oracle_steps must be a multiple of steps");
        }
        const TimeGrid tg(cfg.tgrid.horizon(), lc.steps);
        const ReactionTerm f = reaction::gauss_bump(0.2, 1.0, 0.0, 1.0);
        const GspdeProblem p(cfg.sgrid, tg, field, cfg.scenarios, cfg.problem.terminal, f, g0, cfg.problem.c_bar,
                             cfg.problem.alpha_bar);
        const DriverPaths drv = sample_driver(tg, 1, l, check_seed(cfg.seed, kTagLinearGspde));
        const std::vector<GBMPaths> bundles{build_gbm(drv, ControlSchedule::constant(0, tg.steps()), cfg.scenarios)};
        const GspdeSolution sol = solve_gspde_picard(p, cfg.picard_config(p), bundles);
        const Matrix ref = theta_scheme_reference(cfg.sgrid, field, cfg.problem.terminal, f, tg.horizon(), lc.oracle_steps);
        const std::size_t stride = lc.oracle_steps / lc.steps;
        double err = 0.0;
        for (std::size_t i = 0; i <= tg.steps(); ++i) {
            err = std::max(err, (sol.fields[0].paths[0].col(static_cast<Eigen::Index>(i)) -
                                 ref.col(static_cast<Eigen::Index>(i * stride)))
                                    .cwiseAbs()
                                    .maxCoeff());
        }
        out.push_back(upper("linear_gspde.deterministic_f", -1, "linf_error_vs_theta_scheme", err, 1e-3));
    }
    return out;
}

std::vector<CheckResult> run_linear_bdsde_check(const ExperimentConfig& cfg) {
    const LinearBdsdeCheck& lc = cfg.checks.linear_bdsde;
    const TimeGrid tg(cfg.tgrid.horizon(), lc.steps);
    const std::size_t l = cfg.scenarios.dim();
    const CoefficientField field = cfg.field();
    const std::uint64_t seed = check_seed(cfg.seed, kTagLinearBdsde);
    const HuntPaths hunt = simulate_hunt(field, cfg.bdsde.initial, tg, lc.x_paths, seed);
    const DriverPaths drv = sample_driver(tg, lc.b_paths, l, seed);
    const std::vector<GBMPaths> bundles = make_bundles(cfg, cfg.scenarios, drv, 1);
    const BdsdeEnsemble ens{&hunt, &bundles};
    const std::vector<ReactionTerm> g0(l, reaction::zero());
    std::vector<CheckResult> out;

    const double c = 1.5;
    {
        const BdsdeSolution s = solve_linear_bdsde({reaction::zero(), g0}, spatial::constant(c), field, ens, cfg.bdsde.basis);
        double ey = 0.0, ez = 0.0;
        for (const auto& blk : s.blocks) {
            ey = std::max(ey, (blk.y.array() - c).abs().maxCoeff());
            for (const auto& z : blk.z) ez = std::max(ez, z.cwiseAbs().maxCoeff());
        }
        out.push_back(upper("linear_bdsde.constant_terminal", -1, "max_abs_y_error", ey, 1e-10));
        out.push_back(upper("linear_bdsde.constant_terminal", -1, "max_abs_z", ez, 1e-10));
    }
    {
        const BdsdeSolution s = solve_linear_bdsde({reaction::constant(1.0), g0}, spatial::zero(), field, ens, cfg.bdsde.basis);
        double e = 0.0;
        for (const auto& blk : s.blocks) {
            for (std::size_t i = 0; i <= tg.steps(); ++i) {
                const double expected = tg.horizon() - tg.time(i);
                e = std::max(e, (blk.y.col(static_cast<Eigen::Index>(i)).array() - expected).abs().maxCoeff());
            }
        }
        out.push_back(upper("linear_bdsde.unit_f", -1, "max_abs_y_error", e, 1e-10));
    }
    {
        const std::vector<ReactionTerm> g1(l, reaction::constant(1.0));
        const BdsdeSolution s = solve_linear_bdsde({reaction::zero(), g1}, spatial::zero(), field, ens, cfg.bdsde.basis);
        for (std::size_t b = 0; b < bundles.size(); ++b) {
            double e = 0.0;
            for (std::size_t p = 0; p < bundles[b].n_paths; ++p) {
                const BdsdeBlock& blk = s.block(b, p);
                for (std::size_t i = 0; i <= tg.steps(); ++i) {
                    double expected = 0.0;
                    for (std::size_t j = 0; j < l; ++j) expected += bundles[b].b_minus_bt(p, i, j);
                    e = std::max(e, (blk.y.col(static_cast<Eigen::Index>(i)).array() - expected).abs().maxCoeff());
                }
            }
            out.push_back(upper("linear_bdsde.unit_g", bundles[b].scenario_id(), "max_abs_y_error", e, 1e-10));
        }
    }
    return out;
}

std::vector<CheckResult> run_bdsde_contraction_check(const ExperimentConfig& cfg) {
    return bdsde_contraction_rows(solve_main_bdsde(cfg).solution, cfg.bdsde.tol);
}

std::vector<CheckResult> run_representation_check(const ExperimentConfig& cfg) {
    const RepresentationCheck& rc = cfg.checks.representation;
    const TimeGrid tg(cfg.tgrid.horizon(), rc.steps);
    const std::uint64_t seed = check_seed(cfg.seed, kTagRepresentation);
    const DriverPaths fine = sample_driver(tg.refined(2), cfg.bdsde.b_paths, cfg.scenarios.dim(), seed);
    RepresentationReport base = representation_level(cfg, tg, fine, 2, seed);
    const RepresentationReport half = representation_level(cfg, tg.refined(2), fine, 1, seed);
    add_refinement_level(base, half);

    std::vector<CheckResult> out;
    const std::string c = "representation";
    const std::vector<double> wy = base.worst_y();
    const std::vector<double> wz = base.worst_z();
    const std::vector<double> hy = half.worst_y();
    double increase = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < base.checkpoints.size(); ++k) {
        const std::string at = "@t=" + short_num(base.checkpoints[k]);
        out.push_back(upper(c, -1, "rel_rms_y" + at, wy[k], base.tolerance));
        for (std::size_t s = 0; s < base.scenario_ids.size(); ++s) {
            out.push_back(info(c, base.scenario_ids[s], "rel_rms_y" + at, base.rel_rms_y[s][k]));
        }
        out.push_back(info(c, -1, "rel_rms_z" + at, wz[k]));
        out.push_back(info(c, -1, "rel_rms_y_half_dt" + at, hy[k]));
        increase = std::max(increase, hy[k] - wy[k]);
    }
    out.push_back(upper(c, -1, "max_rms_increase_under_dt_halving", increase, 0.0));
    return out;
}

std::vector<CheckResult> run_comparison_check(const ExperimentConfig& cfg) {
    const ComparisonCheck& cc = cfg.checks.comparison;
    if (!cc.problem) throw UsageError("checks.comparison.problem is required");
    const ProblemData& pd = *cc.problem;
    const CoefficientField field = cfg.field();
    const SpatialGrid sg = cc.space.value_or(cfg.sgrid);
    const TimeGrid tg(cfg.tgrid.horizon(), cc.steps);
    const DriverPaths fine =
        sample_driver(tg.refined(2), cc.b_paths, cfg.scenarios.dim(), check_seed(cfg.seed, kTagComparison));
    const std::vector<GBMPaths> gbm = make_bundles(cfg, cfg.scenarios, fine, 2);
    const std::vector<GBMPaths> gbm_fine = make_bundles(cfg, cfg.scenarios, fine, 1);
    const double smax = std::sqrt(field.big_lambda());
    auto sig = [field](double x) { return std::sqrt(field.a1(x)); };
    const ReactionTerm f = reaction::compose_sigma(pd.f, sig, smax);
    std::vector<ReactionTerm> g;
    for (const auto& gj : pd.g) g.push_back(reaction::compose_sigma(gj, sig, smax));
    const GspdeProblem a(sg, tg, field, cfg.scenarios, pd.terminal, f, g, pd.c_bar, pd.alpha_bar);
    const GspdeProblem shifted(sg, tg, field, cfg.scenarios, spatial::shifted(pd.terminal, cc.shift), f, g, pd.c_bar,
                               pd.alpha_bar);
    const GspdeProblem raised(sg, tg, field, cfg.scenarios, pd.terminal,
                              reaction::sum({f, reaction::constant(cc.f_shift)}), g, pd.c_bar, pd.alpha_bar);
    const PicardConfig pc = cfg.picard_config(a);

    std::vector<CheckResult> out;
    const ComparisonReport r1 = check_comparison(a, shifted, pc, gbm, gbm_fine, cc.collar);
    out.push_back(lower("comparison.terminal_shift", -1, "min_gap", r1.min_gap, cc.shift - r1.eps_grid));
    out.push_back(info("comparison.terminal_shift", -1, "eps_grid", r1.eps_grid));
    const ComparisonReport r2 = check_comparison(a, raised, pc, gbm, gbm_fine, cc.collar);
    out.push_back(lower("comparison.f_shift", -1, "min_gap", r2.min_gap, -r2.eps_grid));
    out.push_back(info("comparison.f_shift", -1, "eps_grid", r2.eps_grid));
    return out;
}

std::vector<CheckResult> run_energy_identity_check(const ExperimentConfig& cfg) {
    const EnergyCheck& ec = cfg.checks.energy_identity;
    const std::size_t top = ec.base_steps << (ec.levels - 1);
    const TimeGrid fine_grid(cfg.tgrid.horizon(), top);
    const DriverPaths fine = sample_driver(fine_grid, ec.b_paths, cfg.scenarios.dim(), check_seed(cfg.seed, kTagEnergy));
    std::vector<double> logs;
    std::vector<CheckResult> out;
    for (std::size_t lv = 0; lv < ec.levels; ++lv) {
        const std::size_t n = ec.base_steps << lv;
        const TimeGrid tg(cfg.tgrid.horizon(), n);
        const std::vector<GBMPaths> bundles = make_bundles(cfg, cfg.scenarios, fine, top / n);
        const GspdeProblem p = cfg.gspde_problem(cfg.sgrid, tg);
        const GspdeSolution sol = solve_gspde_picard(p, cfg.picard_config(p), bundles);
        double worst = 0.0;
        for (std::size_t b = 0; b < bundles.size(); ++b) {
            worst = std::max(worst, rms(energy_identity_residual(sol.fields[b], p, bundles[b])));
        }
        out.push_back(info("energy_identity", -1, "rms_residual@N=" + std::to_string(n), worst));
        logs.push_back(std::log2(worst));
    }
    // least-squares slope of -log2(residual) against the level index
    const double nl = static_cast<double>(logs.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < logs.size(); ++k) {
        const double x = static_cast<double>(k);
        sx += x;
        sy += logs[k];
        sxx += x * x;
        sxy += x * logs[k];
    }
    const double order = -(nl * sxy - sx * sy) / (nl * sxx - sx * sx);
    out.push_back(lower("energy_identity", -1, "observed_order", order, 0.4));
    return out;
}

std::vector<CheckResult> run_linear_transport_check(const ExperimentConfig& cfg) {
    const TransportCheck& tc = cfg.checks.linear_transport;
    const CoefficientField field = cfg.field();
    const std::size_t l = cfg.scenarios.dim();
    const std::vector<ReactionTerm> g(l, reaction::gauss_bump(0.5, 1.0, 0.0, 0.0));
    const TimeGrid tg(cfg.tgrid.horizon(), tc.steps);
    const std::uint64_t seed = check_seed(cfg.seed, kTagTransport);
    const DriverPaths fine = sample_driver(tg.refined(2), tc.b_paths, l, seed);
    std::vector<double> worst;
    std::vector<CheckResult> out;
    for (std::size_t factor : {std::size_t{2}, std::size_t{1}}) {
        const TimeGrid t = factor == 2 ? tg : tg.refined(2);
        const std::vector<GBMPaths> bundles = make_bundles(cfg, cfg.scenarios, fine, factor);
        const GspdeProblem p(cfg.sgrid, t, field, cfg.scenarios, spatial::zero(), reaction::zero(), g,
                             cfg.problem.c_bar, cfg.problem.alpha_bar);
        const GspdeSolution u = solve_gspde_picard(p, cfg.picard_config(p), bundles);
        const HuntPaths hunt = simulate_hunt(field, cfg.bdsde.initial, t, tc.x_paths, seed, factor);
        const TransportReport rep = check_linear_transport(u.fields, g, hunt, bundles);
        worst.push_back(rep.worst_rel_rms());
        out.push_back(info("linear_transport", -1, "rel_rms_residual@N=" + std::to_string(t.steps()), worst.back()));
    }
    out.push_back(upper("linear_transport", -1, "rel_rms_residual", worst.front(), 0.05));
    out.push_back(upper("linear_transport", -1, "rms_change_under_dt_halving", worst.back() - worst.front(), 0.0));
    return out;
}

// ---------------------------------------------------------------------------
// Suite and reports
// ---------------------------------------------------------------------------

namespace {

void write_gspde_field(const fs::path& out_dir, const ExperimentConfig& cfg, const GspdeSolution& sol) {
    std::ofstream os(out_dir / "gspde_field.csv");
    write_field_csv(os, sol.fields, 2, std::max<std::size_t>(1, cfg.tgrid.steps() / 8), 8);
}

void write_bdsde_solution(const fs::path& out_dir, const ExperimentConfig& cfg, const BdsdeSolution& sol) {
    std::ofstream os(out_dir / "bdsde_solution.csv");
    write_bdsde_csv(os, sol, 1, 20, std::max<std::size_t>(1, cfg.tgrid.steps() / 8));
}

}  // namespace

void write_check_outputs(const fs::path& out_dir, const ExperimentConfig& cfg, const std::vector<CheckResult>& rows) {
    write_report(out_dir / "report.json", cfg, rows);
    write_summary(out_dir / "summary.csv", cfg, rows);
    write_manifest(out_dir, cfg);
}

void run_simulate_gbm(const ExperimentConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const DriverPaths drv = sample_driver(cfg.tgrid, cfg.gspde.b_paths, cfg.scenarios.dim(), cfg.seed);
    {
        std::ofstream os(out_dir / "gbm_paths.csv");
        write_gbm_csv(os, make_bundles(cfg, cfg.scenarios, drv, 1), cfg.gspde.b_paths);
    }
    write_manifest(out_dir, cfg);
}

void run_simulate_hunt(const ExperimentConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const HuntPaths paths = simulate_hunt(cfg.field(), cfg.bdsde.initial, cfg.tgrid, cfg.bdsde.x_paths, cfg.seed);
    {
        std::ofstream os(out_dir / "hunt_paths.csv");
        write_hunt_csv(os, paths, 100);
    }
    write_manifest(out_dir, cfg);
}

std::vector<CheckResult> run_solve_gspde(const ExperimentConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const MainGspde g = solve_main_gspde(cfg);
    write_gspde_field(out_dir, cfg, g.solution);
    const std::vector<CheckResult> rows = gspde_contraction_rows(cfg, g.solution);
    write_check_outputs(out_dir, cfg, rows);
    return rows;
}

std::vector<CheckResult> run_solve_gbdsde(const ExperimentConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const MainBdsde b = solve_main_bdsde(cfg);
    write_bdsde_solution(out_dir, cfg, b.solution);
    const std::vector<CheckResult> rows = bdsde_contraction_rows(b.solution, cfg.bdsde.tol);
    write_check_outputs(out_dir, cfg, rows);
    return rows;
}

std::vector<CheckResult> run_suite(const ExperimentConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    const SuiteChecks& c = cfg.checks;
    std::vector<CheckResult> rows;
    auto add = [&](std::vector<CheckResult> r) { rows.insert(rows.end(), r.begin(), r.end()); };
    if (c.backward_integral.enabled) add(run_backward_integral_check(cfg));
    if (c.bracket.enabled) add(run_bracket_check(cfg));
    if (c.semigroup.enabled) add(run_semigroup_check(cfg));
    if (c.contraction.gspde) {
        const MainGspde g = solve_main_gspde(cfg);
        add(gspde_contraction_rows(cfg, g.solution));
        write_gspde_field(out_dir, cfg, g.solution);
    }
    if (c.linear_gspde.enabled) add(run_linear_gspde_check(cfg));
    if (c.linear_bdsde.enabled) add(run_linear_bdsde_check(cfg));
    if (c.contraction.bdsde) {
        const MainBdsde b = solve_main_bdsde(cfg);
        add(bdsde_contraction_rows(b.solution, cfg.bdsde.tol));
        write_bdsde_solution(out_dir, cfg, b.solution);
    }
    if (c.representation.enabled) add(run_representation_check(cfg));
    if (c.comparison.enabled) add(run_comparison_check(cfg));
    if (c.energy_identity.enabled) add(run_energy_identity_check(cfg));
    if (c.linear_transport.enabled) add(run_linear_transport_check(cfg));
    write_check_outputs(out_dir, cfg, rows);
    return rows;
}

void write_report(const fs::path& file, const ExperimentConfig& cfg, const std::vector<CheckResult>& results) {
    Json doc;
    doc["config_hash"] = cfg.hash();
    doc["seed"] = cfg.seed;
    doc["all_pass"] = all_pass(results);
    Json arr = Json::array();
    for (const auto& r : results) arr.push_back(to_json(r));
    doc["results"] = std::move(arr);
    std::ofstream os(file);
    if (!os) throw UsageError("cannot write '" + file.string() + "'");
    os << doc.dump(2) << '\n';
}

namespace {

void summary_header(std::ostream& os, bool with_dir) {
    if (with_dir) os << "run_dir,";
    os << "config_hash,seed,check,scenario_id,metric,value,tolerance,pass\n";
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

void summary_row(std::ostream& os, const std::string& hash, const std::string& seed, const std::string& check,
                 long sid, const std::string& metric, const std::string& value, const std::string& tol, bool pass) {
    os << hash << ',' << seed << ',' << csv_field(check) << ',' << sid << ',' << csv_field(metric) << ',' << value << ','
       << tol << ',' << (pass ? "true" : "false") << '\n';
}

}  // namespace

void write_summary(const fs::path& file, const ExperimentConfig& cfg, const std::vector<CheckResult>& results) {
    std::ofstream os(file);
    if (!os) throw UsageError("cannot write '" + file.string() + "'");
    summary_header(os, false);
    for (const auto& r : results) {
        summary_row(os, cfg.hash(), std::to_string(cfg.seed), r.check, r.scenario_id, r.metric, fmt_double(r.value),
                    r.tolerance ? fmt_double(*r.tolerance) : "", r.pass);
    }
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    Json doc;
    doc["config_hash"] = cfg.hash();
    doc["seed"] = cfg.seed;
    Json arts = Json::object();
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        arts[f.filename().string()] = fnv1a_hex(ss.str());
    }
    doc["artifacts"] = std::move(arts);
    std::ofstream os(dir / "manifest.json");
    os << doc.dump(2) << '\n';
}

void merge_reports(const std::vector<fs::path>& run_dirs, std::ostream& out) {
    if (run_dirs.empty()) throw UsageError("report-merge: at least one run directory is required");
    std::ostringstream buf;
    summary_header(buf, true);
    for (const auto& dir : run_dirs) {
        const fs::path file = dir / "report.json";
        std::ifstream in(file);
        if (!in) throw UsageError("report-merge: cannot read '" + file.string() + "'");
        Json doc;
        try {
            doc = Json::parse(in);
            const std::string hash = doc.at("config_hash").get<std::string>();
            const std::string seed = std::to_string(doc.at("seed").get<std::uint64_t>());
            for (const auto& r : doc.at("results")) {
                const Json& tol = r.at("tolerance");
                buf << csv_field(dir.string()) << ',';
                summary_row(buf, hash, seed, r.at("check").get<std::string>(), r.at("scenario_id").get<long>(),
                            r.at("metric").get<std::string>(),
                            r.at("value").is_null() ? std::string("nan") : fmt_double(r.at("value").get<double>()),
                            tol.is_null() ? std::string() : fmt_double(tol.get<double>()), r.at("pass").get<bool>());
            }
        } catch (const Json::exception& e) {
            throw UsageError("report-merge: malformed report '" + file.string() + "': " + e.what());
        }
    }
    out << buf.str();
}

}  // namespace gspde
