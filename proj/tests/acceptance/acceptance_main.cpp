#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "gspde/cli.hpp"
#include "gspde/suite.hpp"

using namespace gspde;
namespace fs = std::filesystem;

namespace {

struct Timed {
    std::vector<CheckResult> rows;
    double seconds = 0.0;
};

Timed timed(const std::function<std::vector<CheckResult>()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Timed t;
    t.rows = fn();
    t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return t;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<CheckResult> select(const std::vector<CheckResult>& rows, const std::string& check_prefix,
                                const std::string& metric_prefix = "") {
    std::vector<CheckResult> out;
    for (const auto& r : rows) {
        if (r.check.rfind(check_prefix, 0) == 0 && r.metric.rfind(metric_prefix, 0) == 0) out.push_back(r);
    }
    return out;
}

const CheckResult& one(const std::vector<CheckResult>& rows, const std::string& check, const std::string& metric) {
    for (const auto& r : rows) {
        if (r.check == check && r.metric == metric) return r;
    }
    throw std::runtime_error("missing row " + check + "/" + metric);
}

double worst(const std::vector<CheckResult>& rows) {
    double w = -std::numeric_limits<double>::infinity();
    for (const auto& r : rows) w = std::max(w, r.value);
    return w;
}

bool rows_pass(const std::vector<CheckResult>& rows) { return !rows.empty() && all_pass(rows); }

std::string num(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

class Ledger {
public:
    void record(int id, const std::string& name, bool ok, const std::string& detail, double seconds,
                std::optional<double> limit = std::nullopt) {
        std::string time = num(seconds) + " s";
        if (limit) {
            time += " of " + num(*limit) + " s";
            ok = ok && seconds < *limit;
        }
        std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << " (" << time << ")"
                  << std::endl;
        if (!ok) ++failed_;
    }
    [[nodiscard]] int failed() const { return failed_; }

private:
    int failed_ = 0;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main() {
    const fs::path config_path = fs::path(GSPDE_CONFIG_DIR) / "default.json";
    const ExperimentConfig cfg = load_config_with_overrides(config_path.string(), {}, {});
    std::cout << "config " << config_path.string() << " hash " << cfg.hash() << " seed " << cfg.seed << std::endl;
    Ledger ledger;

    // 1-3: backward integral
    {
        const Timed t = timed([&] { return run_backward_integral_check(cfg); });
        const auto mean_zero = select(t.rows, "backward_integral.mean_zero");
        ledger.record(1, "backward-integral mean zero", rows_pass(mean_zero) && mean_zero.size() == 6,
                      "worst |mean|/SE = " + num(worst(mean_zero)) + " <= 3 over 3 presets x 2 scenarios", t.seconds,
                      5.0);
        const auto iso = select(t.rows, "backward_integral.isometry", "second_moment");
        const auto single = select(t.rows, "backward_integral.isometry_singleton");
        ledger.record(2, "isometry bound", rows_pass(iso) && rows_pass(single) && iso.size() == 3,
                      "worst ratio to bound " + num(worst(iso)) + ", worst singleton gap " + num(worst(single)) +
                          " <= 0.02",
                      t.seconds, 5.0);
        const auto doob = select(t.rows, "backward_integral.doob");
        ledger.record(3, "Doob bound", rows_pass(doob) && doob.size() == 3,
                      "worst sup-moment ratio to 4 sigma_bar^2 bound " + num(worst(doob)), t.seconds, 10.0);
    }

    // 4: bracket
    {
        const Timed t = timed([&] { return run_bracket_check(cfg); });
        const CheckResult& r = one(t.rows, "bracket", "max_relative_deviation");
        ledger.record(4, "bracket identity", r.pass && r.value <= 0.05,
                      "max relative deviation " + num(r.value) + " <= 0.05", t.seconds, 20.0);
    }

    // 5: semigroup against the heat kernel
    {
        const auto t0 = std::chrono::steady_clock::now();
        const double a = 0.5, tau = 0.5, s = 1.0;
        const SpatialGrid grid(1, 10.0, 2001, Boundary::kDirichlet0);
        const GridFunction in{grid, grid.sample(spatial::gaussian(1.0, s, 0.0))};
        const GridFunction out = apply_semigroup(DivergenceOperator(CoefficientField::constant(1, a), grid), in, tau,
                                                 cfg.gspde.dt_max);
        double err = 0.0;
        for (std::size_t k = 0; k < grid.points(); ++k) {
            err = std::max(err, std::abs(out.values(static_cast<Eigen::Index>(k)) -
                                         oracle::heat_kernel_gaussian(grid.x(k), s, a, tau)));
        }
        ledger.record(5, "semigroup exactness", err <= 1e-3, "L-infinity error " + num(err) + " <= 1e-3",
                      elapsed_since(t0), 2.0);
    }

    // 6: GSPDE Picard contraction
    {
        const Timed t = timed([&] { return run_gspde_contraction_check(cfg); });
        const double eps = one(t.rows, "gspde_contraction", "eps").value;
        const double sb = cfg.scenarios.sigma_bar();
        const double kappa = (cfg.problem.c_bar * eps + cfg.problem.alpha_bar * sb * sb) / (2.0 * cfg.field().lambda());
        const CheckResult& ratio = one(t.rows, "gspde_contraction", "max_increment_ratio");
        const CheckResult& iters = one(t.rows, "gspde_contraction", "iterations");
        const CheckResult& inc = one(t.rows, "gspde_contraction", "final_relative_increment");
        const bool ok = ratio.value <= kappa + 0.05 && iters.value <= 15.0 && inc.value <= 1e-6;
        ledger.record(6, "GSPDE Picard contraction", ok,
                      "max ratio " + num(ratio.value) + " <= kappa + 0.05 = " + num(kappa + 0.05) + ", " +
                          num(iters.value) + " iterations <= 15, final relative increment " + num(inc.value),
                      t.seconds);
    }

    // 7: linear GSPDE
    {
        const auto t0 = std::chrono::steady_clock::now();
        const std::vector<CheckResult> rows = run_linear_gspde_check(cfg);
        const CheckResult& diff = one(rows, "linear_gspde.homogeneous", "max_abs_diff_vs_semigroup");
        const CheckResult& iters = one(rows, "linear_gspde.homogeneous", "iterations");

        const LinearGspdeCheck& lc = cfg.checks.linear_gspde;
        const TimeGrid tg(cfg.tgrid.horizon(), lc.steps);
        const CoefficientField field = cfg.field();
        const std::vector<ReactionTerm> g0(cfg.scenarios.dim(), reaction::zero());
        const ReactionTerm f = reaction::gauss_bump(0.2, 1.0, 0.0, 1.0);
        const GspdeProblem p(cfg.sgrid, tg, field, cfg.scenarios, cfg.problem.terminal, f, g0, cfg.problem.c_bar,
                             cfg.problem.alpha_bar);
        const DriverPaths drv = sample_driver(tg, 1, cfg.scenarios.dim(), 1);
        const std::vector<GBMPaths> bundles{build_gbm(drv, ControlSchedule::constant(0, tg.steps()), cfg.scenarios)};
        const GspdeSolution sol = solve_gspde_picard(p, cfg.picard_config(p), bundles);
        const auto ref = oracle::theta_scheme(
            cfg.sgrid.half_width(), cfg.sgrid.points(), [&](double x) { return field.a1(x); },
            [&](double x) { return cfg.problem.terminal.eval1(x); },
            [&](double s, double x) { return f.eval1(s, x, 0.0, 0.0); }, tg.horizon(), lc.oracle_steps);
        const std::size_t stride = lc.oracle_steps / lc.steps;
        double err = 0.0;
        for (std::size_t i = 0; i <= tg.steps(); ++i) {
            for (std::size_t k = 0; k < cfg.sgrid.points(); ++k) {
                err = std::max(err, std::abs(sol.fields[0].paths[0](static_cast<Eigen::Index>(k),
                                                                     static_cast<Eigen::Index>(i)) -
                                             ref[i * stride][k]));
            }
        }
        const bool ok = diff.value == 0.0 && iters.value <= 2.0 && err <= 1e-3;
        ledger.record(7, "linear GSPDE exactness", ok,
                      "homogeneous max diff " + num(diff.value) + " after " + num(iters.value) +
                          " iterations, theta-scheme L-infinity error " + num(err) + " <= 1e-3",
                      elapsed_since(t0));
    }

    // 8: linear GBDSDE
    {
        const Timed t = timed([&] { return run_linear_bdsde_check(cfg); });
        ledger.record(8, "linear GBDSDE oracles", rows_pass(t.rows) && t.rows.size() >= 4,
                      "worst closed-form error " + num(worst(t.rows)) + " <= 1e-10", t.seconds, 10.0);
    }

    // 9: GBDSDE Picard contraction
    {
        const Timed t = timed([&] { return run_bdsde_contraction_check(cfg); });
        const CheckResult& ratio = one(t.rows, "bdsde_contraction", "max_increment_ratio");
        const double eps = one(t.rows, "bdsde_contraction", "eps").value;
        const double sb = cfg.scenarios.sigma_bar();
        const CoefficientField field = cfg.field();
        const double bound = (cfg.problem.k * eps + cfg.problem.alpha * field.big_lambda() * sb * sb) /
                             (2.0 * field.lambda());
        ledger.record(9, "GBDSDE Picard contraction", ratio.value <= bound + 0.05,
                      "max delta-norm ratio " + num(ratio.value) + " <= bound + 0.05 = " + num(bound + 0.05),
                      t.seconds);
    }

    // 10: representation
    {
        const Timed t = timed([&] { return run_representation_check(cfg); });
        const auto rms = select(t.rows, "representation", "rel_rms_y@");
        std::vector<CheckResult> worst_rows;
        for (const auto& r : rms) {
            if (r.scenario_id == -1) worst_rows.push_back(r);
        }
        const CheckResult& inc = one(t.rows, "representation", "max_rms_increase_under_dt_halving");
        const bool ok = rows_pass(worst_rows) && worst_rows.size() == 4 && inc.value <= 0.0;
        ledger.record(10, "doubly stochastic representation", ok,
                      "worst relative RMS " + num(worst(worst_rows)) + " <= 0.05 at 4 checkpoints, change under dt halving " +
                          num(inc.value) + " <= 0",
                      t.seconds, 300.0);
    }

    // 11: comparison
    {
        const Timed t = timed([&] { return run_comparison_check(cfg); });
        const CheckResult& shift = one(t.rows, "comparison.terminal_shift", "min_gap");
        const CheckResult& raise = one(t.rows, "comparison.f_shift", "min_gap");
        const double e1 = one(t.rows, "comparison.terminal_shift", "eps_grid").value;
        const double e2 = one(t.rows, "comparison.f_shift", "eps_grid").value;
        const bool ok = shift.value >= cfg.checks.comparison.shift - e1 && raise.value >= -e2;
        ledger.record(11, "comparison theorem", ok,
                      "terminal shift min gap " + num(shift.value) + " >= " + num(cfg.checks.comparison.shift - e1) +
                          ", forcing shift min gap " + num(raise.value) + " >= " + num(-e2),
                      t.seconds);
    }

    // 12: energy identity
    {
        const Timed t = timed([&] { return run_energy_identity_check(cfg); });
        const CheckResult& order = one(t.rows, "energy_identity", "observed_order");
        ledger.record(12, "energy identity", order.value >= 0.4,
                      "observed order " + num(order.value) + " >= 0.4", t.seconds);
    }

    // 13: determinism of run-suite
    {
        const auto t0 = std::chrono::steady_clock::now();
        const fs::path base = fs::temp_directory_path() / "gspde_acceptance_determinism";
        fs::remove_all(base);
        const auto rows_a = run_suite(cfg, base / "a");
        const auto rows_b = run_suite(cfg, base / "b");
        std::size_t files = 0, differing = 0;
        for (const auto& e : fs::directory_iterator(base / "a")) {
            ++files;
            const fs::path other = base / "b" / e.path().filename();
            if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
        }
        std::size_t files_b = 0;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(base / "b")) ++files_b;
        const bool ok = files > 0 && files == files_b && differing == 0;
        ledger.record(13, "determinism", ok,
                      std::to_string(files) + " artifacts compared, " + std::to_string(differing) +
                          " differ; suite " + (all_pass(rows_a) && all_pass(rows_b) ? "passes" : "has failing checks"),
                      elapsed_since(t0));
        fs::remove_all(base);
    }

    std::cout << (ledger.failed() == 0 ? "all 13 criteria pass" : std::to_string(ledger.failed()) + " criteria failed")
              << std::endl;
    return ledger.failed() == 0 ? 0 : 1;
}
