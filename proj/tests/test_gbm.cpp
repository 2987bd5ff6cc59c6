#include "catch_amalgamated.hpp"

#include <cmath>
#include <sstream>

#include "gspde/gbm.hpp"

using namespace gspde;
using Catch::Approx;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

double sample_variance(const std::vector<double>& xs) { return sample_stats(xs).variance; }

}  // namespace

TEST_CASE("sample_driver is deterministic given the seed", "[gbm]") {
    const TimeGrid g(1.0, 8);
    const DriverPaths a = sample_driver(g, 50, 2, 17);
    const DriverPaths b = sample_driver(g, 50, 2, 17);
    const DriverPaths c = sample_driver(g, 50, 2, 18);
    CHECK(a.dw == b.dw);
    CHECK_FALSE(a.dw == c.dw);
}

TEST_CASE("sample_driver increments have variance dt", "[gbm]") {
    const TimeGrid g(0.7, 1);
    const DriverPaths d = sample_driver(g, 10000, 1, 1);
    std::vector<double> xs;
    for (std::size_t p = 0; p < d.n_paths; ++p) xs.push_back(d(p, 0, 0));
    CHECK(std::abs(sample_variance(xs) / g.dt() - 1.0) <= 0.05);
}

TEST_CASE("sample_driver rejects zero paths", "[gbm]") {
    CHECK_THROWS_AS(sample_driver(TimeGrid(1.0, 4), 0, 1, 1), UsageError);
}

TEST_CASE("coarsened drivers sum consecutive increments", "[gbm]") {
    const DriverPaths fine = sample_driver(TimeGrid(1.0, 8), 3, 2, 4);
    const DriverPaths coarse = fine.coarsened(2);
    CHECK(coarse.grid.steps() == 4);
    for (std::size_t p = 0; p < 3; ++p) {
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 2; ++j) {
                CHECK(coarse(p, i, j) == fine(p, 2 * i, j) + fine(p, 2 * i + 1, j));
            }
        }
    }
}

TEST_CASE("zero volatility gives zero increments", "[gbm]") {
    const DriverPaths d = sample_driver(TimeGrid(1.0, 4), 10, 1, 2);
    const GBMPaths b = build_gbm(d, ControlSchedule::constant(0, 4), ScenarioSet(1, {m1(0.0)}));
    for (double v : b.db.data) CHECK(v == 0.0);
}

TEST_CASE("identity loading negates and reverses the driver", "[gbm]") {
    const std::size_t n = 6;
    const DriverPaths d = sample_driver(TimeGrid(1.0, n), 5, 1, 3);
    const GBMPaths b = build_gbm(d, ControlSchedule::constant(0, n), ScenarioSet(1, {m1(1.0)}));
    for (std::size_t p = 0; p < 5; ++p) {
        for (std::size_t i = 0; i < n; ++i) CHECK(b(p, i, 0) == -d(p, n - 1 - i, 0));
    }
}

TEST_CASE("constructional identity holds exactly for a mixed schedule", "[gbm]") {
    Matrix b1(2, 2), b2(2, 2);
    b1 << 1.0, 0.3, 0.0, 0.5;
    b2 << 0.2, -0.1, 0.4, 0.9;
    const ScenarioSet s(2, {b1, b2});
    const std::size_t n = 5;
    const DriverPaths d = sample_driver(TimeGrid(1.0, n), 4, 2, 9);
    const ControlSchedule c{{0, 1, 1, 0, 1}};
    const GBMPaths b = build_gbm(d, c, s);
    CHECK(b.scenario_id() == -1);
    for (std::size_t p = 0; p < 4; ++p) {
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix& beta = s.matrix(c.at(i));
            for (std::size_t j = 0; j < 2; ++j) {
                double expected = 0.0;
                for (std::size_t k = 0; k < 2; ++k) {
                    expected += beta(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) * d(p, n - 1 - i, k);
                }
                CHECK(b(p, i, j) == -expected);
            }
        }
    }
}

TEST_CASE("build_gbm rejects a schedule of the wrong length", "[gbm]") {
    const DriverPaths d = sample_driver(TimeGrid(1.0, 4), 2, 1, 1);
    CHECK_THROWS_AS(build_gbm(d, ControlSchedule::constant(0, 3), ScenarioSet(1, {m1(1.0)})), UsageError);
}

TEST_CASE("variance of B_0 - B_T scales with the loading", "[gbm]") {
    const double horizon = 1.3;
    const DriverPaths d = sample_driver(TimeGrid(horizon, 1), 10000, 1, 21);
    const GBMPaths b = build_gbm(d, ControlSchedule::constant(0, 1), ScenarioSet(1, {m1(2.0)}));
    std::vector<double> xs;
    for (std::size_t p = 0; p < b.n_paths; ++p) xs.push_back(b.b_minus_bt(p, 0, 0));
    CHECK(std::abs(sample_variance(xs) / (4.0 * horizon) - 1.0) <= 0.05);
}

TEST_CASE("backward integral of simple integrands", "[gbm]") {
    const std::size_t n = 4;
    const DriverPaths d = sample_driver(TimeGrid(1.0, n), 6, 1, 5);
    const GBMPaths b = build_gbm(d, ControlSchedule::constant(0, n), ScenarioSet(1, {m1(0.7)}));

    SECTION("zero integrand") {
        const PathProcess i = backward_integral(Integrand(6, n + 1, 1, 0.0), b);
        for (double v : i.data) CHECK(v == 0.0);
    }
    SECTION("constant integrand telescopes") {
        const double c = 1.7;
        const PathProcess i = backward_integral(Integrand(6, n + 1, 1, c), b);
        for (std::size_t p = 0; p < 6; ++p) {
            CHECK(i(p, n, 0) == 0.0);
            for (std::size_t k = 0; k <= n; ++k) CHECK(i(p, k, 0) == Approx(c * b.b_minus_bt(p, k, 0)).margin(1e-14));
        }
    }
}

TEST_CASE("backward integral on two steps matches the defining sum", "[gbm]") {
    const DriverPaths d = sample_driver(TimeGrid(1.0, 2), 3, 1, 8);
    const GBMPaths b = build_gbm(d, ControlSchedule::constant(0, 2), ScenarioSet(1, {m1(1.0)}));
    Integrand xi(3, 3, 1, 0.0);
    for (std::size_t p = 0; p < 3; ++p) {
        xi(p, 1, 0) = 0.5 + static_cast<double>(p);  // xi_1 on (t0, t1]
        xi(p, 2, 0) = -1.25;                          // xi_2 on (t1, t2]
    }
    const PathProcess i = backward_integral(xi, b);
    for (std::size_t p = 0; p < 3; ++p) {
        const double b0 = b.b_minus_bt(p, 0, 0), b1 = b.b_minus_bt(p, 1, 0), b2 = 0.0;
        CHECK(i(p, 0, 0) == Approx(xi(p, 1, 0) * (b0 - b1) + xi(p, 2, 0) * (b1 - b2)).margin(1e-14));
    }
}

TEST_CASE("backward integral is linear", "[gbm]") {
    const std::size_t n = 8;
    Matrix beta(2, 2);
    beta << 1.0, 0.1, 0.2, 0.6;
    const DriverPaths d = sample_driver(TimeGrid(1.0, n), 5, 2, 2);
    const GBMPaths b = build_gbm(d, ControlSchedule::constant(0, n), ScenarioSet(2, {beta}));
    const Integrand x1 = make_integrand(IntegrandPreset::kPathTanh, b);
    const Integrand x2 = make_integrand(IntegrandPreset::kTimeCos, b);
    const double alpha = -0.75;
    Integrand combo = x1;
    for (std::size_t k = 0; k < combo.data.size(); ++k) combo.data[k] = alpha * x1.data[k] + x2.data[k];
    const PathProcess i1 = backward_integral(x1, b), i2 = backward_integral(x2, b), ic = backward_integral(combo, b);
    for (std::size_t k = 0; k < ic.data.size(); ++k) {
        CHECK(ic.data[k] == Approx(alpha * i1.data[k] + i2.data[k]).margin(1e-13));
    }
}

TEST_CASE("backward integral rejects a width mismatch", "[gbm]") {
    const DriverPaths d = sample_driver(TimeGrid(1.0, 2), 2, 1, 1);
    const GBMPaths b = build_gbm(d, ControlSchedule::constant(0, 2), ScenarioSet(1, {m1(1.0)}));
    CHECK_THROWS_AS(backward_integral(Integrand(2, 3, 2), b), UsageError);
}

TEST_CASE("integrand preset names round-trip", "[gbm]") {
    for (auto p : {IntegrandPreset::kConstant, IntegrandPreset::kTimeCos, IntegrandPreset::kPathTanh}) {
        CHECK(integrand_preset_from_string(to_string(p)) == p);
    }
    CHECK_THROWS_AS(integrand_preset_from_string("nope"), UsageError);
}

TEST_CASE("diagnostics of the zero integrand", "[gbm]") {
    const ScenarioSet s(1, {m1(1.0)});
    const DriverPaths d = sample_driver(TimeGrid(1.0, 8), 100, 1, 3);
    const std::vector<GBMPaths> bundles{build_gbm(d, ControlSchedule::constant(0, 8), s)};
    const IntegralDiagnostics r = integral_diagnostics(IntegrandPreset::kConstant, bundles, s, 0.0);
    CHECK(r.mean_i0 == 0.0);
    CHECK(r.var_i0 == 0.0);
    CHECK(r.bound == 0.0);
    CHECK(r.sup_stat == 0.0);
    CHECK(r.doob_bound == 0.0);
    CHECK(r.mean_zero_holds());
    CHECK(r.isometry_bound_holds());
    CHECK(r.doob_bound_holds());
}

TEST_CASE("classical isometry for a singleton scenario", "[gbm]") {
    const double horizon = 1.0;
    const ScenarioSet s(1, {m1(1.0)});
    const DriverPaths d = sample_driver(TimeGrid(horizon, 16), 20000, 1, 44);
    const std::vector<GBMPaths> bundles{build_gbm(d, ControlSchedule::constant(0, 16), s)};
    const IntegralDiagnostics r = integral_diagnostics(IntegrandPreset::kConstant, bundles, s);
    // Var(W_T) = T; the standard error of the second moment estimate bounds the band.
    CHECK(std::abs(r.var_i0 - horizon) <= 3.0 * r.per_scenario[0].second_moment_se);
    CHECK(r.bound == Approx(horizon));
}

TEST_CASE("isometry bound is attained at the extremal scenario", "[gbm]") {
    const double horizon = 1.0;
    const ScenarioSet s(1, {m1(1.0), m1(2.0)});
    const DriverPaths d = sample_driver(TimeGrid(horizon, 8), 20000, 1, 45);
    std::vector<GBMPaths> bundles;
    for (std::size_t k = 0; k < 2; ++k) bundles.push_back(build_gbm(d, ControlSchedule::constant(k, 8), s));
    const IntegralDiagnostics r = integral_diagnostics(IntegrandPreset::kConstant, bundles, s);
    CHECK(r.bound == Approx(4.0 * horizon));
    CHECK(std::abs(r.var_i0 - 4.0 * horizon) <= 3.0 * r.per_scenario[1].second_moment_se);
    CHECK(r.isometry_bound_holds());
    CHECK(r.doob_bound_holds());
    CHECK(r.mean_zero_holds());
}

TEST_CASE("gbm CSV dump has the documented header", "[gbm]") {
    const ScenarioSet s(1, {m1(1.0)});
    const DriverPaths d = sample_driver(TimeGrid(1.0, 2), 3, 1, 1);
    std::ostringstream os;
    write_gbm_csv(os, {build_gbm(d, ControlSchedule::constant(0, 2), s)}, 2);
    std::istringstream in(os.str());
    std::string header;
    std::getline(in, header);
    CHECK(header == "path_id,scenario_id,step,coord,dB_backward");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 2 * 2 * 1);
}
