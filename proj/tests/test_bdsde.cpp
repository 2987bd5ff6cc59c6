#include "catch_amalgamated.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "gspde/bdsde.hpp"
#include "oracles.hpp"

using namespace gspde;
using Catch::Approx;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

Vector vec1(double v) { return Vector::Constant(1, v); }

RegressionBasis poly(std::size_t degree) {
    RegressionBasis b;
    b.kind = RegressionBasis::Kind::kPolynomial;
    b.degree = degree;
    return b;
}

struct Ensemble {
    HuntPaths hunt;
    std::vector<GBMPaths> bundles;
    [[nodiscard]] BdsdeEnsemble view() const { return BdsdeEnsemble{&hunt, &bundles}; }
};

Ensemble make_ensemble(const CoefficientField& field, const TimeGrid& tg, const ScenarioSet& s, std::size_t nx,
                       std::size_t nb, std::uint64_t seed) {
    Ensemble e{simulate_hunt(field, InitialLaw::gaussian(Vector::Zero(static_cast<Eigen::Index>(field.dim())), 1.0), tg,
                             nx, seed),
               {}};
    const DriverPaths d = sample_driver(tg, nb, s.dim(), seed + 1);
    for (std::size_t k = 0; k < s.size(); ++k) e.bundles.push_back(build_gbm(d, ControlSchedule::constant(k, tg.steps()), s));
    return e;
}

}  // namespace

TEST_CASE("regression reproduces constants and in-span targets", "[bdsde]") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix x(500, 1);
    for (Eigen::Index i = 0; i < 500; ++i) x(i, 0) = n(rng);

    for (auto kind : {RegressionBasis::Kind::kPolynomial, RegressionBasis::Kind::kMonomial, RegressionBasis::Kind::kBins}) {
        RegressionBasis b = poly(3);
        b.kind = kind;
        b.bins = 8;
        const RegressionFit fit = regress_conditional(Vector::Constant(500, 2.5), x, b);
        CHECK((fit.fitted.array() - 2.5).abs().maxCoeff() <= 1e-10);
    }
    const RegressionFit lin = regress_conditional(x.col(0), x, poly(1));
    CHECK((lin.fitted - x.col(0)).cwiseAbs().maxCoeff() <= 1e-10);
    const Regressor r(x, poly(1));
    const Vector c = r.fit(x.col(0));
    for (double p : {-2.0, 0.3, 1.7}) CHECK(r.predict(c, vec1(p)) == Approx(p).margin(1e-10));
}

TEST_CASE("quadratic coefficient is recovered within three standard errors", "[bdsde]") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    const Eigen::Index m = 10000;
    Matrix x(m, 1);
    Vector y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        x(i, 0) = n(rng);
        y(i) = x(i, 0) * x(i, 0) + 0.5 * n(rng);
    }
    RegressionBasis b = poly(2);
    b.kind = RegressionBasis::Kind::kMonomial;
    const Regressor r(x, b);
    const Vector c = r.fit(y);
    const Vector se = r.std_errors(y, c);
    REQUIRE(c.size() == 3);
    CHECK(std::abs(c(2) - 1.0) <= 3.0 * se(2));

    // oracle: OLS normal equations on the raw monomials
    Matrix design(m, 3);
    design.col(0).setOnes();
    design.col(1) = x.col(0);
    design.col(2) = x.col(0).array().square().matrix();
    const Vector oracle = (design.transpose() * design).ldlt().solve(design.transpose() * y);
    CHECK((oracle - c).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("regression rejects undersized ensembles", "[bdsde]") {
    Matrix x = Matrix::Random(20, 1);
    CHECK_THROWS_AS(Regressor(x, poly(4)), UsageError);
}

TEST_CASE("extract_z examples", "[bdsde]") {
    const CoefficientField half = CoefficientField::constant(1, 0.5);
    const TimeGrid tg(1.0, 10);
    const HuntPaths h = simulate_hunt(half, InitialLaw::gaussian(vec1(0.0), 1.0), tg, 10000, 3);
    const std::size_t step = 4;
    const Eigen::Index nx = static_cast<Eigen::Index>(h.n_paths);
    Matrix feat(nx, 1), dm(nx, 1);
    Vector next(nx), indep(nx);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index p = 0; p < nx; ++p) {
        feat(p, 0) = h.x(static_cast<std::size_t>(p), step, 0);
        dm(p, 0) = h.dm(static_cast<std::size_t>(p), step, 0);
        next(p) = h.x(static_cast<std::size_t>(p), step + 1, 0);
        indep(p) = n(rng);
    }
    const Regressor r(feat, poly(2));
    const double dt = tg.dt();

    // per-sample SE of Z = (2 dt a)^{-1} * mean(v dM), with a = 1/2
    auto se_of = [&](const Vector& v) {
        std::vector<double> prod;
        for (Eigen::Index p = 0; p < nx; ++p) prod.push_back(v(p) * dm(p, 0) / dt);
        return sample_stats(prod).std_error;
    };
    const Matrix zc = extract_z(Vector::Constant(nx, 3.0), dm, feat, half, dt, r);
    CHECK(std::abs(zc.col(0).mean()) <= 3.0 * 3.0 * se_of(Vector::Ones(nx)));
    const Matrix zm = extract_z(next, dm, feat, half, dt, r);
    CHECK(std::abs(zm.col(0).mean() - 1.0) <= 3.0 * se_of(next - feat.col(0)));
    const Matrix zi = extract_z(indep, dm, feat, half, dt, r);
    CHECK(std::abs(zi.col(0).mean()) <= 3.0 * se_of(indep));
}

TEST_CASE("linear solver: constant terminal value", "[bdsde]") {
    const CoefficientField field = CoefficientField::sinusoidal_1d();
    const TimeGrid tg(1.0, 8);
    const ScenarioSet s(1, {m1(1.0), m1(0.5)});
    const Ensemble e = make_ensemble(field, tg, s, 400, 3, 5);
    const BdsdeSolution sol =
        solve_linear_bdsde({reaction::zero(), {reaction::zero()}}, spatial::constant(1.5), field, e.view(), poly(4));
    REQUIRE(sol.blocks.size() == 6);
    for (const auto& b : sol.blocks) {
        CHECK((b.y.array() - 1.5).abs().maxCoeff() <= 1e-10);
        CHECK(b.z[0].cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("linear solver: unit f gives the remaining time", "[bdsde]") {
    const CoefficientField field = CoefficientField::sinusoidal_1d();
    const TimeGrid tg(1.0, 8);
    const ScenarioSet s(1, {m1(1.0)});
    const Ensemble e = make_ensemble(field, tg, s, 400, 2, 6);
    const BdsdeSolution sol =
        solve_linear_bdsde({reaction::constant(1.0), {reaction::zero()}}, spatial::zero(), field, e.view(), poly(4));
    for (const auto& b : sol.blocks) {
        for (std::size_t i = 0; i <= 8; ++i) {
            const double expected = 1.0 - tg.time(i);
            CHECK((b.y.col(static_cast<Eigen::Index>(i)).array() - expected).abs().maxCoeff() <= 1e-10);
        }
    }
}

TEST_CASE("linear solver: unit g telescopes the backward increments", "[bdsde]") {
    const CoefficientField field = CoefficientField::sinusoidal_1d();
    const TimeGrid tg(1.0, 8);
    const ScenarioSet s(1, {m1(1.0), m1(0.5)});
    const Ensemble e = make_ensemble(field, tg, s, 400, 3, 7);
    const BdsdeSolution sol =
        solve_linear_bdsde({reaction::zero(), {reaction::constant(1.0)}}, spatial::zero(), field, e.view(), poly(4));
    for (const auto& b : sol.blocks) {
        const GBMPaths& g = e.bundles[b.bundle];
        for (std::size_t i = 0; i <= 8; ++i) {
            const double expected = g.b_minus_bt(b.b_path, i, 0);
            CHECK((b.y.col(static_cast<Eigen::Index>(i)).array() - expected).abs().maxCoeff() <= 1e-10);
        }
    }
}

TEST_CASE("terminal slice is exactly the terminal function", "[bdsde]") {
    const CoefficientField field = CoefficientField::sinusoidal_1d();
    const TimeGrid tg(1.0, 4);
    const ScenarioSet s(1, {m1(1.0)});
    const Ensemble e = make_ensemble(field, tg, s, 400, 2, 8);
    const SpatialFunction psi = spatial::gaussian(1.0, 1.0, 0.0);
    const BdsdeProblem p(tg, field, s, psi, reaction::tanh_composite(0.25, 0.0), {reaction::tanh_composite(0.0, 0.5)},
                         0.25, 0.5);
    const BdsdeSolution sol = solve_gbdsde_picard(p, e.view(), poly(4));
    for (const auto& b : sol.blocks) {
        for (std::size_t x = 0; x < e.hunt.n_paths; ++x) {
            CHECK(b.y(static_cast<Eigen::Index>(x), 4) == psi.eval1(e.hunt.x(x, 4, 0)));
        }
    }
}

TEST_CASE("zero terminal with f = -Y has the zero solution", "[bdsde]") {
    const CoefficientField field = CoefficientField::constant(1, 1.0);
    const TimeGrid tg(1.0, 8);
    const ScenarioSet s(1, {m1(1.0)});
    const Ensemble e = make_ensemble(field, tg, s, 400, 2, 9);
    const BdsdeProblem p(tg, field, s, spatial::zero(), reaction::affine_y(-1.0, 0.0), {reaction::zero()}, 1.0, 0.0);
    const BdsdeSolution sol = solve_gbdsde_picard(p, e.view(), poly(4));
    CHECK(sol.report.converged);
    for (const auto& b : sol.blocks) {
        CHECK(b.y.cwiseAbs().maxCoeff() == 0.0);
        CHECK(b.z[0].cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("problem construction enforces the contraction property", "[bdsde]") {
    const TimeGrid tg(1.0, 4);
    CHECK_THROWS_AS(BdsdeProblem(tg, CoefficientField::sinusoidal_1d(), ScenarioSet(1, {m1(1.2)}), spatial::zero(),
                                 reaction::zero(), {reaction::tanh_composite(0.0, 1.0)}, 0.0, 1.0),
                    ContractionError);
    const BdsdeProblem ok(tg, CoefficientField::sinusoidal_1d(), ScenarioSet(1, {m1(1.0)}), spatial::zero(),
                          reaction::zero(), {reaction::zero()}, 0.25, 0.5);
    CHECK(ok.contraction_margin() == Approx(2.0 * 1.0 - 0.5 * 1.5 * 1.0));
}

TEST_CASE("contraction constants follow the proof relations", "[bdsde]") {
    const double k = 0.25, alpha = 0.5, big = 1.0, sb = 1.0, lam = 1.0;
    const BdsdeConstants c = BdsdeConstants::from_constants(k, alpha, big, sb, lam);
    CHECK(c.bound == Approx((k * c.eps + alpha * big * sb * sb) / (2.0 * lam)));
    CHECK(c.delta == Approx(k * (c.eps + sb * sb) / (k * c.eps + alpha * big * sb * sb)));
    CHECK(c.beta == Approx(2.0 * lam * c.delta + 1.0 / c.eps));
    CHECK(c.bound < 1.0);
    const BdsdeConstants zero_k = BdsdeConstants::from_constants(0.0, alpha, big, sb, lam);
    CHECK(zero_k.delta == 1.0);
}

TEST_CASE("Picard ratios respect the proof bound", "[bdsde]") {
    const CoefficientField field = CoefficientField::constant(1, 1.0);
    const TimeGrid tg(1.0, 8);
    const ScenarioSet s(1, {m1(1.0)});
    const Ensemble e = make_ensemble(field, tg, s, 1000, 2, 10);
    const BdsdeProblem p(tg, field, s, spatial::gaussian(1.0, 1.0, 0.0), reaction::tanh_composite(0.25, -0.25),
                         {reaction::tanh_composite(0.2, 0.5)}, 0.25, 0.5);
    const BdsdeSolution sol = solve_gbdsde_picard(p, e.view(), poly(4));
    CHECK(sol.report.converged);
    const double limit = sol.report.constants.bound + 0.05;
    CHECK(sol.report.constants.bound == Approx(BdsdeConstants::from_constants(0.25, 0.5, 1.0, 1.0, 1.0).bound));
    REQUIRE_FALSE(sol.report.ratios.empty());
    for (double r : sol.report.ratios) CHECK(r <= limit);
}

TEST_CASE("non-convergence raises a diagnostic", "[bdsde]") {
    const CoefficientField field = CoefficientField::constant(1, 1.0);
    const TimeGrid tg(1.0, 8);
    const ScenarioSet s(1, {m1(1.0)});
    const Ensemble e = make_ensemble(field, tg, s, 400, 2, 11);
    const BdsdeProblem p(tg, field, s, spatial::gaussian(1.0, 1.0, 0.0), reaction::tanh_composite(0.25, -0.25),
                         {reaction::tanh_composite(0.2, 0.5)}, 0.25, 0.5);
    BdsdePicardOptions o;
    o.max_iter = 2;
    o.tol = 1e-14;
    CHECK_THROWS_AS(solve_gbdsde_picard(p, e.view(), poly(4), o), ConvergenceError);
}

TEST_CASE("implicit variant converges close to the explicit scheme", "[bdsde]") {
    const CoefficientField field = CoefficientField::constant(1, 1.0);
    const TimeGrid tg(1.0, 16);
    const ScenarioSet s(1, {m1(1.0)});
    const Ensemble e = make_ensemble(field, tg, s, 1000, 2, 12);
    const BdsdeProblem p(tg, field, s, spatial::gaussian(1.0, 1.0, 0.0), reaction::affine_y(-0.25, 0.1),
                         {reaction::zero()}, 0.25, 0.5);
    BdsdePicardOptions o;
    const BdsdeSolution ex = solve_gbdsde_picard(p, e.view(), poly(4), o);
    o.implicit_y = true;
    const BdsdeSolution im = solve_gbdsde_picard(p, e.view(), poly(4), o);
    CHECK(im.report.converged);
    const double diff = (ex.block(0, 0).y - im.block(0, 0).y).cwiseAbs().maxCoeff();
    CHECK(diff > 0.0);
    CHECK(diff <= 0.05);
}

TEST_CASE("zero drivers reproduce the semigroup applied to the terminal function", "[bdsde]") {
    const double a = 0.5, s0 = 1.0;
    const CoefficientField field = CoefficientField::constant(1, a);
    const TimeGrid tg(1.0, 8);
    const ScenarioSet s(1, {m1(1.0)});
    const Ensemble e = make_ensemble(field, tg, s, 4000, 1, 13);
    const BdsdeProblem p(tg, field, s, spatial::gaussian(1.0, s0, 0.0), reaction::zero(), {reaction::zero()}, 0.0, 0.0);
    const BdsdeSolution sol = solve_gbdsde_picard(p, e.view(), poly(8));
    for (std::size_t i : {std::size_t{0}, std::size_t{4}}) {
        double num = 0.0, den = 0.0;
        for (std::size_t x = 0; x < e.hunt.n_paths; ++x) {
            const double ref = oracle::heat_kernel_gaussian(e.hunt.x(x, i, 0), s0, a, 1.0 - tg.time(i));
            const double d = sol.block(0, 0).y(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(i)) - ref;
            num += d * d;
            den += ref * ref;
        }
        CHECK(std::sqrt(num / den) <= 0.05);
    }
}

TEST_CASE("linear solutions satisfy the discrete martingale property", "[bdsde]") {
    const CoefficientField field = CoefficientField::sinusoidal_1d();
    const TimeGrid tg(1.0, 8);
    const ScenarioSet s(1, {m1(1.0), m1(0.5)});
    const Ensemble e = make_ensemble(field, tg, s, 4000, 2, 14);
    const ReactionTerm f = reaction::sin_x(0.5, 1.0, 0.0);
    const ReactionTerm g = reaction::gauss_bump(0.3, 1.0, 0.0, 0.0);
    const BdsdeSolution sol = solve_linear_bdsde({f, {g}}, spatial::gaussian(1.0, 1.0, 0.0), field, e.view(), poly(6));
    for (const auto& b : sol.blocks) {
        const GBMPaths& gbm = e.bundles[b.bundle];
        for (std::size_t i = 0; i < 8; ++i) {
            std::vector<double> r;
            for (std::size_t x = 0; x < e.hunt.n_paths; ++x) {
                const double pos = e.hunt.x(x, i + 1, 0);
                const double t1 = tg.time(i + 1);
                const auto xi = static_cast<Eigen::Index>(x);
                r.push_back(b.y(xi, static_cast<Eigen::Index>(i)) - b.y(xi, static_cast<Eigen::Index>(i + 1)) -
                            f.eval1(t1, pos, 0.0, 0.0) * tg.dt() -
                            g.eval1(t1, pos, 0.0, 0.0) * gbm(b.b_path, i, 0));
            }
            const SampleStats st = sample_stats(r);
            CHECK(std::abs(st.mean) <= 3.0 * st.std_error + 1e-12);
        }
    }
}

TEST_CASE("doubling the basis degree stays within the Monte Carlo band", "[bdsde]") {
    const CoefficientField field = CoefficientField::sinusoidal_1d();
    const TimeGrid tg(1.0, 8);
    const ScenarioSet s(1, {m1(1.0)});
    const Ensemble e = make_ensemble(field, tg, s, 4000, 1, 15);
    const BdsdeProblem p(tg, field, s, spatial::gaussian(1.0, 1.0, 0.0), reaction::zero(), {reaction::zero()}, 0.0, 0.0);
    const BdsdeSolution lo = solve_gbdsde_picard(p, e.view(), poly(4));
    const BdsdeSolution hi = solve_gbdsde_picard(p, e.view(), poly(8));
    std::vector<double> y0;
    for (Eigen::Index x = 0; x < lo.block(0, 0).y.rows(); ++x) y0.push_back(lo.block(0, 0).y(x, 0));
    const SampleStats st = sample_stats(y0);
    CHECK(std::abs(hi.block(0, 0).y.col(0).mean() - st.mean) <= 3.0 * st.std_error);
}

TEST_CASE("product of two linear solutions follows the discrete product rule", "[bdsde]") {
    // Y = c1 + g1 (B_t - B_T) and Y~ = c2 + g2 (B_t - B_T); the bracket term uses the scenario covariance.
    const CoefficientField field = CoefficientField::constant(1, 1.0);
    const ScenarioSet s(1, {m1(0.8)});
    const double c1 = 1.0, g1 = 0.7, c2 = -0.5, g2 = 1.3;
    const TimeGrid fine(1.0, 64);
    const DriverPaths d = sample_driver(fine, 200, 1, 17);
    std::vector<double> rms;
    for (std::size_t factor : {std::size_t{16}, std::size_t{4}, std::size_t{1}}) {
        const DriverPaths dd = factor > 1 ? d.coarsened(factor) : d;
        const TimeGrid& tg = dd.grid;
        const HuntPaths hunt = simulate_hunt(field, InitialLaw::gaussian(vec1(0.0), 1.0), tg, 100, 16);
        const std::vector<GBMPaths> bundles{build_gbm(dd, ControlSchedule::constant(0, tg.steps()), s)};
        const BdsdeEnsemble ens{&hunt, &bundles};
        const BdsdeSolution y1 =
            solve_linear_bdsde({reaction::zero(), {reaction::constant(g1)}}, spatial::constant(c1), field, ens, poly(1));
        const BdsdeSolution y2 =
            solve_linear_bdsde({reaction::zero(), {reaction::constant(g2)}}, spatial::constant(c2), field, ens, poly(1));
        const std::size_t n = tg.steps();
        const double cov = 0.8 * 0.8 * tg.dt();
        double acc = 0.0;
        for (std::size_t b = 0; b < 200; ++b) {
            const Matrix& a = y1.block(0, b).y;
            const Matrix& c = y2.block(0, b).y;
            double rhs = c1 * c2;
            for (std::size_t i = n; i-- > 0;) {
                const auto ii = static_cast<Eigen::Index>(i + 1);
                const double db = bundles[0](b, i, 0);
                rhs += (g1 * c(0, ii) + g2 * a(0, ii)) * db + g1 * g2 * cov;
            }
            const double r = a(0, 0) * c(0, 0) - rhs;
            acc += r * r;
        }
        rms.push_back(std::sqrt(acc / 200.0));
    }
    // residual rms is g1 g2 0.64 sqrt(2 dt)
    CHECK(rms[1] / rms[0] == Approx(0.5).margin(0.15));
    CHECK(rms[2] / rms[1] == Approx(0.5).margin(0.15));
}

TEST_CASE("delta norm examples", "[bdsde]") {
    const CoefficientField field = CoefficientField::constant(1, 1.0);
    const TimeGrid tg(1.0, 2000);
    const ScenarioSet s(1, {m1(1.0)});
    const HuntPaths h = simulate_hunt(field, InitialLaw::point(vec1(0.0)), tg, 30, 18);
    const std::vector<GBMPaths> bundles{build_gbm(sample_driver(tg, 1, 1, 19), ControlSchedule::constant(0, 2000), s)};
    BdsdeSolution sol = solve_linear_bdsde({reaction::zero(), {reaction::zero()}}, spatial::zero(), field,
                                           BdsdeEnsemble{&h, &bundles}, RegressionBasis{RegressionBasis::Kind::kBins, 0, 1, 0.0});
    CHECK(delta_norm(sol, 1.0, 1.0) == 0.0);
    sol.blocks[0].y.setOnes();
    CHECK(delta_norm(sol, 0.0, 1.0) == Approx(1.0).epsilon(1e-12));
    sol.blocks[0].y.setZero();
    sol.blocks[0].z[0].setOnes();
    CHECK(delta_norm(sol, 1.0, 0.0) == Approx(std::sqrt(std::exp(1.0) - 1.0)).epsilon(1e-6));
}

TEST_CASE("bdsde CSV dump has the documented header", "[bdsde]") {
    const CoefficientField field = CoefficientField::constant(2, 1.0);
    const TimeGrid tg(1.0, 2);
    const ScenarioSet s(1, {m1(1.0)});
    const HuntPaths h = simulate_hunt(field, InitialLaw::point(Vector::Zero(2)), tg, 60, 20);
    const std::vector<GBMPaths> bundles{build_gbm(sample_driver(tg, 2, 1, 21), ControlSchedule::constant(0, 2), s)};
    const BdsdeSolution sol = solve_linear_bdsde({reaction::zero(), {reaction::zero()}}, spatial::zero(), field,
                                                 BdsdeEnsemble{&h, &bundles}, poly(1));
    std::ostringstream os;
    write_bdsde_csv(os, sol, 1, 2, 1);
    std::istringstream in(os.str());
    std::string header;
    std::getline(in, header);
    CHECK(header == "scenario_id,b_path_id,x_path_id,t,Y,Z_1,Z_2");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == 2 * 3);
}
