#include "gspde/pde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gspde/format.hpp"

namespace gspde {

Boundary boundary_from_string(const std::string& name) {
    if (name == "dirichlet0") return Boundary::kDirichlet0;
    if (name == "periodic") return Boundary::kPeriodic;
    throw UsageError("unknown boundary condition '" + name + "' (expected dirichlet0, periodic)");
}

std::string to_string(Boundary b) { return b == Boundary::kDirichlet0 ? "dirichlet0" : "periodic"; }

// ---------------------------------------------------------------------------
// SpatialGrid
// ---------------------------------------------------------------------------

SpatialGrid::SpatialGrid(std::size_t dim, double half_width, std::size_t points, Boundary bc)
    : dim_(dim), half_width_(half_width), m_(points), bc_(bc) {
    if (dim_ != 1) throw UsageError("SpatialGrid: only dimension 1 is supported");
    if (!(half_width_ > 0.0) || !std::isfinite(half_width_)) {
        throw UsageError("SpatialGrid: half-width R must be positive and finite");
    }
    if (m_ < 3) throw UsageError("SpatialGrid: at least 3 points per axis are required");
}

Vector SpatialGrid::sample(const SpatialFunction& fn) const {
    Vector u(static_cast<Eigen::Index>(m_));
    for (std::size_t i = 0; i < m_; ++i) u(static_cast<Eigen::Index>(i)) = fn.eval1(x(i));
    enforce(u);
    return u;
}

void SpatialGrid::enforce(Vector& u) const {
    const auto last = static_cast<Eigen::Index>(m_ - 1);
    if (bc_ == Boundary::kDirichlet0) {
        u(0) = 0.0;
        u(last) = 0.0;
    } else {
        u(last) = u(0);
    }
}

double SpatialGrid::inner(const Vector& u, const Vector& v) const {
    const auto n = static_cast<Eigen::Index>(bc_ == Boundary::kPeriodic ? m_ - 1 : m_);
    return u.head(n).dot(v.head(n)) * dx();
}

double SpatialGrid::grad_norm2(const Vector& u) const {
    const auto m = static_cast<Eigen::Index>(m_);
    const double h = dx();
    double s = 0.0;
    for (Eigen::Index k = 0; k + 1 < m; ++k) {
        const Eigen::Index next = (bc_ == Boundary::kPeriodic && k + 1 == m - 1) ? 0 : k + 1;
        const double d = u(next) - u(k);
        s += d * d;
    }
    return s / h;
}

Vector SpatialGrid::gradient(const Vector& u) const {
    const auto m = static_cast<Eigen::Index>(m_);
    const double h = dx();
    Vector g(m);
    for (Eigen::Index k = 1; k + 1 < m; ++k) g(k) = (u(k + 1) - u(k - 1)) / (2.0 * h);
    if (bc_ == Boundary::kPeriodic) {
        g(0) = (u(1) - u(m - 2)) / (2.0 * h);
        g(m - 1) = g(0);
    } else {
        g(0) = (u(1) - u(0)) / h;
        g(m - 1) = (u(m - 1) - u(m - 2)) / h;
    }
    return g;
}

double SpatialGrid::interpolate(const Vector& u, double xq) const {
    const double period = 2.0 * half_width_;
    double y = xq + half_width_;
    if (bc_ == Boundary::kPeriodic) {
        y = std::fmod(y, period);
        if (y < 0.0) y += period;
    } else if (y <= 0.0 || y >= period) {
        return 0.0;
    }
    const double h = dx();
    auto k = static_cast<std::size_t>(std::floor(y / h));
    if (k > m_ - 2) k = m_ - 2;
    const double f = y / h - static_cast<double>(k);
    return (1.0 - f) * u(static_cast<Eigen::Index>(k)) + f * u(static_cast<Eigen::Index>(k + 1));
}

// ---------------------------------------------------------------------------
// DivergenceOperator
// ---------------------------------------------------------------------------

DivergenceOperator::DivergenceOperator(const CoefficientField& field, const SpatialGrid& grid) : grid_(grid) {
    if (field.dim() != grid.dim()) {
        throw UsageError("DivergenceOperator: coefficient field and grid dimensions differ");
    }
    const std::size_t m = grid.points();
    faces_.resize(m - 1);
    for (std::size_t k = 0; k + 1 < m; ++k) faces_[k] = field.a1(0.5 * (grid.x(k) + grid.x(k + 1)));

    const std::size_t n = grid.n_active();
    const std::size_t first = grid.first_active();
    const double inv = 1.0 / (grid.dx() * grid.dx());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(3 * n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t k = r + first;
        double al = 0.0, ar = 0.0;
        long left = -1, right = -1;
        if (grid.boundary() == Boundary::kPeriodic) {
            al = faces_[(k + n - 1) % n];
            ar = faces_[k];
            left = static_cast<long>((r + n - 1) % n);
            right = static_cast<long>((r + 1) % n);
        } else {
            al = faces_[k - 1];
            ar = faces_[k];
            if (r > 0) left = static_cast<long>(r - 1);
            if (r + 1 < n) right = static_cast<long>(r + 1);
        }
        const auto ri = static_cast<Eigen::Index>(r);
        trip.emplace_back(ri, ri, -(al + ar) * inv);
        if (left >= 0) trip.emplace_back(ri, static_cast<Eigen::Index>(left), al * inv);
        if (right >= 0) trip.emplace_back(ri, static_cast<Eigen::Index>(right), ar * inv);
    }
    matrix_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    matrix_.setFromTriplets(trip.begin(), trip.end());
    matrix_.makeCompressed();
}

Vector DivergenceOperator::restrict_active(const Vector& full) const {
    return full.segment(static_cast<Eigen::Index>(grid_.first_active()), static_cast<Eigen::Index>(grid_.n_active()));
}

Vector DivergenceOperator::extend_active(const Vector& active) const {
    Vector full = Vector::Zero(static_cast<Eigen::Index>(grid_.points()));
    full.segment(static_cast<Eigen::Index>(grid_.first_active()), static_cast<Eigen::Index>(grid_.n_active())) = active;
    grid_.enforce(full);
    return full;
}

Vector DivergenceOperator::apply(const Vector& input) const {
    const Vector u = extend_active(restrict_active(input));
    const auto m = static_cast<Eigen::Index>(grid_.points());
    const bool periodic = grid_.boundary() == Boundary::kPeriodic;
    const double inv = 1.0 / (grid_.dx() * grid_.dx());
    Vector flux(m - 1);
    for (Eigen::Index k = 0; k + 1 < m; ++k) {
        const Eigen::Index next = (periodic && k + 1 == m - 1) ? 0 : k + 1;
        flux(k) = faces_[static_cast<std::size_t>(k)] * (u(next) - u(k));
    }
    Vector out = Vector::Zero(m);
    const std::size_t first = grid_.first_active();
    const std::size_t n = grid_.n_active();
    for (std::size_t r = 0; r < n; ++r) {
        const auto k = static_cast<Eigen::Index>(r + first);
        const Eigen::Index left = periodic ? (k + static_cast<Eigen::Index>(n) - 1) % static_cast<Eigen::Index>(n) : k - 1;
        out(k) = (flux(k) - flux(left)) * inv;
    }
    if (periodic) out(m - 1) = out(0);
    return out;
}

double DivergenceOperator::energy(const Vector& u, const Vector& v) const {
    const auto m = static_cast<Eigen::Index>(grid_.points());
    const bool periodic = grid_.boundary() == Boundary::kPeriodic;
    double s = 0.0;
    for (Eigen::Index k = 0; k + 1 < m; ++k) {
        const Eigen::Index next = (periodic && k + 1 == m - 1) ? 0 : k + 1;
        s += faces_[static_cast<std::size_t>(k)] * (u(next) - u(k)) * (v(next) - v(k));
    }
    return s / grid_.dx();
}

DivergenceOperator discretize_operator(const CoefficientField& field, const SpatialGrid& grid) {
    return DivergenceOperator(field, grid);
}

// ---------------------------------------------------------------------------
// Semigroup
// ---------------------------------------------------------------------------

Semigroup::Semigroup(DivergenceOperator op, double dt_max) : op_(std::move(op)), dt_max_(dt_max) {
    if (!(dt_max_ > 0.0)) throw UsageError("Semigroup: dt_max must be positive");
}

std::size_t Semigroup::substeps(double tau) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tau / dt_max_ - 1e-9)));
}

const Semigroup::Step& Semigroup::step_for(double h) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(h);
    if (it != cache_.end()) return *it->second;
    const SparseMatrix& l = op_.matrix();
    SparseMatrix id(l.rows(), l.cols());
    id.setIdentity();
    auto step = std::make_unique<Step>();
    const SparseMatrix lhs = id - (0.5 * h) * l;
    step->rhs = id + (0.5 * h) * l;
    step->solver.compute(lhs);
    if (step->solver.info() != Eigen::Success) {
        std::ostringstream os;
        os << "Crank-Nicolson factorization failed (step " << h << ", " << l.rows() << " unknowns)";
        throw NumericalError(os.str());
    }
    const Step& ref = *step;
    cache_.emplace(h, std::move(step));
    return ref;
}

void Semigroup::prepare(double tau) const {
    if (tau > 0.0) (void)step_for(tau / static_cast<double>(substeps(tau)));
}

Vector Semigroup::apply(const Vector& v, double tau) const {
    if (tau < 0.0) throw UsageError("apply_semigroup: duration must be non-negative");
    if (tau == 0.0) return v;
    const std::size_t n = substeps(tau);
    const Step& s = step_for(tau / static_cast<double>(n));
    Vector w = op_.restrict_active(v);
    for (std::size_t k = 0; k < n; ++k) {
        const Vector rhs = s.rhs * w;
        w = s.solver.solve(rhs);
        if (s.solver.info() != Eigen::Success) throw NumericalError("Crank-Nicolson solve failed");
    }
    return op_.extend_active(w);
}

GridFunction apply_semigroup(const DivergenceOperator& op, const GridFunction& v, double tau, double dt_max) {
    if (!(v.grid == op.grid())) throw UsageError("apply_semigroup: grid mismatch");
    if (tau == 0.0) return v;
    const Semigroup sg(op, dt_max);
    return GridFunction{v.grid, sg.apply(v.values, tau)};
}

// ---------------------------------------------------------------------------
// Problem and configuration
// ---------------------------------------------------------------------------

GspdeProblem::GspdeProblem(SpatialGrid sgrid, TimeGrid tgrid, CoefficientField field, ScenarioSet scenarios,
                           SpatialFunction terminal, ReactionTerm f, std::vector<ReactionTerm> g, double c_bar,
                           double alpha_bar)
    : sgrid_(std::move(sgrid)),
      tgrid_(tgrid),
      field_(std::move(field)),
      scenarios_(std::move(scenarios)),
      terminal_(std::move(terminal)),
      f_(std::move(f)),
      g_(std::move(g)),
      c_bar_(c_bar),
      alpha_bar_(alpha_bar) {
    if (field_.dim() != sgrid_.dim()) throw UsageError("GspdeProblem: field and grid dimensions differ");
    if (g_.size() != scenarios_.dim()) {
        throw UsageError("GspdeProblem: g has " + std::to_string(g_.size()) + " components, expected l = " +
                         std::to_string(scenarios_.dim()));
    }
    if (c_bar_ < 0.0 || alpha_bar_ < 0.0) throw UsageError("GspdeProblem: Lipschitz constants must be >= 0");
    const double s2 = scenarios_.sigma_bar() * scenarios_.sigma_bar();
    if (!(alpha_bar_ * s2 < 2.0 * field_.lambda())) {
        std::ostringstream os;
        os << "contraction property violated: alpha_bar * sigma_bar^2 = " << alpha_bar_ * s2
           << " must be < 2 * lambda = " << 2.0 * field_.lambda();
        throw ContractionError(os.str());
    }
    if (!lipschitz_f_ok(f_, c_bar_)) {
        throw UsageError("GspdeProblem: declared C_bar is smaller than the Lipschitz bound of f (" + f_.description +
                         ")");
    }
    if (!lipschitz_g_ok(g_, c_bar_, alpha_bar_)) {
        throw UsageError("GspdeProblem: declared (C_bar, alpha_bar) do not bound the Lipschitz constants of g");
    }
    const Vector raw = [&] {
        Vector u(static_cast<Eigen::Index>(sgrid_.points()));
        for (std::size_t i = 0; i < sgrid_.points(); ++i) u(static_cast<Eigen::Index>(i)) = terminal_.eval1(sgrid_.x(i));
        return u;
    }();
    if (!raw.allFinite()) throw UsageError("GspdeProblem: terminal condition has non-finite values");
    if (sgrid_.boundary() == Boundary::kDirichlet0) {
        const auto last = static_cast<Eigen::Index>(sgrid_.points() - 1);
        const double cap = 1e-8 * raw.cwiseAbs().maxCoeff();
        if (std::abs(raw(0)) > cap || std::abs(raw(last)) > cap) {
            throw UsageError("GspdeProblem: terminal condition is not negligible at the boundary (increase R)");
        }
        double fmax = 0.0, fb = 0.0;
        const double zero = 0.0;
        for (std::size_t i = 0; i <= tgrid_.steps(); ++i) {
            const double t = tgrid_.time(i);
            for (std::size_t k = 0; k < sgrid_.points(); ++k) {
                const double x = sgrid_.x(k);
                double v = std::abs(f_.eval1(t, x, zero, zero));
                for (const auto& gj : g_) v = std::max(v, std::abs(gj.eval1(t, x, zero, zero)));
                fmax = std::max(fmax, v);
                if (k == 0 || k + 1 == sgrid_.points()) fb = std::max(fb, v);
            }
        }
        if (fb > 1e-8 * fmax) {
            throw UsageError("GspdeProblem: reaction terms are not negligible at the boundary (increase R)");
        }
    }
    psi_ = raw;
    sgrid_.enforce(psi_);
}

double GspdeProblem::contraction_margin() const {
    const double s = scenarios_.sigma_bar();
    return 2.0 * field_.lambda() - alpha_bar_ * s * s;
}

bool GspdeProblem::has_noise() const {
    for (const auto& gj : g_) {
        if (gj.description != "zero") return true;
    }
    return false;
}

void GspdeProblem::drivers(double t, const Vector& u, Vector& f_out, Matrix& g_out) const {
    const auto m = static_cast<Eigen::Index>(sgrid_.points());
    const Vector grad = sgrid_.gradient(u);
    f_out.resize(m);
    g_out.resize(m, static_cast<Eigen::Index>(g_.size()));
    for (Eigen::Index k = 0; k < m; ++k) {
        const double x = sgrid_.x(static_cast<std::size_t>(k));
        f_out(k) = f_.eval1(t, x, u(k), grad(k));
        for (std::size_t j = 0; j < g_.size(); ++j) g_out(k, static_cast<Eigen::Index>(j)) = g_[j].eval1(t, x, u(k), grad(k));
    }
    sgrid_.enforce(f_out);
    if (sgrid_.boundary() == Boundary::kDirichlet0) {
        g_out.row(0).setZero();
        g_out.row(m - 1).setZero();
    } else {
        g_out.row(m - 1) = g_out.row(0);
    }
}

PicardConfig PicardConfig::from_constants(double c_bar, double alpha_bar, double sigma_bar, double lambda,
                                          std::optional<double> eps) {
    const double s2 = sigma_bar * sigma_bar;
    const double k0 = s2 * alpha_bar / (2.0 * lambda);
    if (!(k0 < 1.0)) {
        throw ContractionError("contraction property violated: alpha_bar * sigma_bar^2 >= 2 * lambda");
    }
    PicardConfig cfg;
    if (eps) {
        cfg.eps = *eps;
    } else if (c_bar > 0.0) {
        const double target = std::min(k0 + 0.1, 0.5 * (1.0 + k0));
        cfg.eps = (2.0 * lambda * target - s2 * alpha_bar) / c_bar;
    } else {
        cfg.eps = 1.0;
    }
    if (!(cfg.eps > 0.0)) throw UsageError("PicardConfig: eps must be positive");
    cfg.kappa = (c_bar * cfg.eps + s2 * alpha_bar) / (2.0 * lambda);
    const double denom = c_bar * cfg.eps + s2 * alpha_bar;
    cfg.delta = denom > 0.0 ? c_bar * (s2 + cfg.eps) / denom : 0.0;
    if (!(cfg.delta > 0.0)) cfg.delta = 1.0;
    cfg.gamma = 2.0 * lambda * cfg.delta + 1.0 / cfg.eps;
    cfg.validate(lambda);
    return cfg;
}

PicardConfig PicardConfig::for_problem(const GspdeProblem& problem, std::optional<double> eps) {
    return from_constants(problem.c_bar(), problem.alpha_bar(), problem.sigma_bar(), problem.lambda(), eps);
}

void PicardConfig::validate(double lambda) const {
    if (!(eps > 0.0)) throw UsageError("PicardConfig: eps must be positive");
    if (!(kappa < 1.0)) {
        std::ostringstream os;
        os << "PicardConfig: kappa = " << kappa << " is not < 1 (contraction property)";
        throw ContractionError(os.str());
    }
    if (!(delta > 0.0)) throw UsageError("PicardConfig: delta must be positive");
    if (std::abs(delta - (gamma - 1.0 / eps) / (2.0 * lambda)) > 1e-9 * (1.0 + delta)) {
        throw UsageError("PicardConfig: gamma, delta and eps violate delta = (gamma - 1/eps) / (2 lambda)");
    }
    if (max_iter == 0) throw UsageError("PicardConfig: max_iter must be >= 1");
    if (!(tol_rel > 0.0)) throw UsageError("PicardConfig: tol_rel must be positive");
    if (!(dt_max > 0.0)) throw UsageError("PicardConfig: dt_max must be positive");
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

Matrix homogeneous_solution(const GspdeProblem& problem, const Semigroup& semigroup) {
    const std::size_t n = problem.tgrid().steps();
    const double dt = problem.tgrid().dt();
    Matrix u(static_cast<Eigen::Index>(problem.sgrid().points()), static_cast<Eigen::Index>(n + 1));
    u.col(static_cast<Eigen::Index>(n)) = problem.terminal();
    for (std::size_t i = n; i-- > 0;) {
        u.col(static_cast<Eigen::Index>(i)) = semigroup.apply(u.col(static_cast<Eigen::Index>(i + 1)), dt);
    }
    return u;
}

namespace {

double path_hnorm(const SpatialGrid& grid, const TimeGrid& tgrid, const Matrix& u, const Matrix* v, double gamma,
                  double delta) {
    const std::size_t n = tgrid.steps();
    const double dt = tgrid.dt();
    double s = 0.0;
    Vector w;
    for (std::size_t i = 0; i <= n; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        if (v) {
            w = u.col(c) - v->col(c);
        } else {
            w = u.col(c);
        }
        const double weight = (i == 0 || i == n) ? 0.5 : 1.0;
        s += weight * std::exp(gamma * tgrid.time(i)) * (delta * grid.norm2(w) + grid.grad_norm2(w));
    }
    return s * dt;
}

double fields_hnorm(const std::vector<RandomField>& u, const std::vector<RandomField>* v, double gamma,
                    double delta) {
    if (u.empty()) return 0.0;
    if (v && v->size() != u.size()) throw UsageError("hnorm_gamma_delta: bundle counts differ");
    std::vector<std::vector<double>> per(u.size());
    for (std::size_t b = 0; b < u.size(); ++b) {
        const RandomField& f = u[b];
        if (v && (*v)[b].paths.size() != f.paths.size()) throw UsageError("hnorm_gamma_delta: path counts differ");
        per[b].resize(f.paths.size());
        parallel_for(f.paths.size(), [&](std::size_t p) {
            per[b][p] = path_hnorm(f.sgrid, f.tgrid, f.paths[p], v ? &(*v)[b].paths[p] : nullptr, gamma, delta);
        });
        if (per[b].empty()) per[b].push_back(0.0);
    }
    return upper_expectation(per).value;
}

}  // namespace

double hnorm_gamma_delta(const std::vector<RandomField>& u, double gamma, double delta) {
    return fields_hnorm(u, nullptr, gamma, delta);
}

double hnorm_gamma_delta(const std::vector<RandomField>& u, const std::vector<RandomField>& v, double gamma,
                         double delta) {
    return fields_hnorm(u, &v, gamma, delta);
}

GspdeSolution solve_gspde_picard(const GspdeProblem& problem, const PicardConfig& cfg,
                                 const std::vector<GBMPaths>& gbm) {
    cfg.validate(problem.lambda());
    if (gbm.empty()) throw UsageError("solve_gspde_picard: at least one scenario bundle is required");
    const TimeGrid& tg = problem.tgrid();
    const std::size_t n = tg.steps();
    const double dt = tg.dt();
    for (const auto& b : gbm) {
        if (!(b.grid == tg)) throw UsageError("solve_gspde_picard: G-Brownian paths use a different time grid");
        if (b.l != problem.scenarios().dim()) throw UsageError("solve_gspde_picard: driver dimension mismatch");
    }

    const Semigroup semigroup(DivergenceOperator(problem.field(), problem.sgrid()), cfg.dt_max);
    semigroup.prepare(dt);
    const Matrix homog = homogeneous_solution(problem, semigroup);
    const auto m = static_cast<Eigen::Index>(problem.sgrid().points());

    std::vector<RandomField> current(gbm.size());
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t b = 0; b < gbm.size(); ++b) {
        RandomField& f = current[b];
        f.scenario_id = gbm[b].scenario_id();
        f.bundle_index = b;
        f.seed = gbm[b].seed;
        f.sgrid = problem.sgrid();
        f.tgrid = tg;
        f.paths.assign(gbm[b].n_paths, cfg.init == PicardConfig::InitialGuess::kHomogeneous
                                           ? homog
                                           : Matrix(Matrix::Zero(m, static_cast<Eigen::Index>(n + 1))));
        for (std::size_t p = 0; p < gbm[b].n_paths; ++p) jobs.emplace_back(b, p);
    }

    SolverReport report;
    report.kappa = cfg.kappa;
    report.eps = cfg.eps;
    report.gamma = cfg.gamma;
    report.delta = cfg.delta;
    report.sigma_bar = problem.sigma_bar();
    report.lambda = problem.lambda();
    report.contraction_margin = problem.contraction_margin();

    const std::size_t l = problem.scenarios().dim();
    for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
        std::vector<RandomField> next = current;
        parallel_for(jobs.size(), [&](std::size_t job) {
            const auto [b, p] = jobs[job];
            const Matrix& old = current[b].paths[p];
            Matrix& u = next[b].paths[p];
            Vector fv, w;
            Matrix gv;
            u.col(static_cast<Eigen::Index>(n)) = problem.terminal();
            for (std::size_t i = n; i-- > 0;) {
                const auto c = static_cast<Eigen::Index>(i);
                problem.drivers(tg.time(i + 1), old.col(c + 1), fv, gv);
                w = u.col(c + 1) + dt * fv;
                for (std::size_t j = 0; j < l; ++j) w += gv.col(static_cast<Eigen::Index>(j)) * gbm[b](p, i, j);
                u.col(c) = semigroup.apply(w, dt);
            }
        });
        const double inc = hnorm_gamma_delta(next, current, cfg.gamma, cfg.delta);
        const double nrm = hnorm_gamma_delta(next, cfg.gamma, cfg.delta);
        if (!report.increments.empty() && report.increments.back() > 0.0) {
            report.ratios.push_back(inc / report.increments.back());
        }
        report.increments.push_back(inc);
        report.norms.push_back(nrm);
        report.iterations = it;
        current = std::move(next);
        if (std::sqrt(inc) <= cfg.tol_rel * std::sqrt(nrm) || inc == 0.0) {
            report.converged = true;
            break;
        }
    }
    if (!report.converged) {
        std::ostringstream os;
        os << "Picard iteration did not reach tol_rel = " << cfg.tol_rel << " in " << cfg.max_iter << " iterations";
        throw ConvergenceError(os.str(), report.ratios);
    }
    return GspdeSolution{std::move(current), std::move(report)};
}

// ---------------------------------------------------------------------------
// Residuals
// ---------------------------------------------------------------------------

std::vector<double> weak_residual(const RandomField& u, const TestFunction& phi, const GspdeProblem& problem,
                                  const GBMPaths& gbm) {
    const SpatialGrid& grid = problem.sgrid();
    if (!(u.sgrid == grid) || !(u.tgrid == problem.tgrid())) throw UsageError("weak_residual: grid mismatch");
    if (u.paths.size() != gbm.n_paths) throw UsageError("weak_residual: path count mismatch");
    Vector chi(static_cast<Eigen::Index>(grid.points()));
    for (std::size_t k = 0; k < grid.points(); ++k) chi(static_cast<Eigen::Index>(k)) = phi.chi.eval1(grid.x(k));
    if (grid.boundary() == Boundary::kDirichlet0) {
        const double cap = 1e-12 * std::max(1.0, chi.cwiseAbs().maxCoeff());
        if (std::abs(chi(0)) > cap || std::abs(chi(chi.size() - 1)) > cap) {
            throw UsageError("weak_residual: test function is not supported inside the truncated domain");
        }
    }
    grid.enforce(chi);
    const DivergenceOperator op(problem.field(), grid);
    const TimeGrid& tg = problem.tgrid();
    const std::size_t n = tg.steps();
    const double dt = tg.dt();
    const std::size_t l = problem.scenarios().dim();
    std::vector<double> psi(n + 1);
    for (std::size_t i = 0; i <= n; ++i) psi[i] = phi.psi(tg.time(i));

    std::vector<double> out(gbm.n_paths);
    parallel_for(gbm.n_paths, [&](std::size_t p) {
        const Matrix& v = u.paths[p];
        Vector fv;
        Matrix gv;
        double r = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<Eigen::Index>(i);
            const Vector ubar = 0.5 * (v.col(c) + v.col(c + 1));
            const double pbar = 0.5 * (psi[i] + psi[i + 1]);
            problem.drivers(tg.time(i + 1), v.col(c + 1), fv, gv);
            double noise = 0.0;
            for (std::size_t j = 0; j < l; ++j) noise += grid.inner(gv.col(static_cast<Eigen::Index>(j)), chi) * gbm(p, i, j);
            r += (psi[i + 1] - psi[i]) * grid.inner(ubar, chi);
            r += pbar * (dt * op.energy(ubar, chi) - dt * grid.inner(fv, chi) - noise);
        }
        r += psi[0] * grid.inner(v.col(0), chi) - psi[n] * grid.inner(problem.terminal(), chi);
        out[p] = r;
    });
    return out;
}

PhiFunction PhiFunction::square() {
    return {[](double y) { return y * y; }, [](double y) { return 2.0 * y; }, [](double) { return 2.0; }};
}

PhiFunction PhiFunction::identity() {
    return {[](double y) { return y; }, [](double) { return 1.0; }, [](double) { return 0.0; }};
}

std::vector<double> energy_identity_residual(const RandomField& u, const GspdeProblem& problem, const GBMPaths& gbm,
                                             const PhiFunction& phi) {
    const SpatialGrid& grid = problem.sgrid();
    if (!(u.sgrid == grid) || !(u.tgrid == problem.tgrid())) {
        throw UsageError("energy_identity_residual: grid mismatch");
    }
    if (u.paths.size() != gbm.n_paths) throw UsageError("energy_identity_residual: path count mismatch");
    const DivergenceOperator op(problem.field(), grid);
    const TimeGrid& tg = problem.tgrid();
    const std::size_t n = tg.steps();
    const double dt = tg.dt();
    const std::size_t l = problem.scenarios().dim();
    const auto m = static_cast<Eigen::Index>(grid.points());
    const Vector ones = Vector::Ones(m);

    auto map = [&](const Vector& v, const std::function<double(double)>& fn) {
        Vector out(m);
        for (Eigen::Index k = 0; k < m; ++k) out(k) = fn(v(k));
        return out;
    };

    std::vector<double> out(gbm.n_paths);
    parallel_for(gbm.n_paths, [&](std::size_t p) {
        const Matrix& v = u.paths[p];
        Vector fv;
        Matrix gv;
        double lhs = grid.inner(map(v.col(0), phi.phi), ones);
        double rhs = grid.inner(map(problem.terminal(), phi.phi), ones);
        double e_prev = op.energy(map(v.col(0), phi.dphi), v.col(0));
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<Eigen::Index>(i);
            const Vector next = v.col(c + 1);
            const Vector d1 = map(next, phi.dphi);
            const double e_next = op.energy(d1, next);
            lhs += 0.5 * dt * (e_prev + e_next);
            e_prev = e_next;
            problem.drivers(tg.time(i + 1), next, fv, gv);
            rhs += dt * grid.inner(d1, fv);
            for (std::size_t j = 0; j < l; ++j) rhs += grid.inner(d1, gv.col(static_cast<Eigen::Index>(j))) * gbm(p, i, j);
            const Vector d2 = map(next, phi.ddphi);
            const Matrix& cov = gbm.covariance_per_step[i];
            double qv = 0.0;
            for (std::size_t a = 0; a < l; ++a) {
                for (std::size_t b = 0; b < l; ++b) {
                    const double cab = cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                    if (cab == 0.0) continue;
                    const Vector prod =
                        d2.cwiseProduct(gv.col(static_cast<Eigen::Index>(a))).cwiseProduct(gv.col(static_cast<Eigen::Index>(b)));
                    qv += cab * grid.inner(prod, ones);
                }
            }
            rhs += 0.5 * qv * dt;
        }
        out[p] = lhs - rhs;
    });
    return out;
}

void write_field_csv(std::ostream& os, const std::vector<RandomField>& fields, std::size_t max_paths,
                     std::size_t time_stride, std::size_t space_stride) {
    time_stride = std::max<std::size_t>(1, time_stride);
    space_stride = std::max<std::size_t>(1, space_stride);
    os << "path_id,scenario_id,t,x_index,u\n";
    for (const RandomField& f : fields) {
        const std::size_t np = std::min(max_paths, f.paths.size());
        for (std::size_t p = 0; p < np; ++p) {
            for (std::size_t i = 0; i <= f.tgrid.steps(); i += time_stride) {
                for (std::size_t k = 0; k < f.sgrid.points(); k += space_stride) {
                    os << p << ',' << f.scenario_id << ',' << fmt_double(f.tgrid.time(i)) << ',' << k << ','
                       << fmt_double(f.paths[p](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i))) << '\n';
                }
            }
        }
    }
}

}  // namespace gspde
