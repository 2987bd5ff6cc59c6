#include "gspde/bdsde.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>

#include "gspde/format.hpp"

namespace gspde {

namespace {

std::vector<std::vector<std::size_t>> total_degree_exponents(std::size_t dim, std::size_t degree) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t total = 0; total <= degree; ++total) {
        std::vector<std::size_t> e(dim, 0);
        std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t slot, std::size_t left) {
            if (slot + 1 == dim) {
                e[slot] = left;
                out.push_back(e);
                return;
            }
            for (std::size_t v = left + 1; v-- > 0;) {
                e[slot] = v;
                rec(slot + 1, left - v);
            }
        };
        rec(0, total);
    }
    return out;
}

void legendre_values(double x, std::size_t degree, std::vector<double>& out) {
    out.resize(degree + 1);
    out[0] = 1.0;
    if (degree >= 1) out[1] = x;
    for (std::size_t k = 2; k <= degree; ++k) {
        const double kd = static_cast<double>(k);
        out[k] = ((2.0 * kd - 1.0) * x * out[k - 1] - (kd - 1.0) * out[k - 2]) / kd;
    }
}

}  // namespace

std::size_t RegressionBasis::n_functions(std::size_t dim) const {
    if (kind == Kind::kBins) return bins;
    return total_degree_exponents(dim, degree).size();
}

RegressionBasis::Kind RegressionBasis::kind_from_string(const std::string& name) {
    if (name == "polynomial") return Kind::kPolynomial;
    if (name == "monomial") return Kind::kMonomial;
    if (name == "bins") return Kind::kBins;
    throw UsageError("unknown regression basis '" + name + "' (expected polynomial, monomial, bins)");
}

Regressor::Regressor(const Matrix& features, const RegressionBasis& basis) : basis_(basis) {
    const auto n = features.rows();
    dim_ = static_cast<std::size_t>(features.cols());
    if (n == 0 || dim_ == 0) throw UsageError("Regressor: empty feature matrix");
    if (basis_.ridge < 0.0) throw UsageError("Regressor: ridge must be >= 0");
    const Vector lo = features.colwise().minCoeff();
    const Vector hi = features.colwise().maxCoeff();
    const bool degenerate = ((hi - lo).maxCoeff() <= 1e-12 * (1.0 + lo.cwiseAbs().maxCoeff()));

    std::size_t p = 0;
    if (basis_.kind == RegressionBasis::Kind::kBins) {
        if (dim_ != 1) throw UsageError("Regressor: bin basis supports one-dimensional features only");
        if (basis_.bins < 1) throw UsageError("Regressor: bin count must be >= 1");
        p = degenerate ? 1 : basis_.bins;
        bin_lo_ = lo(0);
        bin_width_ = degenerate ? 1.0 : (hi(0) - lo(0)) / static_cast<double>(basis_.bins);
    } else {
        degree_ = degenerate ? 0 : basis_.degree;
        exponents_ = total_degree_exponents(dim_, degree_);
        p = exponents_.size();
        if (basis_.kind == RegressionBasis::Kind::kPolynomial) {
            center_ = 0.5 * (hi + lo);
            scale_ = (0.5 * (hi - lo)).cwiseMax(1e-300);
        } else {
            center_ = Vector::Zero(static_cast<Eigen::Index>(dim_));
            scale_ = Vector::Ones(static_cast<Eigen::Index>(dim_));
        }
    }
    if (static_cast<std::size_t>(n) < 10 * p) {
        std::ostringstream os;
        os << "Regressor: " << n << " samples is fewer than 10x the " << p << " basis functions";
        throw UsageError(os.str());
    }
    design_.resize(n, static_cast<Eigen::Index>(p));
    for (Eigen::Index r = 0; r < n; ++r) design_.row(r) = basis_row(features.row(r).transpose()).transpose();

    augmented_rows_ = basis_.ridge > 0.0 ? p - 1 : 0;
    Matrix aug = Matrix::Zero(n + static_cast<Eigen::Index>(augmented_rows_), static_cast<Eigen::Index>(p));
    aug.topRows(n) = design_;
    const double sr = std::sqrt(basis_.ridge);
    for (std::size_t k = 0; k < augmented_rows_; ++k) {
        aug(n + static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k + 1)) = sr;
    }
    qr_.compute(aug);
    const Vector diag = qr_.matrixQR().diagonal().cwiseAbs();
    if (diag.minCoeff() <= 1e-10 * diag.maxCoeff()) {
        throw NumericalError("Regressor: design matrix is rank deficient (use fewer basis functions or a ridge)");
    }
}

Vector Regressor::basis_row(const Vector& x) const {
    const Eigen::Index p = design_.cols();
    Vector row = Vector::Zero(p);
    if (basis_.kind == RegressionBasis::Kind::kBins) {
        row(0) = 1.0;
        if (p > 1) {
            auto b = static_cast<long>(std::floor((x(0) - bin_lo_) / bin_width_));
            b = std::clamp<long>(b, 0, static_cast<long>(p) - 1);
            if (b > 0) row(b) = 1.0;
        }
        return row;
    }
    std::vector<std::vector<double>> vals(dim_);
    for (std::size_t c = 0; c < dim_; ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        const double z = (x(ci) - center_(ci)) / scale_(ci);
        if (basis_.kind == RegressionBasis::Kind::kPolynomial) {
            legendre_values(z, degree_, vals[c]);
        } else {
            vals[c].assign(degree_ + 1, 1.0);
            for (std::size_t k = 1; k <= degree_; ++k) vals[c][k] = vals[c][k - 1] * z;
        }
    }
    for (Eigen::Index k = 0; k < p; ++k) {
        double v = 1.0;
        for (std::size_t c = 0; c < dim_; ++c) v *= vals[c][exponents_[static_cast<std::size_t>(k)][c]];
        row(k) = v;
    }
    return row;
}

Vector Regressor::fit(const Vector& targets) const {
    if (targets.size() != design_.rows()) throw UsageError("Regressor::fit: target length mismatch");
    if (augmented_rows_ == 0) return qr_.solve(targets);
    Vector aug = Vector::Zero(design_.rows() + static_cast<Eigen::Index>(augmented_rows_));
    aug.head(design_.rows()) = targets;
    return qr_.solve(aug);
}

double Regressor::predict(const Vector& coefficients, const Vector& x) const {
    return basis_row(x).dot(coefficients);
}

Vector Regressor::std_errors(const Vector& targets, const Vector& coefficients) const {
    const auto n = design_.rows();
    const auto p = design_.cols();
    const Vector resid = targets - design_ * coefficients;
    const double s2 = n > p ? resid.squaredNorm() / static_cast<double>(n - p) : 0.0;
    const Matrix r = qr_.matrixQR().topRows(p).triangularView<Eigen::Upper>();
    const Matrix rinv = r.triangularView<Eigen::Upper>().solve(Matrix::Identity(p, p));
    return ((rinv * rinv.transpose()).diagonal() * s2).cwiseSqrt();
}

RegressionFit regress_conditional(const Vector& targets, const Matrix& features, const RegressionBasis& basis) {
    const Regressor reg(features, basis);
    RegressionFit out;
    out.coefficients = reg.fit(targets);
    out.fitted = reg.fitted(out.coefficients);
    return out;
}

Matrix extract_z(const Vector& next_values, const Matrix& dm, const Matrix& features, const CoefficientField& field,
                 double dt, const Regressor& regressor) {
    if (!(dt > 0.0)) throw UsageError("extract_z: dt must be positive");
    const auto n = next_values.size();
    const auto d = dm.cols();
    if (dm.rows() != n || features.rows() != n) throw UsageError("extract_z: sample counts differ");
    Matrix e(n, d);
    for (Eigen::Index k = 0; k < d; ++k) {
        const Vector prod = next_values.cwiseProduct(dm.col(k));
        e.col(k) = regressor.fitted(regressor.fit(prod));
    }
    Matrix z(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        const Matrix a = field.a(features.row(r).transpose());
        Eigen::LDLT<Matrix> ldlt(a);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0)) {
            std::ostringstream os;
            os << "extract_z: a(x) is not invertible at x = [" << features.row(r) << "]";
            throw NumericalError(os.str());
        }
        z.row(r) = (ldlt.solve(e.row(r).transpose()) / (2.0 * dt)).transpose();
    }
    return z;
}

// ---------------------------------------------------------------------------
// Problem and constants
// ---------------------------------------------------------------------------

BdsdeProblem::BdsdeProblem(TimeGrid tgrid, CoefficientField field, ScenarioSet scenarios, SpatialFunction terminal,
                           ReactionTerm f, std::vector<ReactionTerm> g, double k, double alpha)
    : tgrid_(tgrid),
      field_(std::move(field)),
      scenarios_(std::move(scenarios)),
      terminal_(std::move(terminal)),
      f_(std::move(f)),
      g_(std::move(g)),
      k_(k),
      alpha_(alpha) {
    if (g_.size() != scenarios_.dim()) {
        throw UsageError("BdsdeProblem: g has " + std::to_string(g_.size()) + " components, expected l = " +
                         std::to_string(scenarios_.dim()));
    }
    if (k_ < 0.0 || alpha_ < 0.0) throw UsageError("BdsdeProblem: Lipschitz constants must be >= 0");
    const double s2 = scenarios_.sigma_bar() * scenarios_.sigma_bar();
    if (!(alpha_ * field_.big_lambda() * s2 < 2.0 * field_.lambda())) {
        std::ostringstream os;
        os << "contraction property violated: alpha * Lambda * sigma_bar^2 = " << alpha_ * field_.big_lambda() * s2
           << " must be < 2 * lambda = " << 2.0 * field_.lambda();
        throw ContractionError(os.str());
    }
    if (!lipschitz_f_ok(f_, k_)) {
        throw UsageError("BdsdeProblem: declared K is smaller than the Lipschitz bound of f (" + f_.description + ")");
    }
    if (!lipschitz_g_ok(g_, k_, alpha_)) {
        throw UsageError("BdsdeProblem: declared (K, alpha) do not bound the Lipschitz constants of g");
    }
}

double BdsdeProblem::contraction_margin() const {
    const double s = scenarios_.sigma_bar();
    return 2.0 * field_.lambda() - alpha_ * field_.big_lambda() * s * s;
}

BdsdeConstants BdsdeConstants::from_constants(double k, double alpha, double big_lambda, double sigma_bar,
                                              double lambda, std::optional<double> eps) {
    const double s2 = sigma_bar * sigma_bar;
    const double k0 = alpha * big_lambda * s2 / (2.0 * lambda);
    if (!(k0 < 1.0)) {
        throw ContractionError("contraction property violated: alpha * Lambda * sigma_bar^2 >= 2 * lambda");
    }
    BdsdeConstants c;
    if (eps) {
        c.eps = *eps;
    } else if (k > 0.0) {
        const double target = std::min(k0 + 0.1, 0.5 * (1.0 + k0));
        c.eps = (2.0 * lambda * target - alpha * big_lambda * s2) / k;
    } else {
        c.eps = 1.0;
    }
    if (!(c.eps > 0.0)) throw UsageError("BdsdeConstants: eps must be positive");
    const double denom = k * c.eps + alpha * big_lambda * s2;
    c.bound = denom / (2.0 * lambda);
    if (!(c.bound < 1.0)) {
        std::ostringstream os;
        os << "BdsdeConstants: contraction bound " << c.bound << " is not < 1 for eps = " << c.eps;
        throw ContractionError(os.str());
    }
    c.delta = denom > 0.0 ? k * (c.eps + s2) / denom : 0.0;
    if (!(c.delta > 0.0)) c.delta = 1.0;
    c.beta = 2.0 * lambda * c.delta + 1.0 / c.eps;
    return c;
}

BdsdeConstants BdsdeConstants::for_problem(const BdsdeProblem& problem, std::optional<double> eps) {
    return from_constants(problem.k(), problem.alpha(), problem.field().big_lambda(), problem.scenarios().sigma_bar(),
                          problem.field().lambda(), eps);
}

// ---------------------------------------------------------------------------
// Backward sweep
// ---------------------------------------------------------------------------

namespace {

/// Per-time-step regression designs and coefficient samples shared by all blocks.
struct EnsembleCache {
    std::size_t n_x = 0;
    std::size_t dim = 0;
    std::size_t steps = 0;
    std::vector<Matrix> features;                    // per slot 0..N, n_x x d
    std::vector<Matrix> dm;                          // per step 0..N-1, n_x x d
    std::vector<std::unique_ptr<Regressor>> regs;    // per step 0..N-1
    std::vector<Matrix> sigma;                       // per slot 0..N, n_x x (d*d), row-major sigma
    Vector terminal;                                 // xi at X_T

    EnsembleCache(const HuntPaths& hunt, const CoefficientField& field, const RegressionBasis& basis,
                  const SpatialFunction& xi) {
        n_x = hunt.n_paths;
        dim = hunt.dim;
        steps = hunt.grid.steps();
        const auto n = static_cast<Eigen::Index>(n_x);
        const auto d = static_cast<Eigen::Index>(dim);
        features.assign(steps + 1, Matrix(n, d));
        sigma.assign(steps + 1, Matrix(n, d * d));
        dm.assign(steps, Matrix(n, d));
        for (std::size_t s = 0; s <= steps; ++s) {
            for (Eigen::Index p = 0; p < n; ++p) {
                for (Eigen::Index c = 0; c < d; ++c) {
                    features[s](p, c) = hunt.x(static_cast<std::size_t>(p), s, static_cast<std::size_t>(c));
                    if (s < steps) dm[s](p, c) = hunt.dm(static_cast<std::size_t>(p), s, static_cast<std::size_t>(c));
                }
            }
        }
        parallel_for(steps + 1, [&](std::size_t s) {
            for (Eigen::Index p = 0; p < n; ++p) {
                const Matrix sg = field.sigma(features[s].row(p).transpose());
                for (Eigen::Index r = 0; r < d; ++r) {
                    for (Eigen::Index c = 0; c < d; ++c) sigma[s](p, r * d + c) = sg(r, c);
                }
            }
        });
        regs.resize(steps);
        for (std::size_t s = 0; s < steps; ++s) regs[s] = std::make_unique<Regressor>(features[s], basis);
        terminal.resize(n);
        for (Eigen::Index p = 0; p < n; ++p) {
            const Vector x = features[steps].row(p).transpose();
            terminal(p) = xi(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
        }
    }
};

using DriverEval = std::function<void(std::size_t slot, Vector& f, Matrix& g)>;

// f at slot i re-evaluated with the freshly fitted Y_{t_i}.
using ImplicitEval = std::function<void(std::size_t slot, const Vector& y, Vector& f)>;

void backward_sweep(const EnsembleCache& cache, const CoefficientField& field, const GBMPaths& gbm,
                    std::size_t b_path, double dt, const DriverEval& drivers, BdsdeBlock& out,
                    const ImplicitEval* implicit = nullptr) {
    const std::size_t n = cache.steps;
    const auto nx = static_cast<Eigen::Index>(cache.n_x);
    const auto d = static_cast<Eigen::Index>(cache.dim);
    const std::size_t l = gbm.l;
    out.y.resize(nx, static_cast<Eigen::Index>(n + 1));
    out.z.assign(cache.dim, Matrix::Zero(nx, static_cast<Eigen::Index>(n + 1)));
    out.y.col(static_cast<Eigen::Index>(n)) = cache.terminal;
    Vector fv;
    Matrix gv;
    for (std::size_t i = n; i-- > 0;) {
        const auto c = static_cast<Eigen::Index>(i);
        drivers(i + 1, fv, gv);
        Vector noise = Vector::Zero(nx);
        for (std::size_t j = 0; j < l; ++j) noise += gv.col(static_cast<Eigen::Index>(j)) * gbm(b_path, i, j);
        const Regressor& reg = *cache.regs[i];
        const int passes = implicit ? 2 : 1;
        for (int pass = 0; pass < passes; ++pass) {
            if (pass == 1) (*implicit)(i, out.y.col(c), fv);
            const Vector target = out.y.col(c + 1) + dt * fv + noise;
            const Vector pre = reg.fitted(reg.fit(target));
            const Matrix z = extract_z(target - pre, cache.dm[i], cache.features[i], field, dt, reg);
            Vector corrected = target;
            for (Eigen::Index k = 0; k < d; ++k) {
                out.z[static_cast<std::size_t>(k)].col(c) = z.col(k);
                corrected -= z.col(k).cwiseProduct(cache.dm[i].col(k));
            }
            out.y.col(c) = reg.fitted(reg.fit(corrected));
        }
    }
    for (Eigen::Index k = 0; k < d; ++k) {
        out.z[static_cast<std::size_t>(k)].col(static_cast<Eigen::Index>(n)) =
            out.z[static_cast<std::size_t>(k)].col(static_cast<Eigen::Index>(n - 1));
    }
}

void check_ensemble(const BdsdeEnsemble& ens, const TimeGrid& tgrid, std::size_t l) {
    if (ens.hunt == nullptr || ens.gbm == nullptr || ens.gbm->empty()) {
        throw UsageError("BDSDE solve: ensemble is incomplete");
    }
    if (!(ens.hunt->grid == tgrid)) throw UsageError("BDSDE solve: X-ensemble uses a different time grid");
    for (const auto& g : *ens.gbm) {
        if (!(g.grid == tgrid)) throw UsageError("BDSDE solve: G-Brownian paths use a different time grid");
        if (g.l != l) throw UsageError("BDSDE solve: driver dimension mismatch");
        if (g.n_paths != ens.gbm->front().n_paths) throw UsageError("BDSDE solve: bundles differ in B-path count");
    }
}

BdsdeSolution make_solution_shell(const BdsdeEnsemble& ens) {
    BdsdeSolution sol;
    sol.tgrid = ens.hunt->grid;
    sol.n_bundles = ens.gbm->size();
    sol.n_b_paths = ens.gbm->front().n_paths;
    sol.n_x = ens.hunt->n_paths;
    sol.dim = ens.hunt->dim;
    sol.hunt_seed = ens.hunt->seed;
    for (const auto& g : *ens.gbm) {
        sol.gbm_seeds.push_back(g.seed);
        sol.scenario_ids.push_back(g.scenario_id());
    }
    sol.blocks.resize(sol.n_bundles * sol.n_b_paths);
    for (std::size_t b = 0; b < sol.n_bundles; ++b) {
        for (std::size_t p = 0; p < sol.n_b_paths; ++p) {
            BdsdeBlock& blk = sol.blocks[b * sol.n_b_paths + p];
            blk.bundle = b;
            blk.scenario_id = sol.scenario_ids[b];
            blk.b_path = p;
        }
    }
    return sol;
}

void evaluate_terms(const EnsembleCache& cache, double t, std::size_t slot, const ReactionTerm& f,
                    const std::vector<ReactionTerm>& g, const Matrix* y, const std::vector<Matrix>* z, Vector& fv,
                    Matrix& gv, const Vector* y_override = nullptr) {
    const auto nx = static_cast<Eigen::Index>(cache.n_x);
    const auto d = static_cast<Eigen::Index>(cache.dim);
    fv.resize(nx);
    gv.resize(nx, static_cast<Eigen::Index>(g.size()));
    std::vector<double> x(cache.dim), w(cache.dim, 0.0);
    const auto s = static_cast<Eigen::Index>(slot);
    for (Eigen::Index p = 0; p < nx; ++p) {
        for (Eigen::Index c = 0; c < d; ++c) x[static_cast<std::size_t>(c)] = cache.features[slot](p, c);
        double yv = 0.0;
        if (y) {
            yv = y_override ? (*y_override)(p) : (*y)(p, s);
            for (Eigen::Index c = 0; c < d; ++c) {
                double acc = 0.0;
                for (Eigen::Index r = 0; r < d; ++r) acc += (*z)[static_cast<std::size_t>(r)](p, s) * cache.sigma[slot](p, r * d + c);
                w[static_cast<std::size_t>(c)] = acc;
            }
        }
        fv(p) = f(t, x, yv, w);
        for (std::size_t j = 0; j < g.size(); ++j) gv(p, static_cast<Eigen::Index>(j)) = g[j](t, x, yv, w);
    }
}

double block_integral(const BdsdeBlock& blk, const BdsdeBlock* other, const TimeGrid& tg, double beta, double delta,
                      const std::vector<double>* weights) {
    const std::size_t n = tg.steps();
    const auto nx = blk.y.rows();
    double total = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        double acc = 0.0;
        for (Eigen::Index p = 0; p < nx; ++p) {
            double yv = blk.y(p, c) - (other ? other->y(p, c) : 0.0);
            double v = delta * yv * yv;
            for (std::size_t k = 0; k < blk.z.size(); ++k) {
                const double zv = blk.z[k](p, c) - (other ? other->z[k](p, c) : 0.0);
                v += zv * zv;
            }
            acc += weights ? (*weights)[static_cast<std::size_t>(p)] * v : v;
        }
        const double wt = (i == 0 || i == n) ? 0.5 : 1.0;
        total += wt * std::exp(beta * tg.time(i)) * acc / static_cast<double>(nx);
    }
    return total * tg.dt();
}

double norm_impl(const BdsdeSolution& a, const BdsdeSolution* b, double beta, double delta,
                 const std::vector<double>* weights) {
    if (b && (b->blocks.size() != a.blocks.size() || b->n_x != a.n_x)) {
        throw UsageError("delta_norm: solutions have different shapes");
    }
    if (weights && weights->size() != a.n_x) throw UsageError("delta_norm: weight vector length mismatch");
    std::vector<double> per_block(a.blocks.size());
    parallel_for(a.blocks.size(), [&](std::size_t k) {
        per_block[k] = block_integral(a.blocks[k], b ? &b->blocks[k] : nullptr, a.tgrid, beta, delta, weights);
    });
    double best = 0.0;
    for (std::size_t bundle = 0; bundle < a.n_bundles; ++bundle) {
        double s = 0.0;
        for (std::size_t p = 0; p < a.n_b_paths; ++p) s += per_block[bundle * a.n_b_paths + p];
        best = std::max(best, s / static_cast<double>(std::max<std::size_t>(1, a.n_b_paths)));
    }
    return std::sqrt(best);
}

}  // namespace

BdsdeSolution solve_linear_bdsde(const LinearDrivers& drivers, const SpatialFunction& terminal,
                                 const CoefficientField& field, const BdsdeEnsemble& ensemble,
                                 const RegressionBasis& basis) {
    if (drivers.f.depends_on_yz()) throw UsageError("solve_linear_bdsde: f must not depend on (y, z)");
    for (const auto& gj : drivers.g) {
        if (gj.depends_on_yz()) throw UsageError("solve_linear_bdsde: g must not depend on (y, z)");
    }
    const TimeGrid tg = ensemble.hunt->grid;
    check_ensemble(ensemble, tg, drivers.g.size());
    if (field.dim() != ensemble.hunt->dim) throw UsageError("solve_linear_bdsde: field dimension mismatch");
    const EnsembleCache cache(*ensemble.hunt, field, basis, terminal);
    BdsdeSolution sol = make_solution_shell(ensemble);
    parallel_for(sol.blocks.size(), [&](std::size_t k) {
        BdsdeBlock& blk = sol.blocks[k];
        const GBMPaths& gbm = (*ensemble.gbm)[blk.bundle];
        const DriverEval eval = [&](std::size_t slot, Vector& fv, Matrix& gv) {
            evaluate_terms(cache, tg.time(slot), slot, drivers.f, drivers.g, nullptr, nullptr, fv, gv);
        };
        backward_sweep(cache, field, gbm, blk.b_path, tg.dt(), eval, blk);
    });
    sol.report.iterations = 1;
    sol.report.converged = true;
    return sol;
}

BdsdeSolution solve_gbdsde_picard(const BdsdeProblem& problem, const BdsdeEnsemble& ensemble,
                                  const RegressionBasis& basis, const BdsdePicardOptions& options) {
    const TimeGrid& tg = problem.tgrid();
    check_ensemble(ensemble, tg, problem.scenarios().dim());
    if (problem.field().dim() != ensemble.hunt->dim) throw UsageError("solve_gbdsde_picard: field dimension mismatch");
    if (options.max_iter == 0) throw UsageError("solve_gbdsde_picard: max_iter must be >= 1");
    const BdsdeConstants constants = BdsdeConstants::for_problem(problem, options.eps);
    const std::vector<double>* weights = options.use_weights ? &ensemble.hunt->weight : nullptr;
    const EnsembleCache cache(*ensemble.hunt, problem.field(), basis, problem.terminal());

    BdsdeSolution current = make_solution_shell(ensemble);
    const auto nx = static_cast<Eigen::Index>(cache.n_x);
    for (auto& blk : current.blocks) {
        blk.y = Matrix::Zero(nx, static_cast<Eigen::Index>(tg.steps() + 1));
        blk.z.assign(cache.dim, Matrix::Zero(nx, static_cast<Eigen::Index>(tg.steps() + 1)));
    }
    BdsdePicardReport report;
    report.constants = constants;
    report.contraction_margin = problem.contraction_margin();

    for (std::size_t it = 1; it <= options.max_iter; ++it) {
        BdsdeSolution next = make_solution_shell(ensemble);
        parallel_for(next.blocks.size(), [&](std::size_t k) {
            BdsdeBlock& blk = next.blocks[k];
            const BdsdeBlock& prev = current.blocks[k];
            const GBMPaths& gbm = (*ensemble.gbm)[blk.bundle];
            const DriverEval eval = [&](std::size_t slot, Vector& fv, Matrix& gv) {
                evaluate_terms(cache, tg.time(slot), slot, problem.f(), problem.g(), &prev.y, &prev.z, fv, gv);
            };
            const ImplicitEval implicit = [&](std::size_t slot, const Vector& y, Vector& fv) {
                Matrix unused;
                evaluate_terms(cache, tg.time(slot), slot, problem.f(), {}, &prev.y, &prev.z, fv, unused, &y);
            };
            backward_sweep(cache, problem.field(), gbm, blk.b_path, tg.dt(), eval, blk,
                           options.implicit_y ? &implicit : nullptr);
        });
        const double inc = delta_norm(next, current, constants.beta, constants.delta, weights);
        const double nrm = delta_norm(next, constants.beta, constants.delta, weights);
        if (!report.increments.empty() && report.increments.back() > 0.0) {
            report.ratios.push_back(inc / report.increments.back());
        }
        report.increments.push_back(inc);
        report.norms.push_back(nrm);
        report.iterations = it;
        current = std::move(next);
        if (inc <= options.tol * nrm || inc == 0.0) {
            report.converged = true;
            break;
        }
    }
    current.report = report;
    if (!report.converged) {
        std::ostringstream os;
        os << "BDSDE Picard iteration did not reach tol = " << options.tol << " in " << options.max_iter
           << " iterations";
        throw ConvergenceError(os.str(), report.ratios);
    }
    return current;
}

double delta_norm(const BdsdeSolution& sol, double beta, double delta, const std::vector<double>* weights) {
    return norm_impl(sol, nullptr, beta, delta, weights);
}

double delta_norm(const BdsdeSolution& a, const BdsdeSolution& b, double beta, double delta,
                  const std::vector<double>* weights) {
    return norm_impl(a, &b, beta, delta, weights);
}

void write_bdsde_csv(std::ostream& os, const BdsdeSolution& sol, std::size_t max_b_paths, std::size_t max_x_paths,
                     std::size_t time_stride) {
    time_stride = std::max<std::size_t>(1, time_stride);
    os << "scenario_id,b_path_id,x_path_id,t,Y";
    for (std::size_t k = 1; k <= sol.dim; ++k) os << ",Z_" << k;
    os << '\n';
    for (const BdsdeBlock& blk : sol.blocks) {
        if (blk.b_path >= max_b_paths) continue;
        const std::size_t nx = std::min<std::size_t>(max_x_paths, static_cast<std::size_t>(blk.y.rows()));
        for (std::size_t p = 0; p < nx; ++p) {
            for (std::size_t i = 0; i <= sol.tgrid.steps(); i += time_stride) {
                const auto r = static_cast<Eigen::Index>(p), c = static_cast<Eigen::Index>(i);
                os << blk.scenario_id << ',' << blk.b_path << ',' << p << ',' << fmt_double(sol.tgrid.time(i)) << ','
                   << fmt_double(blk.y(r, c));
                for (const Matrix& z : blk.z) os << ',' << fmt_double(z(r, c));
                os << '\n';
            }
        }
    }
}

}  // namespace gspde
