#include "gspde/hunt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "gspde/format.hpp"

namespace gspde {

Matrix sqrt_spd(const Matrix& a) {
    if (a.rows() != a.cols()) throw UsageError("sqrt_spd: matrix must be square");
    const Matrix sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    if (es.info() != Eigen::Success) throw NumericalError("sqrt_spd: eigensolve failed");
    Vector ev = es.eigenvalues();
    if (ev.size() > 0 && ev.minCoeff() < -1e-12) {
        std::ostringstream os;
        os << "sqrt_spd: matrix is not positive semidefinite (min eigenvalue " << ev.minCoeff() << ")";
        throw NotPsdError(os.str());
    }
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    Matrix s = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (s + s.transpose());
}

CoefficientField::CoefficientField(std::string name, std::size_t dim, MatrixFn a, double lambda, double big_lambda,
                                   VectorFn div_a, MatrixFn sqrt_a)
    : name_(std::move(name)),
      dim_(dim),
      a_(std::move(a)),
      lambda_(lambda),
      big_lambda_(big_lambda),
      div_a_(std::move(div_a)),
      sqrt_a_(std::move(sqrt_a)) {
    if (dim_ == 0) throw UsageError("CoefficientField: dimension must be >= 1");
    if (!a_) throw UsageError("CoefficientField: a(x) must be provided");
    if (!(lambda_ > 0.0) || !(big_lambda_ >= lambda_)) {
        throw UsageError("CoefficientField: ellipticity bounds must satisfy 0 < lambda <= Lambda");
    }
}

CoefficientField CoefficientField::constant(std::size_t dim, double c) {
    if (!(c > 0.0)) throw UsageError("CoefficientField::constant: c must be positive");
    const auto d = static_cast<Eigen::Index>(dim);
    const double sc = std::sqrt(c);
    CoefficientField f(
        "constant", dim, [d, c](const Vector&) -> Matrix { return c * Matrix::Identity(d, d); }, c, c,
        [d](const Vector&) -> Vector { return Vector::Zero(d); },
        [d, sc](const Vector&) -> Matrix { return sc * Matrix::Identity(d, d); });
    f.constant_ = true;
    return f;
}

CoefficientField CoefficientField::sinusoidal_1d() {
    return CoefficientField(
        "sinusoidal-1d", 1,
        [](const Vector& x) -> Matrix {
            const double s = std::sin(x(0));
            return Matrix::Constant(1, 1, 1.0 + 0.5 * s * s);
        },
        1.0, 1.5, [](const Vector& x) -> Vector { return Vector::Constant(1, 0.5 * std::sin(2.0 * x(0))); },
        [](const Vector& x) -> Matrix {
            const double s = std::sin(x(0));
            return Matrix::Constant(1, 1, std::sqrt(1.0 + 0.5 * s * s));
        });
}

CoefficientField CoefficientField::diagonal_2d() {
    return CoefficientField(
        "diagonal-2d", 2,
        [](const Vector& x) -> Matrix {
            Matrix m = Matrix::Zero(2, 2);
            for (int i = 0; i < 2; ++i) m(i, i) = 1.0 + 0.5 * std::sin(x(i)) * std::sin(x(i));
            return m;
        },
        1.0, 1.5,
        [](const Vector& x) -> Vector {
            Vector b(2);
            for (int i = 0; i < 2; ++i) b(i) = 0.5 * std::sin(2.0 * x(i));
            return b;
        },
        [](const Vector& x) -> Matrix {
            Matrix m = Matrix::Zero(2, 2);
            for (int i = 0; i < 2; ++i) m(i, i) = std::sqrt(1.0 + 0.5 * std::sin(x(i)) * std::sin(x(i)));
            return m;
        });
}

CoefficientField CoefficientField::from_preset(const std::string& name, std::size_t dim, double c) {
    if (name == "constant") return constant(dim, c);
    if (name == "sinusoidal-1d") {
        if (dim != 1) throw UsageError("coefficient preset sinusoidal-1d requires dimension 1");
        return sinusoidal_1d();
    }
    if (name == "diagonal-2d") {
        if (dim != 2) throw UsageError("coefficient preset diagonal-2d requires dimension 2");
        return diagonal_2d();
    }
    throw UsageError("unknown coefficient preset '" + name + "' (expected constant, sinusoidal-1d, diagonal-2d)");
}

double CoefficientField::a1(double x) const {
    Vector v(1);
    v(0) = x;
    return a_(v)(0, 0);
}

Matrix CoefficientField::sigma(const Vector& x) const {
    if (sqrt_a_) return sqrt_a_(x);
    try {
        return sqrt_spd(a_(x));
    } catch (const NotPsdError& e) {
        std::ostringstream os;
        os << e.what() << " at x = [" << x.transpose() << "]";
        throw NotPsdError(os.str());
    }
}

Vector CoefficientField::drift(const Vector& x) const {
    if (div_a_) return div_a_(x);
    constexpr double h = 1e-5;
    const auto d = static_cast<Eigen::Index>(dim_);
    Vector b = Vector::Zero(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        Vector xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        const Matrix ap = a_(xp), am = a_(xm);
        for (Eigen::Index i = 0; i < d; ++i) b(i) += (ap(i, j) - am(i, j)) / (2.0 * h);
    }
    return b;
}

double CoefficientField::ellipticity_violation(const std::vector<Vector>& points) const {
    double worst = -std::numeric_limits<double>::infinity();
    for (const Vector& x : points) {
        const Matrix m = a_(x);
        Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
        worst = std::max(worst, lambda_ - es.eigenvalues().minCoeff());
        worst = std::max(worst, es.eigenvalues().maxCoeff() - big_lambda_);
    }
    return worst;
}

InitialLaw InitialLaw::point(const Vector& x0) {
    InitialLaw law;
    law.kind = Kind::kPoint;
    law.mean = x0;
    law.std = 0.0;
    return law;
}

InitialLaw InitialLaw::gaussian(const Vector& mean, double std, double box) {
    if (!(std > 0.0)) throw UsageError("InitialLaw::gaussian: std must be positive");
    InitialLaw law;
    law.kind = Kind::kGaussian;
    law.mean = mean;
    law.std = std;
    law.box = box;
    return law;
}

double InitialLaw::density(const Vector& x) const {
    if (kind == Kind::kPoint) return 1.0;
    const double d = static_cast<double>(mean.size());
    const double r2 = (x - mean).squaredNorm() / (std * std);
    return std::exp(-0.5 * r2) / std::pow(2.0 * std::numbers::pi * std * std, 0.5 * d);
}

Vector HuntPaths::position(std::size_t p, std::size_t n) const {
    Vector v(static_cast<Eigen::Index>(dim));
    for (std::size_t c = 0; c < dim; ++c) v(static_cast<Eigen::Index>(c)) = x(p, n, c);
    return v;
}

HuntPaths simulate_hunt(const CoefficientField& field, const InitialLaw& init, const TimeGrid& grid,
                        std::size_t n_paths, std::uint64_t seed, std::size_t refine) {
    if (n_paths == 0) throw UsageError("simulate_hunt: n_paths must be >= 1");
    if (refine == 0) throw UsageError("simulate_hunt: refine factor must be >= 1");
    const std::size_t d = field.dim();
    if (static_cast<std::size_t>(init.mean.size()) != d) {
        throw UsageError("simulate_hunt: initial law dimension does not match the coefficient field");
    }
    const std::size_t n = grid.steps();
    HuntPaths out;
    out.grid = grid;
    out.dim = d;
    out.n_paths = n_paths;
    out.seed = seed;
    out.init = init;
    out.x = PathProcess(n_paths, n + 1, d);
    out.dm = PathProcess(n_paths, n, d);
    out.dw = PathProcess(n_paths, n, d);
    out.weight.assign(n_paths, 1.0);

    const double dt = grid.dt();
    const double fine_sd = std::sqrt(dt / static_cast<double>(refine));
    const bool scalar = (d == 1);
    parallel_for(n_paths, [&](std::size_t p) {
        Engine rng(stream_seed(seed, Stream::kHunt, p));
        std::normal_distribution<double> normal(0.0, 1.0);
        Vector x(static_cast<Eigen::Index>(d));
        for (std::size_t c = 0; c < d; ++c) {
            const double z = normal(rng);
            x(static_cast<Eigen::Index>(c)) =
                init.mean(static_cast<Eigen::Index>(c)) + (init.kind == InitialLaw::Kind::kGaussian ? init.std * z : 0.0);
        }
        if (init.kind == InitialLaw::Kind::kGaussian) {
            const bool inside = x.cwiseAbs().maxCoeff() <= init.box;
            out.weight[p] = inside ? 1.0 / init.density(x) : 0.0;
        }
        for (std::size_t c = 0; c < d; ++c) out.x(p, 0, c) = x(static_cast<Eigen::Index>(c));

        Vector w(static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < n; ++i) {
            w.setZero();
            for (std::size_t r = 0; r < refine; ++r) {
                for (std::size_t c = 0; c < d; ++c) w(static_cast<Eigen::Index>(c)) += fine_sd * normal(rng);
            }
            if (scalar) {
                const double s = field.sigma(x)(0, 0);
                const double b = field.drift(x)(0);
                if (!std::isfinite(s)) {
                    std::ostringstream os;
                    os << "simulate_hunt: invalid diffusion coefficient at x = " << x(0) << " (path " << p
                       << ", step " << i << ")";
                    throw NotPsdError(os.str());
                }
                const double dmv = std::numbers::sqrt2 * s * w(0);
                out.dw(p, i, 0) = w(0);
                out.dm(p, i, 0) = dmv;
                x(0) += b * dt + dmv;
                out.x(p, i + 1, 0) = x(0);
            } else {
                const Matrix s = field.sigma(x);
                const Vector dmv = std::numbers::sqrt2 * (s * w);
                const Vector b = field.drift(x);
                for (std::size_t c = 0; c < d; ++c) {
                    out.dw(p, i, c) = w(static_cast<Eigen::Index>(c));
                    out.dm(p, i, c) = dmv(static_cast<Eigen::Index>(c));
                }
                x += b * dt + dmv;
                for (std::size_t c = 0; c < d; ++c) out.x(p, i + 1, c) = x(static_cast<Eigen::Index>(c));
            }
        }
    });
    return out;
}

PathProcess forward_integral(const PathProcess& phi, const HuntPaths& paths) {
    const std::size_t n = paths.grid.steps();
    if (phi.width != paths.dim) {
        throw UsageError("forward_integral: integrand has " + std::to_string(phi.width) + " columns, expected " +
                         std::to_string(paths.dim));
    }
    if (phi.n_paths != paths.n_paths || (phi.n_slots != n && phi.n_slots != n + 1)) {
        throw UsageError("forward_integral: integrand shape does not match the path bundle");
    }
    PathProcess out(paths.n_paths, n + 1, 1);
    parallel_for(paths.n_paths, [&](std::size_t p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < paths.dim; ++c) acc += phi(p, i, c) * paths.dm(p, i, c);
            out(p, i + 1, 0) = acc;
        }
    });
    return out;
}

ForwardIntegralReport forward_integral_report(const PathProcess& phi, const HuntPaths& paths,
                                              const CoefficientField& field) {
    const PathProcess integral = forward_integral(phi, paths);
    const std::size_t n = paths.grid.steps();
    const double dt = paths.grid.dt();
    std::vector<double> end(paths.n_paths), sq(paths.n_paths), energy(paths.n_paths), norm(paths.n_paths);
    parallel_for(paths.n_paths, [&](std::size_t p) {
        const double v = integral(p, n, 0);
        end[p] = v;
        sq[p] = v * v;
        double e = 0.0, q = 0.0;
        Vector f(static_cast<Eigen::Index>(paths.dim));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < paths.dim; ++c) f(static_cast<Eigen::Index>(c)) = phi(p, i, c);
            e += f.dot(field.a(paths.position(p, i)) * f);
            q += f.squaredNorm();
        }
        energy[p] = 2.0 * e * dt;
        norm[p] = q * dt;
    });
    ForwardIntegralReport r;
    const SampleStats m = sample_stats(end);
    const SampleStats s = sample_stats(sq);
    r.mean = m.mean;
    r.mean_se = m.std_error;
    r.second_moment = s.mean;
    r.second_moment_se = s.std_error;
    r.energy = sample_stats(energy).mean;
    const double q = sample_stats(norm).mean;
    r.lower_bound = 2.0 * field.lambda() * q;
    r.upper_bound = 2.0 * field.big_lambda() * q;
    return r;
}

BracketReport empirical_bracket(const HuntPaths& paths, const CoefficientField& field) {
    const std::size_t n = paths.grid.steps();
    const std::size_t d = paths.dim;
    const double dt = paths.grid.dt();
    BracketReport r;
    r.bracket = PathProcess(paths.n_paths, n + 1, d * d);
    r.integral = PathProcess(paths.n_paths, n + 1, d * d);
    parallel_for(paths.n_paths, [&](std::size_t p) {
        std::vector<double> b(d * d, 0.0), q(d * d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix a = field.a(paths.position(p, i));
            for (std::size_t u = 0; u < d; ++u) {
                for (std::size_t v = 0; v < d; ++v) {
                    b[u * d + v] += paths.dm(p, i, u) * paths.dm(p, i, v);
                    q[u * d + v] += 2.0 * a(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) * dt;
                    r.bracket(p, i + 1, u * d + v) = b[u * d + v];
                    r.integral(p, i + 1, u * d + v) = q[u * d + v];
                }
            }
        }
    });

    const auto dd = static_cast<Eigen::Index>(d);
    r.mean_bracket_T = Matrix::Zero(dd, dd);
    r.mean_integral_T = Matrix::Zero(dd, dd);
    r.se_bracket_T = Matrix::Zero(dd, dd);
    std::vector<double> mb(n + 1), mi(n + 1);
    for (std::size_t u = 0; u < d; ++u) {
        for (std::size_t v = 0; v < d; ++v) {
            const std::size_t c = u * d + v;
            std::fill(mb.begin(), mb.end(), 0.0);
            std::fill(mi.begin(), mi.end(), 0.0);
            std::vector<double> end(paths.n_paths);
            for (std::size_t p = 0; p < paths.n_paths; ++p) {
                for (std::size_t s = 1; s <= n; ++s) {
                    mb[s] += r.bracket(p, s, c);
                    mi[s] += r.integral(p, s, c);
                }
                end[p] = r.bracket(p, n, c);
            }
            const double inv = 1.0 / static_cast<double>(paths.n_paths);
            const SampleStats st = sample_stats(end);
            const auto ui = static_cast<Eigen::Index>(u), vi = static_cast<Eigen::Index>(v);
            r.mean_bracket_T(ui, vi) = mb[n] * inv;
            r.mean_integral_T(ui, vi) = mi[n] * inv;
            r.se_bracket_T(ui, vi) = st.std_error;
            if (u == v) {
                for (std::size_t s = 1; s <= n; ++s) {
                    if (mi[s] > 0.0) {
                        r.max_relative_deviation = std::max(r.max_relative_deviation, std::abs(mb[s] - mi[s]) / mi[s]);
                    }
                }
            } else if (st.std_error > 0.0) {
                r.max_offdiag_z = std::max(r.max_offdiag_z, std::abs(st.mean) / st.std_error);
            }
        }
    }
    return r;
}

void write_hunt_csv(std::ostream& os, const HuntPaths& paths, std::size_t max_paths) {
    os << "path_id,step";
    for (std::size_t c = 1; c <= paths.dim; ++c) os << ",x_" << c;
    for (std::size_t c = 1; c <= paths.dim; ++c) os << ",dM_" << c;
    os << ",weight\n";
    const std::size_t np = std::min(max_paths, paths.n_paths);
    for (std::size_t p = 0; p < np; ++p) {
        for (std::size_t i = 0; i <= paths.grid.steps(); ++i) {
            os << p << ',' << i;
            for (std::size_t c = 0; c < paths.dim; ++c) os << ',' << fmt_double(paths.x(p, i, c));
            for (std::size_t c = 0; c < paths.dim; ++c) {
                os << ',' << (i < paths.grid.steps() ? fmt_double(paths.dm(p, i, c)) : std::string("0"));
            }
            os << ',' << fmt_double(paths.weight[p]) << '\n';
        }
    }
}

}  // namespace gspde
