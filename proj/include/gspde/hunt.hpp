#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "gspde/common.hpp"

namespace gspde {

/// Symmetric square root of a PSD matrix via eigendecomposition.
/// Throws NotPsdError when an eigenvalue is below -1e-12.
[[nodiscard]] Matrix sqrt_spd(const Matrix& a);

/// Diffusion matrix a(x) of the divergence-form generator sum_ij d_i(a^ij d_j).
class CoefficientField {
public:
    using MatrixFn = std::function<Matrix(const Vector&)>;
    using VectorFn = std::function<Vector(const Vector&)>;

    /// `div_a` returns b^i(x) = sum_j d_j a^ij(x); when empty a central
    /// finite difference with step 1e-5 is used.
    CoefficientField(std::string name, std::size_t dim, MatrixFn a, double lambda, double big_lambda,
                     VectorFn div_a = {}, MatrixFn sqrt_a = {});

    static CoefficientField constant(std::size_t dim, double c);
    /// d = 1, a(x) = 1 + sin^2(x)/2, lambda = 1, Lambda = 1.5.
    static CoefficientField sinusoidal_1d();
    /// d = 2, a(x) = diag(1 + sin^2(x_1)/2, 1 + sin^2(x_2)/2).
    static CoefficientField diagonal_2d();
    /// Preset lookup by name: "constant" (with `c`), "sinusoidal-1d", "diagonal-2d".
    static CoefficientField from_preset(const std::string& name, std::size_t dim, double c = 1.0);

    [[nodiscard]] const std::string& name() const { return name_; }
    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] double lambda() const { return lambda_; }
    [[nodiscard]] double big_lambda() const { return big_lambda_; }
    [[nodiscard]] bool is_constant() const { return constant_; }

    [[nodiscard]] Matrix a(const Vector& x) const { return a_(x); }
    /// Scalar shortcut for d = 1.
    [[nodiscard]] double a1(double x) const;
    [[nodiscard]] Matrix sigma(const Vector& x) const;
    [[nodiscard]] Vector drift(const Vector& x) const;
    [[nodiscard]] bool has_analytic_drift() const { return static_cast<bool>(div_a_); }

    /// Checks lambda |xi|^2 <= xi^T a(x) xi <= Lambda |xi|^2 at the supplied points
    /// (all unit directions via the extreme eigenvalues). Returns the worst violation (<= 0 is fine).
    [[nodiscard]] double ellipticity_violation(const std::vector<Vector>& points) const;

private:
    std::string name_;
    std::size_t dim_;
    MatrixFn a_;
    double lambda_;
    double big_lambda_;
    VectorFn div_a_;
    MatrixFn sqrt_a_;
    bool constant_ = false;
};

/// Law of X_0: point mass at `mean` or Gaussian N(mean, std^2 I).
struct InitialLaw {
    enum class Kind { kPoint, kGaussian };
    Kind kind = Kind::kPoint;
    Vector mean;
    double std = 1.0;
    /// Half-width of the box outside which importance weights are set to zero.
    double box = std::numeric_limits<double>::infinity();

    static InitialLaw point(const Vector& x0);
    static InitialLaw gaussian(const Vector& mean, double std, double box = std::numeric_limits<double>::infinity());
    [[nodiscard]] double density(const Vector& x) const;
};

struct HuntPaths {
    TimeGrid grid{1.0, 1};
    std::size_t dim = 0;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    InitialLaw init;
    PathProcess x;   // [path][0..N][coord]
    PathProcess dm;  // [path][0..N-1][coord]
    PathProcess dw;  // [path][0..N-1][coord], the driving increments
    std::vector<double> weight;

    [[nodiscard]] Vector position(std::size_t p, std::size_t n) const;
};

/// Euler-Maruyama for dX = div(a)(X) dt + sqrt(2) sigma(X) dW, recording dM = sqrt(2) sigma(X) dW.
/// The Brownian increments are drawn on a grid `refine` times finer and summed,
/// so simulate(grid, refine = 2) and simulate(grid.refined(2), refine = 1) share paths.
[[nodiscard]] HuntPaths simulate_hunt(const CoefficientField& field, const InitialLaw& init, const TimeGrid& grid,
                                      std::size_t n_paths, std::uint64_t seed, std::size_t refine = 1);

/// Cumulative forward integral sum_{n<m} phi_{t_n} . dM_n, returned as [path][m = 0..N][0].
/// `phi` has N or N+1 slots of width d.
[[nodiscard]] PathProcess forward_integral(const PathProcess& phi, const HuntPaths& paths);

struct ForwardIntegralReport {
    double mean = 0.0;
    double mean_se = 0.0;
    double second_moment = 0.0;
    double second_moment_se = 0.0;
    double energy = 0.0;       // 2 E int phi a phi^T ds
    double lower_bound = 0.0;  // 2 lambda E int |phi|^2 ds
    double upper_bound = 0.0;  // 2 Lambda E int |phi|^2 ds
};

[[nodiscard]] ForwardIntegralReport forward_integral_report(const PathProcess& phi, const HuntPaths& paths,
                                                            const CoefficientField& field);

struct BracketReport {
    PathProcess bracket;   // [path][0..N][i*d+j] cumulative dM^i dM^j
    PathProcess integral;  // [path][0..N][i*d+j] cumulative 2 a^ij(X) dt
    Matrix mean_bracket_T;
    Matrix mean_integral_T;
    Matrix se_bracket_T;
    /// Max over times and diagonal entries of |mean bracket - mean integral| / mean integral.
    double max_relative_deviation = 0.0;
    /// Max over off-diagonal entries of |mean bracket_T| / SE.
    double max_offdiag_z = 0.0;
};

[[nodiscard]] BracketReport empirical_bracket(const HuntPaths& paths, const CoefficientField& field);

/// CSV dump: path_id, step, x_1..x_d, dM_1..dM_d, weight.
void write_hunt_csv(std::ostream& os, const HuntPaths& paths, std::size_t max_paths);

}  // namespace gspde
