#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gspde {

/// Scalar reaction term (t, x, y, z) -> R with sup bounds on |d/dy| and |grad_z|.
struct ReactionTerm {
    using Fn = std::function<double(double t, std::span<const double> x, double y, std::span<const double> z)>;

    std::string description;
    Fn fn;
    double lip_y = 0.0;
    double lip_z = 0.0;

    [[nodiscard]] double operator()(double t, std::span<const double> x, double y, std::span<const double> z) const {
        return fn(t, x, y, z);
    }
    /// Scalar-x, scalar-z convenience for one-dimensional problems.
    [[nodiscard]] double eval1(double t, double x, double y, double z) const {
        return fn(t, std::span<const double>(&x, 1), y, std::span<const double>(&z, 1));
    }
    [[nodiscard]] bool depends_on_yz() const { return lip_y > 0.0 || lip_z > 0.0; }
};

namespace reaction {

ReactionTerm zero();
ReactionTerm constant(double c);
/// a * y + b
ReactionTerm affine_y(double a, double b);
/// amp * sin(freq * x_1) * exp(-x_1^2 / (2 w^2)) (envelope omitted when w <= 0)
ReactionTerm sin_x(double amp, double freq, double envelope_width);
/// amp * exp(-|x - center|^2 / (2 w^2)) * cos(omega * t)
ReactionTerm gauss_bump(double amp, double width, double center, double omega);
/// cy * tanh(y) + cz * tanh(z_1)
ReactionTerm tanh_composite(double cy, double cz);
/// Pointwise sum; Lipschitz bounds add.
ReactionTerm sum(const std::vector<ReactionTerm>& terms);
/// f(t, x, y, sigma(x) z) for a scalar diffusion coefficient sigma (d = 1).
ReactionTerm compose_sigma(const ReactionTerm& f, std::function<double(double)> sigma, double sigma_max);

}  // namespace reaction

/// Scalar function of space used for terminal data and test functions.
struct SpatialFunction {
    using Fn = std::function<double(std::span<const double> x)>;
    std::string description;
    Fn fn;

    [[nodiscard]] double operator()(std::span<const double> x) const { return fn(x); }
    [[nodiscard]] double eval1(double x) const { return fn(std::span<const double>(&x, 1)); }
};

namespace spatial {

SpatialFunction zero();
SpatialFunction constant(double c);
/// amp * exp(-|x - center|^2 / (2 w^2))
SpatialFunction gaussian(double amp, double width, double center);
/// amp * sin(freq * x_1)
SpatialFunction sine(double amp, double freq);
/// base + c
SpatialFunction shifted(const SpatialFunction& base, double c);

}  // namespace spatial

/// Checks |f(y,z) - f(y',z')|^2 <= c_bar (|dy|^2 + |dz|^2) from the term's derivative bounds.
[[nodiscard]] bool lipschitz_f_ok(const ReactionTerm& f, double c_bar);
/// Checks sum_j |g^j(y,z) - g^j(y',z')|^2 <= c_bar |dy|^2 + alpha |dz|^2.
[[nodiscard]] bool lipschitz_g_ok(const std::vector<ReactionTerm>& g, double c_bar, double alpha);

}  // namespace gspde
