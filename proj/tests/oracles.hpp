#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

// Independent reference solutions used by the unit and acceptance tests.
namespace gspde::oracle {

/// exp(tau a d^2/dx^2) applied to s * N(0, s^2)-shaped Gaussian exp(-x^2 / (2 s^2)).
inline double heat_kernel_gaussian(double x, double s, double a, double tau) {
    const double v = s * s + 2.0 * a * tau;
    return s / std::sqrt(v) * std::exp(-x * x / (2.0 * v));
}

/// Solves the tridiagonal system lo[i] u[i-1] + di[i] u[i] + up[i] u[i+1] = rhs[i].
inline std::vector<double> thomas(const std::vector<double>& lo, const std::vector<double>& di,
                                  const std::vector<double>& up, const std::vector<double>& rhs) {
    const std::size_t n = di.size();
    std::vector<double> c(n), d(n), u(n);
    c[0] = up[0] / di[0];
    d[0] = rhs[0] / di[0];
    for (std::size_t i = 1; i < n; ++i) {
        const double den = di[i] - lo[i] * c[i - 1];
        c[i] = up[i] / den;
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / den;
    }
    u[n - 1] = d[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) u[i] = d[i] - c[i] * u[i + 1];
    return u;
}

/// Crank-Nicolson solution of -du/dt = d/dx(a du/dx) + f(t, x), u(T) = psi, u = 0 at x = +-R,
/// on m uniform nodes with `steps` time steps and the trapezoid rule in f.
/// Returns u[i][k] for time index i = 0..steps and node k = 0..m-1.
inline std::vector<std::vector<double>> theta_scheme(double half_width, std::size_t m,
                                                     const std::function<double(double)>& a,
                                                     const std::function<double(double)>& psi,
                                                     const std::function<double(double, double)>& f, double horizon,
                                                     std::size_t steps) {
    const double h = 2.0 * half_width / static_cast<double>(m - 1);
    const double dt = horizon / static_cast<double>(steps);
    auto x = [&](std::size_t k) { return -half_width + static_cast<double>(k) * h; };
    std::vector<double> face(m - 1);
    for (std::size_t k = 0; k + 1 < m; ++k) face[k] = a(x(k) + 0.5 * h);
    const std::size_t n = m - 2;
    const double r = 0.5 * dt / (h * h);
    std::vector<double> lo(n), di(n), up(n);
    for (std::size_t i = 0; i < n; ++i) {
        lo[i] = -r * face[i];
        up[i] = -r * face[i + 1];
        di[i] = 1.0 + r * (face[i] + face[i + 1]);
    }
    std::vector<std::vector<double>> u(steps + 1, std::vector<double>(m, 0.0));
    for (std::size_t k = 1; k + 1 < m; ++k) u[steps][k] = psi(x(k));
    for (std::size_t s = steps; s-- > 0;) {
        const double t0 = horizon * static_cast<double>(s) / static_cast<double>(steps);
        const double t1 = horizon * static_cast<double>(s + 1) / static_cast<double>(steps);
        const std::vector<double>& v = u[s + 1];
        std::vector<double> rhs(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t k = i + 1;
            const double lv = face[k] * (v[k + 1] - v[k]) - face[k - 1] * (v[k] - v[k - 1]);
            rhs[i] = v[k] + r * lv + 0.5 * dt * (f(t0, x(k)) + f(t1, x(k)));
        }
        const std::vector<double> sol = thomas(lo, di, up, rhs);
        for (std::size_t i = 0; i < n; ++i) u[s][i + 1] = sol[i];
    }
    return u;
}

}  // namespace gspde::oracle
