#include "gspde/presets.hpp"

#include <cmath>
#include <sstream>

#include "gspde/common.hpp"

namespace gspde {

namespace {

std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

namespace reaction {

ReactionTerm zero() {
    return {"zero", [](double, std::span<const double>, double, std::span<const double>) { return 0.0; }, 0.0, 0.0};
}

ReactionTerm constant(double c) {
    return {"constant(" + num(c) + ")",
            [c](double, std::span<const double>, double, std::span<const double>) { return c; }, 0.0, 0.0};
}

ReactionTerm affine_y(double a, double b) {
    return {"affine_y(" + num(a) + "," + num(b) + ")",
            [a, b](double, std::span<const double>, double y, std::span<const double>) { return a * y + b; },
            std::abs(a), 0.0};
}

ReactionTerm sin_x(double amp, double freq, double envelope_width) {
    return {"sin_x(" + num(amp) + "," + num(freq) + "," + num(envelope_width) + ")",
            [amp, freq, envelope_width](double, std::span<const double> x, double, std::span<const double>) {
                double v = amp * std::sin(freq * x[0]);
                if (envelope_width > 0.0) v *= std::exp(-x[0] * x[0] / (2.0 * envelope_width * envelope_width));
                return v;
            },
            0.0, 0.0};
}

ReactionTerm gauss_bump(double amp, double width, double center, double omega) {
    if (!(width > 0.0)) throw UsageError("gauss_bump: width must be positive");
    return {"gauss_bump(" + num(amp) + "," + num(width) + "," + num(center) + "," + num(omega) + ")",
            [amp, width, center, omega](double t, std::span<const double> x, double, std::span<const double>) {
                double r2 = 0.0;
                for (double xi : x) r2 += (xi - center) * (xi - center);
                return amp * std::exp(-r2 / (2.0 * width * width)) * std::cos(omega * t);
            },
            0.0, 0.0};
}

ReactionTerm tanh_composite(double cy, double cz) {
    return {"tanh(" + num(cy) + "," + num(cz) + ")",
            [cy, cz](double, std::span<const double>, double y, std::span<const double> z) {
                return cy * std::tanh(y) + cz * std::tanh(z.empty() ? 0.0 : z[0]);
            },
            std::abs(cy), std::abs(cz)};
}

ReactionTerm sum(const std::vector<ReactionTerm>& terms) {
    if (terms.empty()) return zero();
    if (terms.size() == 1) return terms.front();
    ReactionTerm out;
    out.description = "sum(";
    for (std::size_t k = 0; k < terms.size(); ++k) {
        out.description += (k ? "," : "") + terms[k].description;
        out.lip_y += terms[k].lip_y;
        out.lip_z += terms[k].lip_z;
    }
    out.description += ")";
    out.fn = [terms](double t, std::span<const double> x, double y, std::span<const double> z) {
        double s = 0.0;
        for (const auto& term : terms) s += term.fn(t, x, y, z);
        return s;
    };
    return out;
}

ReactionTerm compose_sigma(const ReactionTerm& f, std::function<double(double)> sigma, double sigma_max) {
    ReactionTerm out;
    out.description = f.description + " o sigma";
    out.lip_y = f.lip_y;
    out.lip_z = f.lip_z * sigma_max;
    out.fn = [inner = f.fn, sigma = std::move(sigma)](double t, std::span<const double> x, double y,
                                                      std::span<const double> z) {
        const double w = sigma(x[0]) * (z.empty() ? 0.0 : z[0]);
        return inner(t, x, y, std::span<const double>(&w, 1));
    };
    return out;
}

}  // namespace reaction

namespace spatial {

SpatialFunction zero() {
    return {"zero", [](std::span<const double>) { return 0.0; }};
}

SpatialFunction constant(double c) {
    return {"constant(" + num(c) + ")", [c](std::span<const double>) { return c; }};
}

SpatialFunction gaussian(double amp, double width, double center) {
    if (!(width > 0.0)) throw UsageError("gaussian: width must be positive");
    return {"gaussian(" + num(amp) + "," + num(width) + "," + num(center) + ")",
            [amp, width, center](std::span<const double> x) {
                double r2 = 0.0;
                for (double xi : x) r2 += (xi - center) * (xi - center);
                return amp * std::exp(-r2 / (2.0 * width * width));
            }};
}

SpatialFunction sine(double amp, double freq) {
    return {"sine(" + num(amp) + "," + num(freq) + ")",
            [amp, freq](std::span<const double> x) { return amp * std::sin(freq * x[0]); }};
}

SpatialFunction shifted(const SpatialFunction& base, double c) {
    return {base.description + "+" + num(c), [fn = base.fn, c](std::span<const double> x) { return fn(x) + c; }};
}

}  // namespace spatial

bool lipschitz_f_ok(const ReactionTerm& f, double c_bar) {
    return f.lip_y * f.lip_y + f.lip_z * f.lip_z <= c_bar * (1.0 + 1e-12);
}

bool lipschitz_g_ok(const std::vector<ReactionTerm>& g, double c_bar, double alpha) {
    double m11 = 0.0, m12 = 0.0, m22 = 0.0;
    for (const auto& t : g) {
        m11 += t.lip_y * t.lip_y;
        m12 += t.lip_y * t.lip_z;
        m22 += t.lip_z * t.lip_z;
    }
    const double a = c_bar - m11, b = -m12, d = alpha - m22;
    const double tol = 1e-12 * (1.0 + c_bar + alpha);
    return a >= -tol && d >= -tol && a * d - b * b >= -tol;
}

}  // namespace gspde
