#include "gspde/gbm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gspde/format.hpp"

namespace gspde {

DriverPaths DriverPaths::coarsened(std::size_t factor) const {
    if (factor == 0 || grid.steps() % factor != 0) {
        throw UsageError("DriverPaths::coarsened: factor must divide the step count");
    }
    DriverPaths out;
    out.grid = TimeGrid(grid.horizon(), grid.steps() / factor);
    out.n_paths = n_paths;
    out.l = l;
    out.seed = seed;
    out.dw = PathProcess(n_paths, out.grid.steps(), l);
    for (std::size_t p = 0; p < n_paths; ++p) {
        for (std::size_t i = 0; i < out.grid.steps(); ++i) {
            for (std::size_t j = 0; j < l; ++j) {
                double s = 0.0;
                for (std::size_t r = 0; r < factor; ++r) s += dw(p, i * factor + r, j);
                out.dw(p, i, j) = s;
            }
        }
    }
    return out;
}

DriverPaths sample_driver(const TimeGrid& grid, std::size_t n_paths, std::size_t l, std::uint64_t seed) {
    if (n_paths == 0) throw UsageError("sample_driver: n_paths must be >= 1");
    if (l == 0) throw UsageError("sample_driver: driver dimension must be >= 1");
    DriverPaths out;
    out.grid = grid;
    out.n_paths = n_paths;
    out.l = l;
    out.seed = seed;
    out.dw = PathProcess(n_paths, grid.steps(), l);
    const double sd = std::sqrt(grid.dt());
    parallel_for(n_paths, [&](std::size_t p) {
        Engine rng(stream_seed(seed, Stream::kDriver, p));
        std::normal_distribution<double> normal(0.0, 1.0);
        double* row = out.dw.row(p, 0);
        for (std::size_t k = 0; k < grid.steps() * l; ++k) row[k] = sd * normal(rng);
    });
    return out;
}

double GBMPaths::b_minus_bt(std::size_t p, std::size_t n, std::size_t j) const {
    double s = 0.0;
    for (std::size_t i = grid.steps(); i-- > n;) s += db(p, i, j);
    return s;
}

GBMPaths build_gbm(const DriverPaths& driver, const ControlSchedule& control, const ScenarioSet& set) {
    const std::size_t n = driver.grid.steps();
    control.validate(set, n);
    if (driver.l != set.dim()) {
        throw UsageError("build_gbm: driver dimension does not match the scenario set");
    }
    GBMPaths out;
    out.grid = driver.grid;
    out.n_paths = driver.n_paths;
    out.l = driver.l;
    out.seed = driver.seed;
    out.control = control;
    out.covariance_per_step.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.covariance_per_step.push_back(set.covariance(control.at(i)));
    out.db = PathProcess(driver.n_paths, n, driver.l);
    const std::size_t l = driver.l;
    parallel_for(driver.n_paths, [&](std::size_t p) {
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix& beta = set.matrix(control.at(i));
            const double* w = driver.dw.row(p, n - 1 - i);
            double* b = out.db.row(p, i);
            for (std::size_t r = 0; r < l; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < l; ++c) s += beta(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * w[c];
                b[r] = -s;
            }
        }
    });
    return out;
}

PathProcess backward_integral(const Integrand& xi, const GBMPaths& paths) {
    const std::size_t n = paths.grid.steps();
    if (xi.width != paths.l) {
        throw UsageError("backward_integral: integrand has " + std::to_string(xi.width) + " columns, expected " +
                         std::to_string(paths.l));
    }
    if (xi.n_paths != paths.n_paths || xi.n_slots != n + 1) {
        throw UsageError("backward_integral: integrand shape does not match the path bundle");
    }
    PathProcess out(paths.n_paths, n + 1, 1);
    parallel_for(paths.n_paths, [&](std::size_t p) {
        double acc = 0.0;
        out(p, n, 0) = 0.0;
        for (std::size_t i = n; i-- > 0;) {
            const double* x = xi.row(p, i + 1);
            const double* b = paths.db.row(p, i);
            for (std::size_t j = 0; j < paths.l; ++j) acc += x[j] * b[j];
            out(p, i, 0) = acc;
        }
    });
    return out;
}

IntegrandPreset integrand_preset_from_string(const std::string& name) {
    if (name == "constant") return IntegrandPreset::kConstant;
    if (name == "time_cos") return IntegrandPreset::kTimeCos;
    if (name == "path_tanh") return IntegrandPreset::kPathTanh;
    throw UsageError("unknown integrand preset '" + name + "' (expected constant, time_cos, path_tanh)");
}

std::string to_string(IntegrandPreset p) {
    switch (p) {
        case IntegrandPreset::kConstant:
            return "constant";
        case IntegrandPreset::kTimeCos:
            return "time_cos";
        case IntegrandPreset::kPathTanh:
            return "path_tanh";
    }
    return "unknown";
}

Integrand make_integrand(IntegrandPreset preset, const GBMPaths& paths, double c) {
    const std::size_t n = paths.grid.steps();
    Integrand xi(paths.n_paths, n + 1, paths.l);
    const double horizon = paths.grid.horizon();
    std::vector<double> cos_table;
    if (preset == IntegrandPreset::kTimeCos) {
        cos_table.resize((n + 1) * paths.l);
        for (std::size_t s = 0; s <= n; ++s) {
            for (std::size_t j = 0; j < paths.l; ++j) {
                cos_table[s * paths.l + j] =
                    c * std::cos(2.0 * std::numbers::pi * paths.grid.time(s) / horizon + static_cast<double>(j));
            }
        }
    }
    parallel_for(paths.n_paths, [&](std::size_t p) {
        std::vector<double> b(paths.l, 0.0);  // running B_{t_s} - B_T
        for (std::size_t s = n + 1; s-- > 0;) {
            if (s < n) {
                for (std::size_t j = 0; j < paths.l; ++j) b[j] += paths.db(p, s, j);
            }
            for (std::size_t j = 0; j < paths.l; ++j) {
                double v = 0.0;
                switch (preset) {
                    case IntegrandPreset::kConstant:
                        v = c;
                        break;
                    case IntegrandPreset::kTimeCos:
                        v = cos_table[s * paths.l + j];
                        break;
                    case IntegrandPreset::kPathTanh:
                        v = c * std::tanh(b[j]);
                        break;
                }
                xi(p, s, j) = v;
            }
        }
    });
    return xi;
}

bool IntegralDiagnostics::mean_zero_holds(double n_se) const {
    for (const auto& s : per_scenario) {
        if (std::abs(s.mean_i0) > n_se * s.se_i0 + 1e-14) return false;
    }
    return true;
}

bool IntegralDiagnostics::isometry_bound_holds(double n_se) const {
    return var_i0 <= bound * (1.0 + n_se * var_i0_rel_se) + 1e-14;
}

bool IntegralDiagnostics::doob_bound_holds(double n_se) const {
    return sup_stat <= doob_bound * (1.0 + n_se * sup_stat_rel_se) + 1e-14;
}

IntegralDiagnostics integral_diagnostics(IntegrandPreset preset, const std::vector<GBMPaths>& bundles,
                                         const ScenarioSet& set, double c) {
    if (bundles.empty()) throw UsageError("integral_diagnostics: no path bundles");
    IntegralDiagnostics out;
    out.sigma_bar = set.sigma_bar();
    std::vector<std::vector<double>> i0(bundles.size()), sq(bundles.size()), sup(bundles.size()),
        energy(bundles.size());
    for (std::size_t k = 0; k < bundles.size(); ++k) {
        const GBMPaths& g = bundles[k];
        const Integrand xi = make_integrand(preset, g, c);
        const PathProcess integral = backward_integral(xi, g);
        const std::size_t n = g.grid.steps();
        const double dt = g.grid.dt();
        i0[k].resize(g.n_paths);
        sq[k].resize(g.n_paths);
        sup[k].resize(g.n_paths);
        energy[k].resize(g.n_paths);
        for (std::size_t p = 0; p < g.n_paths; ++p) {
            const double v0 = integral(p, 0, 0);
            i0[k][p] = v0;
            sq[k][p] = v0 * v0;
            double m = 0.0;
            for (std::size_t s = 0; s <= n; ++s) m = std::max(m, integral(p, s, 0) * integral(p, s, 0));
            sup[k][p] = m;
            double e = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < g.l; ++j) e += xi(p, i + 1, j) * xi(p, i + 1, j);
            }
            energy[k][p] = e * dt;
        }
        ScenarioIntegralStats st;
        const SampleStats a = sample_stats(i0[k]);
        const SampleStats b = sample_stats(sq[k]);
        const SampleStats s = sample_stats(sup[k]);
        st.mean_i0 = a.mean;
        st.se_i0 = a.std_error;
        st.second_moment = b.mean;
        st.second_moment_se = b.std_error;
        st.sup_moment = s.mean;
        st.sup_moment_se = s.std_error;
        st.integrand_energy = sample_stats(energy[k]).mean;
        out.per_scenario.push_back(st);
    }
    std::size_t worst = 0;
    for (std::size_t k = 1; k < out.per_scenario.size(); ++k) {
        if (std::abs(out.per_scenario[k].mean_i0) > std::abs(out.per_scenario[worst].mean_i0)) worst = k;
    }
    out.mean_i0 = out.per_scenario[worst].mean_i0;
    out.se = out.per_scenario[worst].se_i0;

    const UpperExpectation v = upper_expectation(sq);
    out.var_i0 = v.value;
    out.var_i0_rel_se = v.value > 0.0 ? v.std_error() / v.value : 0.0;
    const UpperExpectation sp = upper_expectation(sup);
    out.sup_stat = sp.value;
    out.sup_stat_rel_se = sp.value > 0.0 ? sp.std_error() / sp.value : 0.0;
    const double e = upper_expectation(energy).value;
    const double s2 = out.sigma_bar * out.sigma_bar;
    out.bound = s2 * e;
    out.doob_bound = 4.0 * s2 * e;
    return out;
}

void write_gbm_csv(std::ostream& os, const std::vector<GBMPaths>& bundles, std::size_t max_paths) {
    os << "path_id,scenario_id,step,coord,dB_backward\n";
    for (std::size_t k = 0; k < bundles.size(); ++k) {
        const GBMPaths& g = bundles[k];
        const std::size_t np = std::min(max_paths, g.n_paths);
        for (std::size_t p = 0; p < np; ++p) {
            for (std::size_t i = 0; i < g.grid.steps(); ++i) {
                for (std::size_t j = 0; j < g.l; ++j) {
                    os << p << ',' << k << ',' << i << ',' << j << ',' << fmt_double(g.db(p, i, j)) << '\n';
                }
            }
        }
    }
}

}  // namespace gspde
