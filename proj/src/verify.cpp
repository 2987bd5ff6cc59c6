#include "gspde/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace gspde {

namespace {

double ratio_or_abs(double num2, double den2) {
    if (den2 > 0.0) return std::sqrt(num2 / den2);
    return std::sqrt(num2);
}

std::size_t checkpoint_step(const TimeGrid& tg, double t) {
    const double pos = t / tg.dt();
    const double rounded = std::round(pos);
    if (rounded < 0.0 || rounded > static_cast<double>(tg.steps()) ||
        std::abs(tg.time(static_cast<std::size_t>(rounded)) - t) > 1e-9 * tg.horizon()) {
        std::ostringstream os;
        os << "checkpoint t = " << t << " is not a time of the grid (T = " << tg.horizon() << ", N = " << tg.steps()
           << ")";
        throw UsageError(os.str());
    }
    return static_cast<std::size_t>(rounded);
}

std::vector<double> worst_over(const std::vector<std::vector<double>>& per_scenario) {
    std::vector<double> out;
    for (const auto& row : per_scenario) {
        if (out.empty()) out.assign(row.size(), 0.0);
        for (std::size_t c = 0; c < row.size(); ++c) out[c] = std::max(out[c], row[c]);
    }
    return out;
}

}  // namespace

double RefinementRow::max_rel_rms() const {
    double m = 0.0;
    for (double v : rel_rms) m = std::max(m, v);
    return m;
}

std::vector<double> RepresentationReport::worst_y() const { return worst_over(rel_rms_y); }
std::vector<double> RepresentationReport::worst_z() const { return worst_over(rel_rms_z); }

bool RepresentationReport::within_tolerance() const {
    for (double v : worst_y()) {
        if (!(v <= tolerance)) return false;
    }
    return true;
}

bool RepresentationReport::non_increasing() const {
    for (std::size_t r = 1; r < refinement.size(); ++r) {
        const auto& prev = refinement[r - 1].rel_rms;
        const auto& cur = refinement[r].rel_rms;
        if (prev.size() != cur.size()) return false;
        for (std::size_t c = 0; c < cur.size(); ++c) {
            if (cur[c] > prev[c]) return false;
        }
    }
    return true;
}

RepresentationReport check_representation(const std::vector<RandomField>& u, const BdsdeSolution& sol,
                                          const HuntPaths& paths, const std::vector<GBMPaths>& gbm,
                                          const CoefficientField& field, const std::vector<double>& checkpoints) {
    if (gbm.empty() || u.size() != gbm.size() || sol.n_bundles != gbm.size()) {
        throw UsageError("check_representation: field, BDSDE and G-Brownian bundle counts differ");
    }
    if (sol.hunt_seed != paths.seed || sol.n_x != paths.n_paths) {
        throw UsageError("check_representation: BDSDE solution was computed on a different X-ensemble");
    }
    if (paths.dim != 1 || field.dim() != 1) throw UsageError("check_representation: only d = 1 is supported");
    const TimeGrid& tg = sol.tgrid;
    if (!(paths.grid == tg)) throw UsageError("check_representation: X-ensemble time grid differs");
    for (std::size_t b = 0; b < gbm.size(); ++b) {
        if (u[b].seed != gbm[b].seed || sol.gbm_seeds[b] != gbm[b].seed) {
            throw UsageError("check_representation: bundle " + std::to_string(b) +
                             " was simulated from a different driver seed");
        }
        if (u[b].scenario_id != gbm[b].scenario_id() || sol.scenario_ids[b] != gbm[b].scenario_id()) {
            throw UsageError("check_representation: scenario ids of bundle " + std::to_string(b) + " differ");
        }
        if (!(u[b].tgrid == tg) || !(gbm[b].grid == tg)) {
            throw UsageError("check_representation: time grids differ");
        }
        if (u[b].paths.size() != gbm[b].n_paths || sol.n_b_paths != gbm[b].n_paths) {
            throw UsageError("check_representation: B-path counts differ");
        }
    }
    std::vector<std::size_t> steps;
    for (double t : checkpoints) steps.push_back(checkpoint_step(tg, t));

    RepresentationReport rep;
    rep.checkpoints = checkpoints;
    const std::size_t nc = steps.size();
    const std::size_t nx = paths.n_paths;
    for (std::size_t b = 0; b < gbm.size(); ++b) {
        rep.scenario_ids.push_back(gbm[b].scenario_id());
        const RandomField& f = u[b];
        const std::size_t nb = f.paths.size();
        // sums[p][c] = {dy2, y2, dz2, z2, dzs2, zs2}
        std::vector<std::vector<std::array<double, 6>>> sums(nb, std::vector<std::array<double, 6>>(nc));
        parallel_for(nb, [&](std::size_t p) {
            const BdsdeBlock& blk = sol.block(b, p);
            for (std::size_t c = 0; c < nc; ++c) {
                const auto col = static_cast<Eigen::Index>(steps[c]);
                const Vector slice = f.paths[p].col(col);
                const Vector grad = f.sgrid.gradient(slice);
                std::array<double, 6> s{};
                for (std::size_t k = 0; k < nx; ++k) {
                    const double x = paths.x(k, steps[c], 0);
                    const double uv = f.sgrid.interpolate(slice, x);
                    const double gv = f.sgrid.interpolate(grad, x);
                    const double yv = blk.y(static_cast<Eigen::Index>(k), col);
                    const double zv = blk.z[0](static_cast<Eigen::Index>(k), col);
                    const double sg = std::sqrt(field.a1(x));
                    s[0] += (uv - yv) * (uv - yv);
                    s[1] += uv * uv;
                    s[2] += (gv - zv) * (gv - zv);
                    s[3] += gv * gv;
                    s[4] += (gv - zv) * (gv - zv) * sg * sg;
                    s[5] += gv * gv * sg * sg;
                }
                sums[p][c] = s;
            }
        });
        std::vector<double> ry(nc), rz(nc), rzs(nc);
        for (std::size_t c = 0; c < nc; ++c) {
            std::array<double, 6> tot{};
            for (std::size_t p = 0; p < nb; ++p) {
                for (std::size_t q = 0; q < 6; ++q) tot[q] += sums[p][c][q];
            }
            ry[c] = ratio_or_abs(tot[0], tot[1]);
            rz[c] = ratio_or_abs(tot[2], tot[3]);
            rzs[c] = ratio_or_abs(tot[4], tot[5]);
        }
        rep.rel_rms_y.push_back(std::move(ry));
        rep.rel_rms_z.push_back(std::move(rz));
        rep.rel_rms_z_sigma.push_back(std::move(rzs));
    }
    rep.refinement.push_back(RefinementRow{tg.dt(), rep.worst_y()});
    return rep;
}

void add_refinement_level(RepresentationReport& base, const RepresentationReport& level) {
    if (level.checkpoints != base.checkpoints) {
        throw UsageError("add_refinement_level: checkpoints differ between levels");
    }
    if (level.refinement.empty()) throw UsageError("add_refinement_level: level has no refinement row");
    base.refinement.push_back(level.refinement.front());
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

namespace {

void check_ordering(const GspdeProblem& a, const GspdeProblem& b) {
    if (!(a.sgrid() == b.sgrid()) || !(a.tgrid() == b.tgrid())) {
        throw UsageError("check_comparison: problems use different grids");
    }
    if (a.field().name() != b.field().name() || a.scenarios().size() != b.scenarios().size() ||
        a.sigma_bar() != b.sigma_bar() || a.g().size() != b.g().size()) {
        throw UsageError("check_comparison: problems differ in coefficient field, scenarios or noise dimension");
    }
    const SpatialGrid& sg = a.sgrid();
    for (std::size_t k = 0; k < sg.points(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        if (a.terminal()(r) > b.terminal()(r) + 1e-14) {
            std::ostringstream os;
            os << "check_comparison: terminal data not ordered at x = " << sg.x(k) << " (" << a.terminal()(r)
               << " > " << b.terminal()(r) << ")";
            throw UsageError(os.str());
        }
    }
    const double ys[] = {-3.0, -1.0, 0.0, 1.0, 3.0};
    const double zs[] = {-3.0, 0.0, 3.0};
    const TimeGrid& tg = a.tgrid();
    for (std::size_t i = 0; i <= tg.steps(); ++i) {
        const double t = tg.time(i);
        for (std::size_t k = 0; k < sg.points(); ++k) {
            const double x = sg.x(k);
            for (double y : ys) {
                for (double z : zs) {
                    const double fa = a.f().eval1(t, x, y, z);
                    const double fb = b.f().eval1(t, x, y, z);
                    if (fa > fb + 1e-14 * (1.0 + std::abs(fb))) {
                        std::ostringstream os;
                        os << "check_comparison: f not ordered at (t, x, y, z) = (" << t << ", " << x << ", " << y
                           << ", " << z << ")";
                        throw UsageError(os.str());
                    }
                    for (std::size_t j = 0; j < a.g().size(); ++j) {
                        const double ga = a.g()[j].eval1(t, x, y, z);
                        const double gb = b.g()[j].eval1(t, x, y, z);
                        if (std::abs(ga - gb) > 1e-14 * (1.0 + std::abs(gb))) {
                            throw UsageError("check_comparison: the two problems must share g");
                        }
                    }
                }
            }
        }
    }
}

GspdeProblem refined_problem(const GspdeProblem& p) {
    return GspdeProblem(p.sgrid().refined(), p.tgrid().refined(2), p.field(), p.scenarios(), p.terminal_function(),
                        p.f(), p.g(), p.c_bar(), p.alpha_bar());
}

bool inside_collar(const SpatialGrid& sg, std::size_t k, double collar) {
    return std::abs(sg.x(k)) <= sg.half_width() - collar + 1e-12 * sg.half_width();
}

double grid_error(const GspdeSolution& coarse, const GspdeSolution& fine, const SpatialGrid& sg, std::size_t steps,
                  double collar) {
    double e = 0.0;
    for (std::size_t b = 0; b < coarse.fields.size(); ++b) {
        for (std::size_t p = 0; p < coarse.fields[b].paths.size(); ++p) {
            const Matrix& uc = coarse.fields[b].paths[p];
            const Matrix& uf = fine.fields[b].paths[p];
            for (std::size_t i = 0; i <= steps; ++i) {
                for (std::size_t k = 0; k < sg.points(); ++k) {
                    if (!inside_collar(sg, k, collar)) continue;
                    e = std::max(e, std::abs(uc(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) -
                                             uf(static_cast<Eigen::Index>(2 * k), static_cast<Eigen::Index>(2 * i))));
                }
            }
        }
    }
    return e;
}

}  // namespace

ComparisonReport check_comparison(const GspdeProblem& a, const GspdeProblem& b, const PicardConfig& cfg,
                                  const std::vector<GBMPaths>& gbm, const std::vector<GBMPaths>& gbm_fine,
                                  double collar_fraction) {
    if (!(collar_fraction >= 0.0 && collar_fraction < 0.5)) {
        throw UsageError("check_comparison: collar fraction must be in [0, 0.5)");
    }
    if (gbm.size() != gbm_fine.size()) throw UsageError("check_comparison: coarse and fine bundle counts differ");
    for (std::size_t k = 0; k < gbm.size(); ++k) {
        if (gbm[k].seed != gbm_fine[k].seed || gbm[k].n_paths != gbm_fine[k].n_paths) {
            throw UsageError("check_comparison: fine bundles must come from the same drivers");
        }
    }
    check_ordering(a, b);
    const SpatialGrid& sg = a.sgrid();
    ComparisonReport rep;
    rep.collar = collar_fraction * sg.half_width();

    const GspdeSolution ua = solve_gspde_picard(a, cfg, gbm);
    const GspdeSolution ub = solve_gspde_picard(b, cfg, gbm);
    rep.min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < gbm.size(); ++k) {
        double mg = std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < gbm[k].n_paths; ++p) {
            const Matrix diff = ub.fields[k].paths[p] - ua.fields[k].paths[p];
            for (Eigen::Index r = 0; r < diff.rows(); ++r) {
                if (!inside_collar(sg, static_cast<std::size_t>(r), rep.collar)) continue;
                mg = std::min(mg, diff.row(r).minCoeff());
            }
        }
        rep.min_gap_per_bundle.push_back(mg);
        rep.scenario_ids.push_back(gbm[k].scenario_id());
        rep.min_gap = std::min(rep.min_gap, mg);
    }

    const GspdeSolution fa = solve_gspde_picard(refined_problem(a), cfg, gbm_fine);
    const GspdeSolution fb = solve_gspde_picard(refined_problem(b), cfg, gbm_fine);
    rep.eps_grid = std::max(grid_error(ua, fa, sg, a.tgrid().steps(), rep.collar),
                            grid_error(ub, fb, sg, b.tgrid().steps(), rep.collar));
    return rep;
}

// ---------------------------------------------------------------------------
// Linear transport
// ---------------------------------------------------------------------------

double TransportReport::worst_rel_rms() const {
    double m = 0.0;
    for (double v : rel_rms) m = std::max(m, v);
    return m;
}

TransportReport check_linear_transport(const std::vector<RandomField>& u, const std::vector<ReactionTerm>& g,
                                       const HuntPaths& paths, const std::vector<GBMPaths>& gbm) {
    if (gbm.empty() || u.size() != gbm.size()) throw UsageError("check_linear_transport: bundle counts differ");
    if (paths.dim != 1) throw UsageError("check_linear_transport: only d = 1 is supported");
    for (const auto& gj : g) {
        if (gj.depends_on_yz()) throw UsageError("check_linear_transport: g must not depend on (y, z)");
    }
    const TimeGrid& tg = paths.grid;
    const std::size_t n = tg.steps();
    TransportReport rep;
    for (std::size_t b = 0; b < gbm.size(); ++b) {
        const RandomField& f = u[b];
        if (f.seed != gbm[b].seed || f.scenario_id != gbm[b].scenario_id()) {
            throw UsageError("check_linear_transport: field was computed from a different bundle");
        }
        if (!(f.tgrid == tg) || !(gbm[b].grid == tg)) throw UsageError("check_linear_transport: time grids differ");
        if (gbm[b].l != g.size()) throw UsageError("check_linear_transport: noise dimension mismatch");
        const std::size_t nb = f.paths.size();
        std::vector<std::array<double, 2>> sums(nb);
        parallel_for(nb, [&](std::size_t p) {
            std::vector<Vector> grads(n);
            for (std::size_t i = 0; i < n; ++i) grads[i] = f.sgrid.gradient(f.paths[p].col(static_cast<Eigen::Index>(i)));
            const Vector u0 = f.paths[p].col(0);
            std::array<double, 2> s{};
            for (std::size_t k = 0; k < paths.n_paths; ++k) {
                const double lhs = f.sgrid.interpolate(u0, paths.x(k, 0, 0));
                double rhs = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double xn = paths.x(k, i + 1, 0);
                    for (std::size_t j = 0; j < g.size(); ++j) rhs += g[j].eval1(tg.time(i + 1), xn, 0.0, 0.0) * gbm[b](p, i, j);
                    rhs -= f.sgrid.interpolate(grads[i], paths.x(k, i, 0)) * paths.dm(k, i, 0);
                }
                s[0] += (lhs - rhs) * (lhs - rhs);
                s[1] += lhs * lhs;
            }
            sums[p] = s;
        });
        double num = 0.0, den = 0.0;
        for (const auto& s : sums) {
            num += s[0];
            den += s[1];
        }
        const double count = static_cast<double>(std::max<std::size_t>(1, nb * paths.n_paths));
        rep.scenario_ids.push_back(gbm[b].scenario_id());
        rep.rms.push_back(std::sqrt(num / count));
        rep.rel_rms.push_back(ratio_or_abs(num, den));
    }
    return rep;
}

}  // namespace gspde
