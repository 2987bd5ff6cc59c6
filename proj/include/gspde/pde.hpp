#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "gspde/common.hpp"
#include "gspde/gbm.hpp"
#include "gspde/hunt.hpp"
#include "gspde/presets.hpp"
#include "gspde/scenario.hpp"

namespace gspde {

enum class Boundary { kDirichlet0, kPeriodic };

[[nodiscard]] Boundary boundary_from_string(const std::string& name);
[[nodiscard]] std::string to_string(Boundary b);

/// Uniform grid on [-R, R] with m points. Only d = 1 is supported.
/// For periodic grids node m-1 is the image of node 0 (period 2R).
class SpatialGrid {
public:
    SpatialGrid(std::size_t dim, double half_width, std::size_t points, Boundary bc);

    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] double half_width() const { return half_width_; }
    [[nodiscard]] std::size_t points() const { return m_; }
    [[nodiscard]] Boundary boundary() const { return bc_; }
    [[nodiscard]] double dx() const { return 2.0 * half_width_ / static_cast<double>(m_ - 1); }
    [[nodiscard]] double x(std::size_t i) const { return -half_width_ + static_cast<double>(i) * dx(); }
    /// Nodes carrying unknowns: [first_active, first_active + n_active).
    [[nodiscard]] std::size_t first_active() const { return bc_ == Boundary::kDirichlet0 ? 1 : 0; }
    [[nodiscard]] std::size_t n_active() const { return bc_ == Boundary::kDirichlet0 ? m_ - 2 : m_ - 1; }
    /// Same box, spacing halved (2m - 1 points); node i here is node 2i there.
    [[nodiscard]] SpatialGrid refined() const { return SpatialGrid(dim_, half_width_, 2 * m_ - 1, bc_); }

    /// Samples `fn` on the nodes and enforces the boundary condition.
    [[nodiscard]] Vector sample(const SpatialFunction& fn) const;
    /// Zeroes Dirichlet boundary nodes or copies node 0 to node m-1.
    void enforce(Vector& u) const;

    /// Discrete L2 pairing sum u_k v_k dx over the distinct nodes.
    [[nodiscard]] double inner(const Vector& u, const Vector& v) const;
    [[nodiscard]] double norm2(const Vector& u) const { return inner(u, u); }
    /// Face-difference seminorm sum_faces ((u_{k+1} - u_k) / dx)^2 dx.
    [[nodiscard]] double grad_norm2(const Vector& u) const;
    /// Central-difference gradient at the nodes, one-sided at Dirichlet boundaries.
    [[nodiscard]] Vector gradient(const Vector& u) const;
    /// Linear interpolation at an arbitrary point (zero outside a Dirichlet box, wrapped when periodic).
    [[nodiscard]] double interpolate(const Vector& u, double x) const;

    bool operator==(const SpatialGrid&) const = default;

private:
    std::size_t dim_;
    double half_width_;
    std::size_t m_;
    Boundary bc_;
};

/// Values on a spatial grid.
struct GridFunction {
    SpatialGrid grid;
    Vector values;
};

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Conservative flux-form discretization of d/dx(a d/dx) with face coefficients
/// a_{k+1/2} = a((x_k + x_{k+1}) / 2).
class DivergenceOperator {
public:
    DivergenceOperator(const CoefficientField& field, const SpatialGrid& grid);

    [[nodiscard]] const SpatialGrid& grid() const { return grid_; }
    [[nodiscard]] const std::vector<double>& face_coefficients() const { return faces_; }
    /// Operator restricted to the active nodes.
    [[nodiscard]] const SparseMatrix& matrix() const { return matrix_; }

    /// L_h u on the full node vector; boundary nodes follow the boundary condition.
    [[nodiscard]] Vector apply(const Vector& u) const;
    /// E_h(u, v) = sum_faces a_face (u_{k+1} - u_k)(v_{k+1} - v_k) / dx.
    [[nodiscard]] double energy(const Vector& u, const Vector& v) const;

    [[nodiscard]] Vector restrict_active(const Vector& full) const;
    [[nodiscard]] Vector extend_active(const Vector& active) const;

private:
    SpatialGrid grid_;
    std::vector<double> faces_;
    SparseMatrix matrix_;
};

[[nodiscard]] DivergenceOperator discretize_operator(const CoefficientField& field, const SpatialGrid& grid);

/// Crank-Nicolson realization of the semigroup exp(tau L_h) with sub-steps no
/// longer than dt_max. Factorizations are cached per sub-step length and are
/// safe to share across threads.
class Semigroup {
public:
    explicit Semigroup(DivergenceOperator op, double dt_max = 0.01);
    Semigroup(const Semigroup&) = delete;
    Semigroup& operator=(const Semigroup&) = delete;

    [[nodiscard]] const DivergenceOperator& op() const { return op_; }
    [[nodiscard]] double dt_max() const { return dt_max_; }
    /// Full node vector in and out.
    [[nodiscard]] Vector apply(const Vector& v, double tau) const;
    /// Makes sure the factorization for `tau` exists (call before parallel regions).
    void prepare(double tau) const;

private:
    struct Step {
        Eigen::SimplicialLDLT<SparseMatrix> solver;
        SparseMatrix rhs;
    };
    const Step& step_for(double h) const;
    [[nodiscard]] std::size_t substeps(double tau) const;

    DivergenceOperator op_;
    double dt_max_;
    mutable std::mutex mutex_;
    mutable std::map<double, std::unique_ptr<Step>> cache_;
};

[[nodiscard]] GridFunction apply_semigroup(const DivergenceOperator& op, const GridFunction& v, double tau,
                                           double dt_max = 0.01);

/// Quasilinear problem data on a fixed space-time resolution.
class GspdeProblem {
public:
    GspdeProblem(SpatialGrid sgrid, TimeGrid tgrid, CoefficientField field, ScenarioSet scenarios,
                 SpatialFunction terminal, ReactionTerm f, std::vector<ReactionTerm> g, double c_bar,
                 double alpha_bar);

    [[nodiscard]] const SpatialGrid& sgrid() const { return sgrid_; }
    [[nodiscard]] const TimeGrid& tgrid() const { return tgrid_; }
    [[nodiscard]] const CoefficientField& field() const { return field_; }
    [[nodiscard]] const ScenarioSet& scenarios() const { return scenarios_; }
    [[nodiscard]] const SpatialFunction& terminal_function() const { return terminal_; }
    [[nodiscard]] const Vector& terminal() const { return psi_; }
    [[nodiscard]] const ReactionTerm& f() const { return f_; }
    [[nodiscard]] const std::vector<ReactionTerm>& g() const { return g_; }
    [[nodiscard]] double c_bar() const { return c_bar_; }
    [[nodiscard]] double alpha_bar() const { return alpha_bar_; }
    [[nodiscard]] double lambda() const { return field_.lambda(); }
    [[nodiscard]] double sigma_bar() const { return scenarios_.sigma_bar(); }
    /// 2 lambda - alpha_bar sigma_bar^2
    [[nodiscard]] double contraction_margin() const;

    /// Evaluates f and g at time t on the solution slice u (gradient by central differences).
    void drivers(double t, const Vector& u, Vector& f_out, Matrix& g_out) const;
    [[nodiscard]] bool has_noise() const;

private:
    SpatialGrid sgrid_;
    TimeGrid tgrid_;
    CoefficientField field_;
    ScenarioSet scenarios_;
    SpatialFunction terminal_;
    Vector psi_;
    ReactionTerm f_;
    std::vector<ReactionTerm> g_;
    double c_bar_;
    double alpha_bar_;
};

/// Constants of the contraction argument for the mild fixed point.
struct PicardConfig {
    enum class InitialGuess { kZero, kHomogeneous };

    double eps = 0.4;
    double gamma = 0.0;
    double delta = 0.0;
    double kappa = 0.0;
    std::size_t max_iter = 50;
    double tol_rel = 1e-6;
    InitialGuess init = InitialGuess::kZero;
    double dt_max = 0.01;

    /// kappa = (C eps + s^2 a) / (2 lambda), delta = C (s^2 + eps) / (C eps + s^2 a) (1 when C = 0),
    /// gamma = 2 lambda delta + 1/eps. Without eps, picks the largest eps with
    /// kappa <= min(kappa_0 + 0.1, (1 + kappa_0) / 2), where kappa_0 = s^2 a / (2 lambda).
    static PicardConfig from_constants(double c_bar, double alpha_bar, double sigma_bar, double lambda,
                                       std::optional<double> eps = std::nullopt);
    static PicardConfig for_problem(const GspdeProblem& problem, std::optional<double> eps = std::nullopt);
    void validate(double lambda) const;
};

/// Solution field for one scenario bundle: per B-path an m x (N+1) matrix, column i = time t_i.
struct RandomField {
    long scenario_id = -1;
    std::size_t bundle_index = 0;
    std::uint64_t seed = 0;
    SpatialGrid sgrid{1, 1.0, 3, Boundary::kDirichlet0};
    TimeGrid tgrid{1.0, 1};
    std::vector<Matrix> paths;

    [[nodiscard]] const Matrix& path(std::size_t p) const { return paths.at(p); }
};

struct SolverReport {
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> increments;  // ||u^{n+1} - u^n||^2_{gamma,delta}
    std::vector<double> norms;       // ||u^{n+1}||^2_{gamma,delta}
    std::vector<double> ratios;      // increments[n] / increments[n-1]
    double kappa = 0.0;
    double eps = 0.0;
    double gamma = 0.0;
    double delta = 0.0;
    double sigma_bar = 0.0;
    double lambda = 0.0;
    double contraction_margin = 0.0;
};

struct GspdeSolution {
    std::vector<RandomField> fields;  // one per scenario bundle
    SolverReport report;
};

/// P_{T-t_i} Psi on the time grid, via repeated application of the one-step map.
[[nodiscard]] Matrix homogeneous_solution(const GspdeProblem& problem, const Semigroup& semigroup);

/// Mild-form Picard iteration run jointly over all scenario bundles.
/// Throws ConvergenceError when max_iter is exhausted.
[[nodiscard]] GspdeSolution solve_gspde_picard(const GspdeProblem& problem, const PicardConfig& cfg,
                                               const std::vector<GBMPaths>& gbm);

/// Upper expectation over bundles of the path mean of the trapezoidal
/// approximation of int_0^T e^{gamma s} (delta ||u_s||^2 + ||grad u_s||^2) ds (not square-rooted).
[[nodiscard]] double hnorm_gamma_delta(const std::vector<RandomField>& u, double gamma, double delta);
/// Same norm applied to u - v.
[[nodiscard]] double hnorm_gamma_delta(const std::vector<RandomField>& u, const std::vector<RandomField>& v,
                                       double gamma, double delta);

/// Space-time test function psi(t) chi(x).
struct TestFunction {
    std::function<double(double)> psi;
    SpatialFunction chi;
};

/// Weak-form residual at t = 0 for each B-path of the bundle.
[[nodiscard]] std::vector<double> weak_residual(const RandomField& u, const TestFunction& phi,
                                                const GspdeProblem& problem, const GBMPaths& gbm);

/// Scalar function with first and second derivative.
struct PhiFunction {
    std::function<double(double)> phi, dphi, ddphi;
    static PhiFunction square();
    static PhiFunction identity();
};

/// Residual at t = 0 of the discretized energy identity, for each B-path.
[[nodiscard]] std::vector<double> energy_identity_residual(const RandomField& u, const GspdeProblem& problem,
                                                           const GBMPaths& gbm,
                                                           const PhiFunction& phi = PhiFunction::square());

/// CSV dump: path_id, scenario_id, t, x_index, u.
void write_field_csv(std::ostream& os, const std::vector<RandomField>& fields, std::size_t max_paths,
                     std::size_t time_stride, std::size_t space_stride);

}  // namespace gspde
