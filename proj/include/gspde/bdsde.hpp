#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gspde/common.hpp"
#include "gspde/gbm.hpp"
#include "gspde/hunt.hpp"
#include "gspde/presets.hpp"
#include "gspde/scenario.hpp"

namespace gspde {

struct RegressionBasis {
    enum class Kind {
        kPolynomial,  // tensor Legendre polynomials of total degree <= degree on features rescaled to [-1, 1]
        kMonomial,    // raw powers of the features, total degree <= degree
        kBins,        // constant plus indicators of equal-width bins (d = 1)
    };
    Kind kind = Kind::kPolynomial;
    std::size_t degree = 4;
    std::size_t bins = 16;
    double ridge = 0.0;

    [[nodiscard]] std::size_t n_functions(std::size_t dim) const;
    static Kind kind_from_string(const std::string& name);
};

/// Least-squares fit of targets on basis functions of fixed features. The
/// design factorization is computed once and reused for every target vector.
class Regressor {
public:
    /// `features` is n x d. Requires n >= 10 * (number of basis functions).
    Regressor(const Matrix& features, const RegressionBasis& basis);

    [[nodiscard]] std::size_t n_samples() const { return static_cast<std::size_t>(design_.rows()); }
    [[nodiscard]] std::size_t n_functions() const { return static_cast<std::size_t>(design_.cols()); }
    [[nodiscard]] const Matrix& design() const { return design_; }

    [[nodiscard]] Vector fit(const Vector& targets) const;
    /// Fitted values at the training features.
    [[nodiscard]] Vector fitted(const Vector& coefficients) const { return design_ * coefficients; }
    [[nodiscard]] double predict(const Vector& coefficients, const Vector& x) const;
    /// Classical OLS standard errors of the coefficients.
    [[nodiscard]] Vector std_errors(const Vector& targets, const Vector& coefficients) const;

private:
    [[nodiscard]] Vector basis_row(const Vector& x) const;

    RegressionBasis basis_;
    std::size_t dim_ = 0;
    std::size_t degree_ = 0;
    Vector center_, scale_;
    double bin_lo_ = 0.0, bin_width_ = 1.0;
    std::vector<std::vector<std::size_t>> exponents_;
    Matrix design_;
    Eigen::HouseholderQR<Matrix> qr_;
    std::size_t augmented_rows_ = 0;
};

/// Predictor plus coefficients of a single regression.
struct RegressionFit {
    Vector coefficients;
    Vector fitted;
};

[[nodiscard]] RegressionFit regress_conditional(const Vector& targets, const Matrix& features,
                                                const RegressionBasis& basis);

/// Z_i = (2 dt)^{-1} a(X_i)^{-1} E[next . dM_i | X_i] at the training samples, n x d.
[[nodiscard]] Matrix extract_z(const Vector& next_values, const Matrix& dm, const Matrix& features,
                               const CoefficientField& field, double dt, const Regressor& regressor);

/// Backward doubly stochastic problem with drivers f(t, x, y, w), g(t, x, y, w), w = Z sigma(X).
class BdsdeProblem {
public:
    BdsdeProblem(TimeGrid tgrid, CoefficientField field, ScenarioSet scenarios, SpatialFunction terminal,
                 ReactionTerm f, std::vector<ReactionTerm> g, double k, double alpha);

    [[nodiscard]] const TimeGrid& tgrid() const { return tgrid_; }
    [[nodiscard]] const CoefficientField& field() const { return field_; }
    [[nodiscard]] const ScenarioSet& scenarios() const { return scenarios_; }
    [[nodiscard]] const SpatialFunction& terminal() const { return terminal_; }
    [[nodiscard]] const ReactionTerm& f() const { return f_; }
    [[nodiscard]] const std::vector<ReactionTerm>& g() const { return g_; }
    [[nodiscard]] double k() const { return k_; }
    [[nodiscard]] double alpha() const { return alpha_; }
    /// 2 lambda - alpha Lambda sigma_bar^2
    [[nodiscard]] double contraction_margin() const;

private:
    TimeGrid tgrid_;
    CoefficientField field_;
    ScenarioSet scenarios_;
    SpatialFunction terminal_;
    ReactionTerm f_;
    std::vector<ReactionTerm> g_;
    double k_;
    double alpha_;
};

/// Constants of the contraction argument for the outer Picard loop.
struct BdsdeConstants {
    double eps = 0.4;
    double bound = 0.0;  // (K eps + alpha Lambda sigma_bar^2) / (2 lambda)
    double delta = 0.0;  // K (eps + sigma_bar^2) / (K eps + alpha Lambda sigma_bar^2), 1 when K = 0
    double beta = 0.0;   // 2 lambda delta + 1/eps

    static BdsdeConstants from_constants(double k, double alpha, double big_lambda, double sigma_bar, double lambda,
                                         std::optional<double> eps = std::nullopt);
    static BdsdeConstants for_problem(const BdsdeProblem& problem, std::optional<double> eps = std::nullopt);
};

/// Y and Z for one (scenario bundle, B-path) block over the shared X-ensemble.
struct BdsdeBlock {
    std::size_t bundle = 0;
    long scenario_id = -1;
    std::size_t b_path = 0;
    Matrix y;               // n_x x (N+1)
    std::vector<Matrix> z;  // d matrices n_x x (N+1); column N repeats column N-1
};

struct BdsdePicardReport {
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> increments;  // ||(dY, dZ)||_delta
    std::vector<double> norms;
    std::vector<double> ratios;  // increments[n] / increments[n-1]
    BdsdeConstants constants;
    double contraction_margin = 0.0;
};

struct BdsdeSolution {
    TimeGrid tgrid{1.0, 1};
    std::size_t n_bundles = 0;
    std::size_t n_b_paths = 0;
    std::size_t n_x = 0;
    std::size_t dim = 0;
    std::uint64_t hunt_seed = 0;
    std::vector<std::uint64_t> gbm_seeds;
    std::vector<long> scenario_ids;
    std::vector<BdsdeBlock> blocks;  // index bundle * n_b_paths + b_path
    BdsdePicardReport report;

    [[nodiscard]] const BdsdeBlock& block(std::size_t bundle, std::size_t b_path) const {
        return blocks.at(bundle * n_b_paths + b_path);
    }
};

/// Shared simulation inputs: one X-ensemble reused for every block, and one
/// G-Brownian bundle per scenario schedule.
struct BdsdeEnsemble {
    const HuntPaths* hunt = nullptr;
    const std::vector<GBMPaths>* gbm = nullptr;
};

/// Drivers with no (y, z) dependence.
struct LinearDrivers {
    ReactionTerm f;
    std::vector<ReactionTerm> g;
};

[[nodiscard]] BdsdeSolution solve_linear_bdsde(const LinearDrivers& drivers, const SpatialFunction& terminal,
                                               const CoefficientField& field, const BdsdeEnsemble& ensemble,
                                               const RegressionBasis& basis);

struct BdsdePicardOptions {
    std::size_t max_iter = 30;
    double tol = 1e-6;  // relative to the norm of the iterate
    std::optional<double> eps;
    bool use_weights = false;
    /// One inner sweep per step with f evaluated at (t_i, Y_{t_i}) instead of the explicit right endpoint.
    bool implicit_y = false;
};

[[nodiscard]] BdsdeSolution solve_gbdsde_picard(const BdsdeProblem& problem, const BdsdeEnsemble& ensemble,
                                                const RegressionBasis& basis,
                                                const BdsdePicardOptions& options = {});

/// sup over bundles of sqrt(delta E int e^{beta s}|Y|^2 ds + E int e^{beta s}|Z|^2 ds), trapezoid in time.
/// With `weights`, expectations over the X-ensemble use (1/n) sum w_k (.) instead of the plain mean.
[[nodiscard]] double delta_norm(const BdsdeSolution& sol, double beta, double delta,
                                const std::vector<double>* weights = nullptr);
/// Same norm applied to a - b.
[[nodiscard]] double delta_norm(const BdsdeSolution& a, const BdsdeSolution& b, double beta, double delta,
                                const std::vector<double>* weights = nullptr);

/// CSV dump: scenario_id, b_path_id, x_path_id, t, Y, Z_1..Z_d.
void write_bdsde_csv(std::ostream& os, const BdsdeSolution& sol, std::size_t max_b_paths, std::size_t max_x_paths,
                     std::size_t time_stride);

}  // namespace gspde
