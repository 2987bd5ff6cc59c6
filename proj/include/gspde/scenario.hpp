#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gspde/common.hpp"

namespace gspde {

/// Finite family of l x l volatility loadings standing in for the uncertainty set.
class ScenarioSet {
public:
    ScenarioSet(std::size_t l, std::vector<Matrix> matrices);

    [[nodiscard]] std::size_t dim() const { return l_; }
    [[nodiscard]] std::size_t size() const { return matrices_.size(); }
    [[nodiscard]] const Matrix& matrix(std::size_t k) const { return matrices_.at(k); }
    [[nodiscard]] const std::vector<Matrix>& matrices() const { return matrices_; }
    /// beta_k beta_k^T
    [[nodiscard]] const Matrix& covariance(std::size_t k) const { return covariances_.at(k); }
    [[nodiscard]] double sigma_bar() const { return sigma_bar_; }

private:
    std::size_t l_;
    std::vector<Matrix> matrices_;
    std::vector<Matrix> covariances_;
    double sigma_bar_ = 0.0;
};

/// Piecewise-constant control: one scenario index per time step.
struct ControlSchedule {
    std::vector<std::size_t> scenario_index_per_step;

    [[nodiscard]] std::size_t steps() const { return scenario_index_per_step.size(); }
    [[nodiscard]] std::size_t at(std::size_t i) const { return scenario_index_per_step.at(i); }
    /// Throws UsageError unless the schedule has `steps` entries, all valid for `set`.
    void validate(const ScenarioSet& set, std::size_t steps) const;
    /// Index k if the schedule is constant, otherwise -1.
    [[nodiscard]] long constant_index() const;

    static ControlSchedule constant(std::size_t k, std::size_t steps);
};

/// G(A) = max_k 1/2 tr(beta_k beta_k^T A).
[[nodiscard]] double g_function(const Matrix& a, const ScenarioSet& set);

/// Square root of the largest eigenvalue of beta_k beta_k^T over k.
[[nodiscard]] double sigma_bar(const ScenarioSet& set);

/// Largest eigenvalue of a symmetric PSD matrix; tiny negative eigenvalues
/// (above -1e-12) are clamped to zero, anything below raises NotPsdError.
[[nodiscard]] double max_psd_eigenvalue(const Matrix& sym);

struct UpperExpectation {
    double value = 0.0;
    std::size_t argmax = 0;
    std::vector<double> means;
    std::vector<double> std_errors;

    [[nodiscard]] double std_error() const { return std_errors.at(argmax); }
};

/// Max over scenarios of the per-scenario sample mean. Ties resolve to the
/// lowest scenario index.
[[nodiscard]] UpperExpectation upper_expectation(const std::vector<std::vector<double>>& per_scenario_samples);

/// Max over scenarios of the empirical frequency of a 0/1 indicator.
[[nodiscard]] double capacity_estimate(const std::vector<std::vector<int>>& per_scenario_indicator_samples);

/// All constant schedules followed by `n_random` piecewise-constant schedules
/// with `pieces` segments each, drawn deterministically from `seed`.
[[nodiscard]] std::vector<ControlSchedule> enumerate_schedules(const ScenarioSet& set, std::size_t steps,
                                                               std::size_t n_random, std::size_t pieces,
                                                               std::uint64_t seed);

}  // namespace gspde
