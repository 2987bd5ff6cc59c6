#include "gspde/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace gspde {

double max_psd_eigenvalue(const Matrix& sym) {
    if (sym.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw NumericalError("symmetric eigensolve failed");
    }
    const Vector& ev = es.eigenvalues();
    if (ev.minCoeff() < -1e-12) {
        std::ostringstream os;
        os << "matrix is not positive semidefinite (min eigenvalue " << ev.minCoeff() << ")";
        throw NotPsdError(os.str());
    }
    return std::max(0.0, ev.maxCoeff());
}

ScenarioSet::ScenarioSet(std::size_t l, std::vector<Matrix> matrices) : l_(l), matrices_(std::move(matrices)) {
    if (l_ == 0) throw UsageError("ScenarioSet: driver dimension l must be >= 1");
    if (matrices_.empty()) throw UsageError("ScenarioSet: at least one scenario matrix is required");
    double s2 = 0.0;
    for (std::size_t k = 0; k < matrices_.size(); ++k) {
        const Matrix& b = matrices_[k];
        if (static_cast<std::size_t>(b.rows()) != l_ || static_cast<std::size_t>(b.cols()) != l_) {
            std::ostringstream os;
            os << "ScenarioSet: matrix " << k << " is " << b.rows() << "x" << b.cols() << ", expected " << l_ << "x"
               << l_;
            throw UsageError(os.str());
        }
        if (!b.allFinite()) {
            throw UsageError("ScenarioSet: matrix " + std::to_string(k) + " has non-finite entries");
        }
        Matrix c = b * b.transpose();
        c = 0.5 * (c + c.transpose());
        s2 = std::max(s2, max_psd_eigenvalue(c));
        covariances_.push_back(std::move(c));
    }
    sigma_bar_ = std::sqrt(s2);
}

void ControlSchedule::validate(const ScenarioSet& set, std::size_t steps) const {
    if (scenario_index_per_step.size() != steps) {
        std::ostringstream os;
        os << "ControlSchedule: length " << scenario_index_per_step.size() << " does not match " << steps
           << " time steps";
        throw UsageError(os.str());
    }
    for (std::size_t k : scenario_index_per_step) {
        if (k >= set.size()) {
            throw UsageError("ControlSchedule: scenario index " + std::to_string(k) + " out of range");
        }
    }
}

long ControlSchedule::constant_index() const {
    if (scenario_index_per_step.empty()) return -1;
    const std::size_t k = scenario_index_per_step.front();
    for (std::size_t v : scenario_index_per_step) {
        if (v != k) return -1;
    }
    return static_cast<long>(k);
}

ControlSchedule ControlSchedule::constant(std::size_t k, std::size_t steps) {
    return ControlSchedule{std::vector<std::size_t>(steps, k)};
}

double g_function(const Matrix& a, const ScenarioSet& set) {
    const auto l = static_cast<Eigen::Index>(set.dim());
    if (a.rows() != l || a.cols() != l) {
        throw UsageError("g_function: matrix dimension does not match the scenario set");
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < set.size(); ++k) {
        best = std::max(best, 0.5 * (set.covariance(k) * a).trace());
    }
    return best;
}

double sigma_bar(const ScenarioSet& set) { return set.sigma_bar(); }

UpperExpectation upper_expectation(const std::vector<std::vector<double>>& per_scenario_samples) {
    if (per_scenario_samples.empty()) {
        throw UsageError("upper_expectation: no scenarios supplied");
    }
    UpperExpectation out;
    out.means.reserve(per_scenario_samples.size());
    out.std_errors.reserve(per_scenario_samples.size());
    for (std::size_t k = 0; k < per_scenario_samples.size(); ++k) {
        if (per_scenario_samples[k].empty()) {
            throw UsageError("upper_expectation: scenario " + std::to_string(k) + " has no samples");
        }
        const SampleStats s = sample_stats(per_scenario_samples[k]);
        out.means.push_back(s.mean);
        out.std_errors.push_back(s.std_error);
    }
    out.argmax = static_cast<std::size_t>(std::max_element(out.means.begin(), out.means.end()) - out.means.begin());
    out.value = out.means[out.argmax];
    return out;
}

double capacity_estimate(const std::vector<std::vector<int>>& per_scenario_indicator_samples) {
    std::vector<std::vector<double>> as_double;
    as_double.reserve(per_scenario_indicator_samples.size());
    for (const auto& v : per_scenario_indicator_samples) {
        std::vector<double> d;
        d.reserve(v.size());
        for (int x : v) {
            if (x != 0 && x != 1) throw UsageError("capacity_estimate: indicator samples must be 0 or 1");
            d.push_back(static_cast<double>(x));
        }
        as_double.push_back(std::move(d));
    }
    return upper_expectation(as_double).value;
}

std::vector<ControlSchedule> enumerate_schedules(const ScenarioSet& set, std::size_t steps, std::size_t n_random,
                                                 std::size_t pieces, std::uint64_t seed) {
    if (steps == 0) throw UsageError("enumerate_schedules: steps must be >= 1");
    std::vector<ControlSchedule> out;
    for (std::size_t k = 0; k < set.size(); ++k) out.push_back(ControlSchedule::constant(k, steps));
    if (n_random == 0) return out;
    pieces = std::clamp<std::size_t>(pieces, 1, steps);
    for (std::size_t r = 0; r < n_random; ++r) {
        Engine rng(stream_seed(seed, Stream::kSchedule, r));
        std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
        ControlSchedule s;
        s.scenario_index_per_step.resize(steps);
        for (std::size_t p = 0; p < pieces; ++p) {
            const std::size_t k = pick(rng);
            const std::size_t lo = p * steps / pieces;
            const std::size_t hi = (p + 1) * steps / pieces;
            std::fill(s.scenario_index_per_step.begin() + static_cast<long>(lo),
                      s.scenario_index_per_step.begin() + static_cast<long>(hi), k);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace gspde
