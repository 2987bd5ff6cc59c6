#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gspde {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error taxonomy. The CLI maps UsageError to exit code 2 and NumericalError to 3.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a structural contraction property (e.g. alpha_bar * sigma_bar^2 < 2 lambda)
// does not hold for a problem definition.
class ContractionError : public UsageError {
public:
    using UsageError::UsageError;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotPsdError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// Picard loop ran out of iterations; carries the measured contraction ratios.
class ConvergenceError : public NumericalError {
public:
    ConvergenceError(const std::string& what, std::vector<double> ratios)
        : NumericalError(what), ratios_(std::move(ratios)) {}
    [[nodiscard]] const std::vector<double>& ratios() const { return ratios_; }

private:
    std::vector<double> ratios_;
};

/// Uniform partition t_i = i * T / N of [0, T].
class TimeGrid {
public:
    TimeGrid(double horizon, std::size_t steps);

    [[nodiscard]] double horizon() const { return horizon_; }
    [[nodiscard]] std::size_t steps() const { return steps_; }
    [[nodiscard]] double dt() const { return horizon_ / static_cast<double>(steps_); }
    [[nodiscard]] double time(std::size_t i) const {
        return horizon_ * static_cast<double>(i) / static_cast<double>(steps_);
    }
    /// Same horizon, `factor` times more steps.
    [[nodiscard]] TimeGrid refined(std::size_t factor = 2) const {
        return TimeGrid(horizon_, steps_ * factor);
    }

    bool operator==(const TimeGrid&) const = default;

private:
    double horizon_;
    std::size_t steps_;
};

// ---------------------------------------------------------------------------
// Seeding. Every path owns an independent engine whose seed is a hash of
// (global seed, stream tag, path index), so results do not depend on the
// number of worker threads.
// ---------------------------------------------------------------------------

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum class Stream : std::uint64_t {
    kDriver = 1,
    kHunt = 2,
    kSchedule = 3,
    kTest = 4,
};

[[nodiscard]] constexpr std::uint64_t stream_seed(std::uint64_t seed, Stream tag, std::uint64_t index) {
    return splitmix64(splitmix64(seed ^ (static_cast<std::uint64_t>(tag) << 56)) + index);
}

using Engine = std::mt19937_64;

// ---------------------------------------------------------------------------
// Threading
// ---------------------------------------------------------------------------

/// Caps the number of workers used by parallel_for (0 = hardware concurrency).
void set_max_threads(unsigned n);
[[nodiscard]] unsigned max_threads();

/// Runs body(i) for i in [0, n) over contiguous chunks. Each index is visited
/// exactly once; callers write into pre-sized per-index slots and reduce
/// afterwards in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Dense per-path array laid out as [path][slot][component].
struct PathProcess {
    std::size_t n_paths = 0;
    std::size_t n_slots = 0;
    std::size_t width = 0;
    std::vector<double> data;

    PathProcess() = default;
    PathProcess(std::size_t paths, std::size_t slots, std::size_t w, double fill = 0.0)
        : n_paths(paths), n_slots(slots), width(w), data(paths * slots * w, fill) {}

    [[nodiscard]] double& operator()(std::size_t p, std::size_t s, std::size_t c) {
        return data[(p * n_slots + s) * width + c];
    }
    [[nodiscard]] double operator()(std::size_t p, std::size_t s, std::size_t c) const {
        return data[(p * n_slots + s) * width + c];
    }
    [[nodiscard]] double* row(std::size_t p, std::size_t s) { return data.data() + (p * n_slots + s) * width; }
    [[nodiscard]] const double* row(std::size_t p, std::size_t s) const {
        return data.data() + (p * n_slots + s) * width;
    }
    bool operator==(const PathProcess&) const = default;
};

// ---------------------------------------------------------------------------
// Small statistics helpers
// ---------------------------------------------------------------------------

struct SampleStats {
    double mean = 0.0;
    double variance = 0.0;  // unbiased
    double std_error = 0.0;
    std::size_t count = 0;
};

[[nodiscard]] SampleStats sample_stats(const std::vector<double>& xs);

}  // namespace gspde
