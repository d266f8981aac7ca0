#pragma once

#include <cmath>
#include <cstdint>

namespace nelastic {

inline constexpr double kZ95 = 1.959963984540054;

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Wilson score interval for k successes in n trials.
[[nodiscard]] inline Interval wilson(std::uint64_t k, std::uint64_t n, double z = kZ95) {
    if (n == 0) return {0.0, 1.0};
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(k) / nn;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double centre = (p + z2 / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Running sums for a mean and its standard error (merge is order-sensitive
/// only through floating-point rounding; callers merge in a fixed order).
struct MeanAccumulator {
    std::uint64_t n = 0;
    double sum = 0.0;
    double sum_sq = 0.0;

    void add(double x) {
        ++n;
        sum += x;
        sum_sq += x * x;
    }
    void merge(const MeanAccumulator& o) {
        n += o.n;
        sum += o.sum;
        sum_sq += o.sum_sq;
    }
    [[nodiscard]] double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
    [[nodiscard]] double variance() const {
        if (n < 2) return 0.0;
        const double m = mean();
        return std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1));
    }
    [[nodiscard]] double standard_error() const {
        return n ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
    }
};

}  // namespace nelastic
