#pragma once

#include <functional>
#include <span>
#include <vector>

namespace nelastic {

struct GaussRule {
    std::vector<double> nodes;    // on [-1, 1]
    std::vector<double> weights;
};

/// Gauss-Legendre rule with n points (Newton iteration on P_n).
[[nodiscard]] GaussRule gauss_legendre(int n);

/// Cached rules used by the numerics.
[[nodiscard]] const GaussRule& gauss_rule_5();
[[nodiscard]] const GaussRule& gauss_rule_20();

struct QuadratureResult {
    double value = 0.0;
    double error = 0.0;   // estimated absolute error
    bool converged = false;
    int max_depth_reached = 0;
};

/// Adaptive Gauss-Legendre: a 20-point panel is accepted when it agrees with
/// the sum of its two halves to `rel_tol` (relative to the running total, with
/// `abs_floor` as an absolute floor). Panels are bisected at most `max_depth`
/// times.
[[nodiscard]] QuadratureResult integrate_adaptive(const std::function<double(double)>& f,
                                                  double a, double b, double rel_tol = 1e-12,
                                                  int max_depth = 20, double abs_floor = 1e-300);

/// Fixed-rule integral of `f` over [a, b].
template <class F>
[[nodiscard]] double integrate_fixed(const GaussRule& rule, F&& f, double a, double b) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        sum += rule.weights[i] * f(mid + half * rule.nodes[i]);
    }
    return sum * half;
}

/// Trapezoid rule on uniform spacing `h`.
[[nodiscard]] double trapezoid(std::span<const double> values, double h);

}  // namespace nelastic
