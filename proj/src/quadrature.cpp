#include "quadrature.hpp"

#include <cmath>
#include <numbers>

namespace nelastic {

GaussRule gauss_legendre(int n) {
    GaussRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) {
                break;
            }
        }
        // Recompute derivative at the converged node.
        double p0 = 1.0;
        double p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) {
        rule.nodes[n / 2] = 0.0;
    }
    return rule;
}

const GaussRule& gauss_rule_5() {
    static const GaussRule rule = gauss_legendre(5);
    return rule;
}

const GaussRule& gauss_rule_20() {
    static const GaussRule rule = gauss_legendre(20);
    return rule;
}

namespace {

struct Panel {
    double a, b, whole;
    int depth;
};

}  // namespace

QuadratureResult integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                    double rel_tol, int max_depth, double abs_floor) {
    QuadratureResult result;
    if (a == b) {
        result.converged = true;
        return result;
    }
    const GaussRule& rule = gauss_rule_20();
    const double coarse_total = integrate_fixed(rule, f, a, b);

    std::vector<Panel> stack;
    stack.push_back({a, b, coarse_total, 0});
    result.converged = true;
    while (!stack.empty()) {
        const Panel p = stack.back();
        stack.pop_back();
        const double m = 0.5 * (p.a + p.b);
        const double left = integrate_fixed(rule, f, p.a, m);
        const double right = integrate_fixed(rule, f, m, p.b);
        const double refined = left + right;
        const double diff = std::abs(refined - p.whole);
        const double scale = std::max(std::abs(coarse_total), abs_floor);
        result.max_depth_reached = std::max(result.max_depth_reached, p.depth + 1);
        if (diff <= rel_tol * scale || diff <= abs_floor) {
            result.value += refined;
            result.error += diff;
            continue;
        }
        if (p.depth + 1 >= max_depth) {
            result.value += refined;
            result.error += diff;
            result.converged = false;
            continue;
        }
        stack.push_back({m, p.b, right, p.depth + 1});
        stack.push_back({p.a, m, left, p.depth + 1});
    }
    return result;
}

double trapezoid(std::span<const double> values, double h) {
    if (values.size() < 2) {
        return 0.0;
    }
    double sum = 0.5 * (values.front() + values.back());
    for (std::size_t i = 1; i + 1 < values.size(); ++i) {
        sum += values[i];
    }
    return sum * h;
}

}  // namespace nelastic
