#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "random.hpp"

namespace nelastic {

enum class Family { Uniform, TruncatedNormal, ScaledBeta, TwoPoint };

struct UniformParams {
    double a = 0.0;
    double b = 0.0;
};

struct TruncatedNormalParams {
    double mu = 0.0;
    double sigma = 1.0;
    double lo = -1.0;
    double hi = 1.0;
};

/// Beta(alpha, beta) rescaled onto [lo, hi]; shape parameters must be >= 1 so
/// the density is bounded.
struct ScaledBetaParams {
    double alpha = 1.0;
    double beta = 1.0;
    double lo = 0.0;
    double hi = 1.0;
};

/// x1 with probability p1, otherwise x2. Analytic use only.
struct TwoPointParams {
    double x1 = 0.0;
    double p1 = 0.5;
    double x2 = 0.0;
};

/// ln E exp(sX) and its first two derivatives in s.
struct LogMgf {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

/// A bounded kick distribution (one of four families).
class PerturbationSpec {
public:
    using Params = std::variant<UniformParams, TruncatedNormalParams, ScaledBetaParams, TwoPointParams>;

    PerturbationSpec() : PerturbationSpec(UniformParams{}) {}
    explicit PerturbationSpec(Params params, std::string text = {});

    static PerturbationSpec uniform(double a, double b);
    static PerturbationSpec truncated_normal(double mu, double sigma, double lo, double hi);
    static PerturbationSpec scaled_beta(double alpha, double beta, double lo, double hi);
    static PerturbationSpec two_point(double x1, double p1, double x2);

    /// Parses `uniform(a,b)`, `truncnormal(mu,sigma,lo,hi)`, `beta(alpha,beta,lo,hi)`
    /// or `twopoint(x1,p1,x2)`. Throws Config errors.
    static PerturbationSpec parse(std::string_view text);

    [[nodiscard]] Family family() const noexcept;
    [[nodiscard]] const Params& params() const noexcept { return params_; }
    /// The distribution as written in the config (or a canonical rendering).
    [[nodiscard]] const std::string& text() const noexcept { return text_; }

    [[nodiscard]] double lower() const noexcept;  // essential infimum
    [[nodiscard]] double upper() const noexcept;  // essential supremum
    /// M: all mass lies in [-M, M].
    [[nodiscard]] double bound() const noexcept;

    /// True for families the simulator accepts (everything except two-point).
    [[nodiscard]] bool samplable() const noexcept;
    /// True when a (bounded) density exists: excludes two-point and uniform(a,a).
    [[nodiscard]] bool has_density() const noexcept;

    [[nodiscard]] double atom_at_lower() const noexcept;
    [[nodiscard]] double atom_at_upper() const noexcept;

    [[nodiscard]] double mean() const;
    [[nodiscard]] double variance() const;
    [[nodiscard]] double density(double x) const;
    [[nodiscard]] double cdf(double x) const;

    /// One uniform draw per call.
    [[nodiscard]] double sample(Stream& stream) const;
    /// Inverse-CDF transform of u in (0, 1); same path as sample().
    [[nodiscard]] double quantile(double u) const;

    [[nodiscard]] LogMgf log_mgf(double s) const;
    /// ln E[exp(sX); X < 0]; -inf when P{X < 0} = 0.
    [[nodiscard]] double log_mgf_negative_part(double s) const;

private:
    Params params_;
    std::string text_;
};

struct KickPair {
    PerturbationSpec xi;   // left wall
    PerturbationSpec eta;  // right wall

    [[nodiscard]] double mean_sum() const { return xi.mean() + eta.mean(); }
    [[nodiscard]] double bound() const;
    [[nodiscard]] bool samplable() const { return xi.samplable() && eta.samplable(); }
};

/// Throws Config if E(xi + eta) <= 0.
void validate_kick_pair(const KickPair& pair);

/// K0(beta) = ln E exp(-beta (xi + eta)).
[[nodiscard]] double cumulant(const KickPair& pair, double beta);

struct CumulantDerivatives {
    double d1 = 0.0;
    double d2 = 0.0;
};
[[nodiscard]] CumulantDerivatives cumulant_derivatives(const KickPair& pair, double beta);
/// Value and both derivatives in one evaluation.
[[nodiscard]] LogMgf cumulant_all(const KickPair& pair, double beta);

/// A density sampled on the uniform grid x_i = -M + i h, h = 2M / (n - 1).
///
/// `density` is the pointwise density. `mass` holds the exact probability of
/// each node's dual cell (half cells at the ends), so it sums to 1;
/// `cell_density` = mass / trapezoid weight integrates to 1 under the
/// trapezoid rule.
struct DensityGrid {
    double x0 = 0.0;
    double h = 0.0;
    std::vector<double> x;
    std::vector<double> density;
    std::vector<double> mass;
    std::vector<double> cell_density;
};

[[nodiscard]] DensityGrid density_grid(const PerturbationSpec& spec, int n_points);

}  // namespace nelastic
