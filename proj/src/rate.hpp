#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kernels.hpp"
#include "microsim.hpp"
#include "random.hpp"
#include "stats.hpp"
#include "topology.hpp"

namespace nelastic {

enum class HamiltonianFlavor { Interior, LeafFloor };

struct EdgeHamiltonian {
    int edge = 0;
    double width = 1.0;
    KickPair pair;
    HamiltonianFlavor flavor = HamiltonianFlavor::Interior;
    double floor_energy = 0.0;  // LeafFloor only
};

[[nodiscard]] EdgeHamiltonian edge_hamiltonian(const WellGraph& graph, int edge,
                                               HamiltonianFlavor flavor = HamiltonianFlavor::Interior);

/// sqrt(2h) / (2D): the factor in front of the cumulant.
[[nodiscard]] double hamiltonian_scale(const EdgeHamiltonian& eh, double h);

/// H(h, beta). The leaf-floor flavour ignores h and evaluates at its floor.
[[nodiscard]] double hamiltonian(const EdgeHamiltonian& eh, double h, double beta);
[[nodiscard]] double hamiltonian_dbeta(const EdgeHamiltonian& eh, double h, double beta);

/// Range of zeta = -(xi + eta): (ess inf, ess sup).
[[nodiscard]] std::pair<double, double> zeta_range(const KickPair& pair);

struct LegendreResult {
    double value = 0.0;    // L(h, alpha), +inf outside the finite range
    double beta = 0.0;     // adjoint; +-inf at or beyond the range ends
    bool finite = true;
    int iterations = 0;
};

[[nodiscard]] LegendreResult legendre(const EdgeHamiltonian& eh, double h, double alpha);

/// Root of K0'(beta) = target (target strictly inside the zeta range).
[[nodiscard]] double cumulant_slope_root(const KickPair& pair, double target, int* iterations = nullptr);

/// Action of a path: sum of the time integrals of L along each segment.
[[nodiscard]] double action(const WellGraph& graph, const GraphPath& path);

/// Action of one monotone linear segment of duration tau from h0 to h1.
[[nodiscard]] double segment_action(const EdgeHamiltonian& eh, double h0, double h1, double tau);

/// The unique beta* > 0 with K0(beta*) = 0; Hypothesis error if xi + eta >= 0 a.s.
[[nodiscard]] double uphill_root(const KickPair& pair);

[[nodiscard]] double adjacent_quasipotential(const WellGraph& graph, int from, int to);

struct PathMinimum {
    double value = 0.0;
    int segments = 0;
    std::vector<double> energies;   // breakpoints, uniform in sqrt(h)
    std::vector<double> durations;  // per segment
    double total_time = 0.0;
    bool converged = true;
};

/// Minimises the action over monotone piecewise-linear paths from h_a up to
/// h_b with breakpoints uniform in sqrt(h). Each segment's duration is found
/// by a log-spaced scan with `scan_points` nodes followed by golden section.
[[nodiscard]] PathMinimum minimize_path(const EdgeHamiltonian& eh, double h_a, double h_b, int segments,
                                        int scan_points = 64);

struct RateEntry {
    double value = 0.0;
    bool user_supplied = false;
};

/// V on adjacent vertex pairs, keyed (from, to).
struct RateTable {
    int vertex_count = 0;
    std::map<std::pair<int, int>, RateEntry> entries;

    [[nodiscard]] double at(int from, int to) const;
};

[[nodiscard]] RateTable compute_rate_table(const WellGraph& graph);

/// Shortest-path closure of the adjacent V's; result[i-1][j-1] = V(i, j).
[[nodiscard]] std::vector<std::vector<double>> pairwise_quasipotential(const RateTable& table);

/// Exponentially tilted kicks, dP^/dP = exp(beta zeta - K0(beta)) with
/// zeta = -(xi + eta), sampled per side by rejection.
class TiltedSampler {
public:
    TiltedSampler(const KickPair& pair, double beta);

    [[nodiscard]] double beta() const noexcept { return beta_; }
    [[nodiscard]] double efficiency(Side side) const noexcept { return efficiency_[static_cast<int>(side)]; }

    double sample(Side side, Stream& stream) const;
    /// -(xi + eta) under the tilted law.
    double sample_zeta(Stream& stream) const;
    /// ln dP/dP^ for one kick x on `side`.
    [[nodiscard]] double log_likelihood_ratio(Side side, double x) const;

private:
    const PerturbationSpec& spec(Side side) const { return side == Side::Left ? pair_.xi : pair_.eta; }

    KickPair pair_;
    double beta_ = 0.0;
    double log_mgf_[2] = {0.0, 0.0};   // ln E exp(-beta X) per side
    double extreme_[2] = {0.0, 0.0};   // point where exp(-beta x) peaks
    double efficiency_[2] = {1.0, 1.0};
};

enum class RareMethod { Naive, Tilted };

struct RareEventResult {
    RareMethod method = RareMethod::Naive;
    std::uint64_t budget = 0;
    std::uint64_t hits = 0;
    double estimate = 0.0;
    double standard_error = 0.0;
    Interval ci;
    bool upper_bound_only = false;  // naive method with zero hits
    double exponent = 0.0;          // -epsilon ln(estimate); +inf when estimate is 0
    double beta = 0.0;              // tilt used
};

struct RareEventQuery {
    int edge = 0;
    double h0 = 0.0;
    double delta_h = 0.0;
    double horizon = 1.0;
    double epsilon = 0.05;
    RareMethod method = RareMethod::Tilted;
    std::uint64_t budget = 10000;
};

[[nodiscard]] RareEventResult rare_event_probability(const WellGraph& graph, const RareEventQuery& query,
                                                     const Stream& stream);

}  // namespace nelastic
