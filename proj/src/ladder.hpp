#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "averaging.hpp"
#include "kernels.hpp"
#include "random.hpp"
#include "stats.hpp"
#include "topology.hpp"

namespace nelastic {

/// Walk S_1 = xi_1, S_2 = xi_1 + eta_1, S_3 = S_2 + xi_2, ...; tau = first m
/// with S_m > level.
struct WalkSpec {
    KickPair pair;
    double level = 50.0;  // n * lambda
};

struct ParityEstimate {
    std::uint64_t odd = 0;
    std::uint64_t total = 0;
    double p_odd = 0.0;
    double p_even = 0.0;
    double standard_error = 0.0;
    Interval ci;  // Wilson 95%
};

[[nodiscard]] ParityEstimate walk_parity_mc(const WalkSpec& spec, std::uint64_t replicas, const Stream& stream);

struct LadderStats {
    std::uint64_t epochs = 0;
    double mean_a = 0.0;       // E T_{N-1}
    double mean_b_pos = 0.0;   // E[b; b > 0]
    double se_b_pos = 0.0;
    double mean_c = 0.0;       // E T_N
    double se_c = 0.0;
    double mean_epoch_length = 0.0;  // E N
    double p = 0.0;
    double p_se = 0.0;         // delta method
    Interval ci;
};

/// Requires eta > 0 almost surely; throws Hypothesis otherwise.
[[nodiscard]] LadderStats ladder_stats_mc(const KickPair& pair, std::uint64_t epochs, const Stream& stream);

/// True when eta > 0 almost surely (the ladder and grid estimators apply).
[[nodiscard]] bool eta_positive(const KickPair& pair);

struct LadderGrid {
    double h = 0.0;             // lattice spacing
    std::int64_t origin = 0;    // index of x = 0 in the arrays below
    int n_max = 0;              // negative span in units of 2M
    std::vector<double> b_occupation;  // B: occupation of T_{n-1} + xi_n before the epoch
    std::vector<double> b_law;         // law of b = T_{N-1} + xi_N
    std::vector<double> c_law;         // E: law of c = T_N (zero for x < 0)
    std::vector<double> eta_mass;      // lattice masses of eta, offsets eta_lo..
    std::int64_t eta_lo = 0;
    double residual = 0.0;      // mass still at or below 0 when iteration stopped
    double escaped = 0.0;       // mass lost off the lower lattice end
    double total_mass = 0.0;    // sum of c_law
    int iterations = 0;
    double p = 0.0;

    [[nodiscard]] double x(std::size_t i) const {
        return (static_cast<double>(static_cast<std::int64_t>(i) - origin)) * h;
    }
};

/// Lattice dynamic programme for the ladder epoch. Requires densities for
/// both kicks and eta > 0; throws Numeric if mass conservation fails by
/// more than 1e-6.
[[nodiscard]] LadderGrid ladder_grid(const KickPair& pair, int grid_points);

/// Total-variation distance between c_law and B * eta restricted to (0, inf).
[[nodiscard]] double convolution_identity_error(const LadderGrid& grid);

struct GeneralParityStats {
    std::uint64_t ladder_points = 0;
    std::uint64_t nu0 = 0, nu1 = 0;
    std::uint64_t nu00 = 0, nu01 = 0, nu10 = 0, nu11 = 0;
    double mu0 = 0.0, mu1 = 0.0;
    double mu00 = 0.0, mu01 = 0.0, mu10 = 0.0, mu11 = 0.0;
    double e_gamma0 = 0.0;  // first ladder height, xi-first walk
    double e_gamma1 = 0.0;  // first ladder height, eta-first walk
    double se_gamma0 = 0.0;
    double se_gamma1 = 0.0;
    double value = 0.0;     // (mu11 Eg1 + mu01 Eg0) / (mu1 Eg1 + mu0 Eg0)
};

[[nodiscard]] GeneralParityStats general_parity(const KickPair& pair, std::uint64_t epochs, const Stream& stream);

enum class BranchMethod { Mc, Ladder, Grid };

[[nodiscard]] BranchMethod parse_branch_method(const std::string& name);
[[nodiscard]] const char* branch_method_name(BranchMethod m) noexcept;

struct BranchOptions {
    BranchMethod method = BranchMethod::Ladder;
    std::uint64_t budget = 1000000;  // runs (mc), epochs (ladder, general parity) or grid points
    double epsilon = 1e-3;           // mc only
    double start_offset = 0.0;       // mc: H0 - H_O; 0 picks 50 max(M,1) epsilon
};

struct BranchEstimate {
    int vertex = 0;
    BranchMethod method = BranchMethod::Ladder;
    std::string estimator;  // what actually ran: mc, ladder, grid or general-parity
    double p_left = 0.0;
    double p_right = 0.0;
    double standard_error = 0.0;
    Interval ci;
    bool open_regime = false;  // eta can be non-positive: no closed formula
    std::string warning;
    std::uint64_t budget = 0;
};

[[nodiscard]] BranchEstimate branching_probabilities(const WellGraph& graph, int vertex,
                                                     const BranchOptions& options, const Stream& stream);

}  // namespace nelastic
