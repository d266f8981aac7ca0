#include "ladder.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "error.hpp"
#include "microsim.hpp"
#include "parallel.hpp"

namespace nelastic {

namespace {

constexpr std::uint64_t kChunk = 8192;

struct CountPartial {
    std::uint64_t odd = 0;
    std::uint64_t total = 0;
    void merge(const CountPartial& o) {
        odd += o.odd;
        total += o.total;
    }
};

ParityEstimate finish_parity(const CountPartial& c) {
    ParityEstimate e;
    e.odd = c.odd;
    e.total = c.total;
    if (c.total > 0) {
        e.p_odd = static_cast<double>(c.odd) / static_cast<double>(c.total);
        e.p_even = static_cast<double>(c.total - c.odd) / static_cast<double>(c.total);
        e.standard_error = std::sqrt(e.p_odd * e.p_even / static_cast<double>(c.total));
    }
    e.ci = wilson(c.odd, c.total);
    return e;
}

// Lattice masses of a distribution on cells [(k - 1/2) h, (k + 1/2) h).
struct Line {
    std::int64_t lo = 0;
    std::vector<double> v;
    [[nodiscard]] std::int64_t hi() const { return lo + static_cast<std::int64_t>(v.size()) - 1; }
    [[nodiscard]] double at(std::int64_t k) const {
        return (k < lo || k > hi()) ? 0.0 : v[static_cast<std::size_t>(k - lo)];
    }
};

Line lattice(const PerturbationSpec& spec, double h) {
    Line l;
    const auto k0 = static_cast<std::int64_t>(std::floor(spec.lower() / h + 0.5)) - 1;
    const auto k1 = static_cast<std::int64_t>(std::ceil(spec.upper() / h - 0.5)) + 1;
    l.lo = k0;
    l.v.resize(static_cast<std::size_t>(k1 - k0 + 1));
    for (std::int64_t k = k0; k <= k1; ++k) {
        const double a = (static_cast<double>(k) - 0.5) * h;
        const double b = (static_cast<double>(k) + 0.5) * h;
        l.v[static_cast<std::size_t>(k - k0)] = std::max(0.0, spec.cdf(b) - spec.cdf(a));
    }
    while (!l.v.empty() && l.v.back() == 0.0) l.v.pop_back();
    std::size_t drop = 0;
    while (drop < l.v.size() && l.v[drop] == 0.0) ++drop;
    l.v.erase(l.v.begin(), l.v.begin() + static_cast<std::ptrdiff_t>(drop));
    l.lo += static_cast<std::int64_t>(drop);
    return l;
}

Line convolve(const Line& a, const Line& b) {
    Line out;
    out.lo = a.lo + b.lo;
    out.v.assign(a.v.size() + b.v.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        const double ai = a.v[i];
        if (ai == 0.0) continue;
        double* dst = out.v.data() + i;
        for (std::size_t j = 0; j < b.v.size(); ++j) {
            dst[j] += ai * b.v[j];
        }
    }
    return out;
}

}  // namespace

ParityEstimate walk_parity_mc(const WalkSpec& spec, std::uint64_t replicas, const Stream& stream) {
    if (!spec.pair.samplable()) {
        fail(ErrorKind::Hypothesis, "walk_parity_mc needs samplable kicks");
    }
    if (!(spec.pair.mean_sum() > 0.0)) {
        fail(ErrorKind::Hypothesis, "walk_parity_mc needs E(xi + eta) > 0");
    }
    const auto total = replicate<CountPartial>(replicas, kChunk, [&](std::uint64_t, std::uint64_t b, std::uint64_t e) {
        CountPartial part;
        for (std::uint64_t r = b; r < e; ++r) {
            Stream s = stream.substream(r);
            double sum = 0.0;
            std::uint64_t m = 0;
            while (sum <= spec.level) {
                ++m;
                sum += (m & 1u) ? spec.pair.xi.sample(s) : spec.pair.eta.sample(s);
            }
            part.odd += m & 1u;
            ++part.total;
        }
        return part;
    });
    return finish_parity(total);
}

bool eta_positive(const KickPair& pair) {
    const double lo = pair.eta.lower();
    return lo > 0.0 || (lo == 0.0 && pair.eta.atom_at_lower() == 0.0);
}

namespace {

struct LadderPartial {
    MeanAccumulator a, b_pos, c, length;
    double sum_bc = 0.0;
    void merge(const LadderPartial& o) {
        a.merge(o.a);
        b_pos.merge(o.b_pos);
        c.merge(o.c);
        length.merge(o.length);
        sum_bc += o.sum_bc;
    }
};

}  // namespace

LadderStats ladder_stats_mc(const KickPair& pair, std::uint64_t epochs, const Stream& stream) {
    if (!eta_positive(pair)) {
        fail(ErrorKind::Hypothesis,
             fmt::format("ladder estimator needs eta > 0 a.s. (eta = {}); use general_parity", pair.eta.text()));
    }
    if (!pair.samplable()) {
        fail(ErrorKind::Hypothesis, "ladder estimator needs samplable kicks");
    }
    if (!(pair.mean_sum() > 0.0)) {
        fail(ErrorKind::Hypothesis, "ladder estimator needs E(xi + eta) > 0");
    }
    if (epochs == 0) {
        fail(ErrorKind::Usage, "epochs must be >= 1");
    }
    const auto tot = replicate<LadderPartial>(epochs, kChunk, [&](std::uint64_t, std::uint64_t b, std::uint64_t e) {
        LadderPartial part;
        for (std::uint64_t r = b; r < e; ++r) {
            Stream s = stream.substream(r);
            double t = 0.0;
            std::uint64_t n = 0;
            for (;;) {
                ++n;
                const double xi = pair.xi.sample(s);
                const double eta = pair.eta.sample(s);
                const double bb = t + xi;
                const double cc = bb + eta;
                if (cc > 0.0) {
                    if (bb > cc) {
                        fail(ErrorKind::Invariant, "ladder epoch with b > c");
                    }
                    const double bp = bb > 0.0 ? bb : 0.0;
                    part.a.add(t);
                    part.b_pos.add(bp);
                    part.c.add(cc);
                    part.length.add(static_cast<double>(n));
                    part.sum_bc += bp * cc;
                    break;
                }
                t = cc;
            }
        }
        return part;
    });
    LadderStats st;
    st.epochs = tot.c.n;
    st.mean_a = tot.a.mean();
    st.mean_b_pos = tot.b_pos.mean();
    st.se_b_pos = tot.b_pos.standard_error();
    st.mean_c = tot.c.mean();
    st.se_c = tot.c.standard_error();
    st.mean_epoch_length = tot.length.mean();
    if (!(st.mean_c > 0.0)) {
        fail(ErrorKind::Invariant, "ladder estimator produced E c <= 0");
    }
    st.p = st.mean_b_pos / st.mean_c;
    const double n = static_cast<double>(st.epochs);
    if (st.epochs > 1) {
        const double cov = (tot.sum_bc - n * st.mean_b_pos * st.mean_c) / (n - 1.0);
        const double var = tot.b_pos.variance() - 2.0 * st.p * cov + st.p * st.p * tot.c.variance();
        st.p_se = std::sqrt(std::max(0.0, var) / n) / st.mean_c;
    }
    st.ci = {st.p - kZ95 * st.p_se, st.p + kZ95 * st.p_se};
    return st;
}

LadderGrid ladder_grid(const KickPair& pair, int grid_points) {
    if (!pair.xi.has_density() || !pair.eta.has_density()) {
        fail(ErrorKind::Hypothesis, "ladder grid needs continuous densities for both kicks");
    }
    if (!eta_positive(pair)) {
        fail(ErrorKind::Hypothesis,
             fmt::format("ladder grid needs eta > 0 a.s. (eta = {}); use general_parity", pair.eta.text()));
    }
    if (!(pair.mean_sum() > 0.0)) {
        fail(ErrorKind::Hypothesis, "ladder grid needs E(xi + eta) > 0");
    }
    if (grid_points < 64) {
        fail(ErrorKind::Usage, fmt::format("ladder grid needs at least 64 points, got {}", grid_points));
    }
    const double m = pair.bound();
    for (int n_max = 2; n_max <= 4096; n_max *= 2) {
        const double neg = n_max * 2.0 * m;
        const double h = (neg + 2.0 * m) / (grid_points - 1);
        const auto i_neg = static_cast<std::int64_t>(std::llround(neg / h));
        const Line xi = lattice(pair.xi, h);
        const Line eta = lattice(pair.eta, h);

        Line b_occ;
        b_occ.lo = -i_neg + xi.lo;
        b_occ.v.assign(static_cast<std::size_t>(i_neg + xi.hi() - xi.lo + 1), 0.0);
        Line c_law;
        c_law.lo = 0;
        c_law.v.assign(static_cast<std::size_t>(std::max<std::int64_t>(xi.hi() + eta.hi(), 0) + 1), 0.0);

        Line g;
        g.lo = -i_neg;
        g.v.assign(static_cast<std::size_t>(i_neg + 1), 0.0);
        g.v.back() = 1.0;
        double escaped = 0.0;
        double residual = 1.0;
        int iterations = 0;
        while (residual >= 1e-10) {
            if (++iterations > 1000000) {
                fail(ErrorKind::Numeric, "ladder grid iteration did not converge");
            }
            const Line y = convolve(g, xi);
            for (std::size_t i = 0; i < y.v.size(); ++i) {
                b_occ.v[static_cast<std::size_t>(y.lo + static_cast<std::int64_t>(i) - b_occ.lo)] += y.v[i];
            }
            const Line z = convolve(y, eta);
            std::fill(g.v.begin(), g.v.end(), 0.0);
            residual = 0.0;
            for (std::size_t i = 0; i < z.v.size(); ++i) {
                const std::int64_t k = z.lo + static_cast<std::int64_t>(i);
                const double w = z.v[i];
                if (k > 0) {
                    c_law.v[static_cast<std::size_t>(k)] += w;
                } else if (k == 0) {
                    c_law.v[0] += 0.5 * w;
                    g.v.back() += 0.5 * w;
                    residual += 0.5 * w;
                } else if (k >= -i_neg) {
                    g.v[static_cast<std::size_t>(k + i_neg)] += w;
                    residual += w;
                } else {
                    escaped += w;
                }
            }
        }
        if (escaped > 1e-12) {
            continue;
        }

        LadderGrid out;
        out.h = h;
        out.n_max = n_max;
        out.residual = residual;
        out.escaped = escaped;
        out.iterations = iterations;
        const std::int64_t lo = b_occ.lo;
        const std::int64_t hi = std::max(b_occ.hi(), c_law.hi());
        out.origin = -lo;
        const auto size = static_cast<std::size_t>(hi - lo + 1);
        out.b_occupation.assign(size, 0.0);
        out.b_law.assign(size, 0.0);
        out.c_law.assign(size, 0.0);
        double num = 0.0;
        double den = 0.0;
        for (std::int64_t k = lo; k <= hi; ++k) {
            const auto i = static_cast<std::size_t>(k - lo);
            const double bk = b_occ.at(k);
            out.b_occupation[i] = bk;
            // P(k h + eta > 0) on the lattice, half weight on landing at 0.
            double up = 0.0;
            for (std::int64_t j = eta.lo; j <= eta.hi(); ++j) {
                if (k + j > 0) up += eta.at(j);
                else if (k + j == 0) up += 0.5 * eta.at(j);
            }
            out.b_law[i] = bk * up;
            out.c_law[i] = c_law.at(k);
            const double x = static_cast<double>(k) * h;
            if (k > 0) num += x * bk;
            den += x * out.c_law[i];
            out.total_mass += out.c_law[i];
        }
        out.eta_mass = eta.v;
        out.eta_lo = eta.lo;
        if (std::abs(out.total_mass - 1.0) > 1e-6) {
            fail(ErrorKind::Numeric,
                 fmt::format("ladder grid too coarse: epoch mass {:.12g} differs from 1 by more than 1e-6",
                             out.total_mass));
        }
        out.p = num / den;
        return out;
    }
    fail(ErrorKind::Numeric, "ladder grid: mass keeps escaping the lattice");
}

double convolution_identity_error(const LadderGrid& grid) {
    const std::int64_t lo = -grid.origin;
    const auto n = static_cast<std::int64_t>(grid.c_law.size());
    std::vector<double> conv(grid.c_law.size(), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const double b = grid.b_occupation[static_cast<std::size_t>(i)];
        if (b == 0.0) continue;
        const std::int64_t y = lo + i;
        for (std::size_t j = 0; j < grid.eta_mass.size(); ++j) {
            const std::int64_t x = y + grid.eta_lo + static_cast<std::int64_t>(j);
            if (x < 0) continue;
            const std::int64_t idx = x - lo;
            if (idx >= n) continue;
            conv[static_cast<std::size_t>(idx)] += (x == 0 ? 0.5 : 1.0) * b * grid.eta_mass[j];
        }
    }
    double tv = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        tv += std::abs(conv[static_cast<std::size_t>(i)] - grid.c_law[static_cast<std::size_t>(i)]);
    }
    return 0.5 * tv;
}

namespace {

struct GammaPartial {
    MeanAccumulator g;
    void merge(const GammaPartial& o) { g.merge(o.g); }
};

// First strict ascending ladder height of the walk whose odd steps are `first`.
MeanAccumulator first_ladder_heights(const PerturbationSpec& first, const PerturbationSpec& second,
                                     std::uint64_t walks, const Stream& stream) {
    return replicate<GammaPartial>(walks, kChunk, [&](std::uint64_t, std::uint64_t b, std::uint64_t e) {
               GammaPartial part;
               for (std::uint64_t r = b; r < e; ++r) {
                   Stream s = stream.substream(r);
                   double sum = 0.0;
                   for (std::uint64_t m = 1;; ++m) {
                       sum += (m & 1u) ? first.sample(s) : second.sample(s);
                       if (sum > 0.0) break;
                   }
                   part.g.add(sum);
               }
               return part;
           })
        .g;
}

}  // namespace

GeneralParityStats general_parity(const KickPair& pair, std::uint64_t epochs, const Stream& stream) {
    if (!(pair.xi.upper() > 0.0) || !(pair.eta.upper() > 0.0)) {
        fail(ErrorKind::Hypothesis, "general parity needs P{xi > 0} > 0 and P{eta > 0} > 0");
    }
    if (!(pair.mean_sum() > 0.0)) {
        fail(ErrorKind::Hypothesis, "general parity needs E(xi + eta) > 0");
    }
    if (!pair.samplable()) {
        fail(ErrorKind::Hypothesis, "general parity needs samplable kicks");
    }
    if (epochs < 2) {
        fail(ErrorKind::Usage, "general parity needs at least 2 ladder points");
    }
    GeneralParityStats st;
    st.ladder_points = epochs;

    // Parity chain of the ladder indices along one long walk. S is kept
    // relative to the running maximum.
    Stream s = stream.substream(0);
    double rel = 0.0;
    std::uint64_t index = 0;
    int prev = -1;
    for (std::uint64_t k = 0; k < epochs;) {
        ++index;
        rel += (index & 1u) ? pair.xi.sample(s) : pair.eta.sample(s);
        if (rel > 0.0) {
            rel = 0.0;
            const int parity = static_cast<int>(index & 1u);
            if (prev >= 0) {
                // Count the origin state of every transition so the
                // marginals match the pair counts exactly.
                if (prev == 0) {
                    ++st.nu0;
                    (parity == 0 ? st.nu00 : st.nu01)++;
                } else {
                    ++st.nu1;
                    (parity == 0 ? st.nu10 : st.nu11)++;
                }
            }
            prev = parity;
            ++k;
        }
    }
    const double n = static_cast<double>(epochs - 1);
    st.mu0 = static_cast<double>(st.nu0) / n;
    st.mu1 = static_cast<double>(st.nu1) / n;
    st.mu00 = static_cast<double>(st.nu00) / n;
    st.mu01 = static_cast<double>(st.nu01) / n;
    st.mu10 = static_cast<double>(st.nu10) / n;
    st.mu11 = static_cast<double>(st.nu11) / n;

    const MeanAccumulator g0 = first_ladder_heights(pair.xi, pair.eta, epochs, stream.substream(1));
    const MeanAccumulator g1 = first_ladder_heights(pair.eta, pair.xi, epochs, stream.substream(2));
    st.e_gamma0 = g0.mean();
    st.e_gamma1 = g1.mean();
    st.se_gamma0 = g0.standard_error();
    st.se_gamma1 = g1.standard_error();
    st.value = (st.mu11 * st.e_gamma1 + st.mu01 * st.e_gamma0) /
               (st.mu1 * st.e_gamma1 + st.mu0 * st.e_gamma0);
    return st;
}

BranchMethod parse_branch_method(const std::string& name) {
    if (name == "mc") return BranchMethod::Mc;
    if (name == "ladder") return BranchMethod::Ladder;
    if (name == "grid") return BranchMethod::Grid;
    fail(ErrorKind::Usage, fmt::format("unknown method '{}' (expected mc, ladder or grid)", name));
}

const char* branch_method_name(BranchMethod m) noexcept {
    switch (m) {
        case BranchMethod::Mc: return "mc";
        case BranchMethod::Ladder: return "ladder";
        case BranchMethod::Grid: return "grid";
    }
    return "?";
}

namespace {

// Longest averaged descent time from (vertex edge, h0) into any leaf below.
double descent_time(const WellGraph& graph, int edge, double h0) {
    const Edge& e = graph.edge(edge);
    const EdgeTrajectory tr = edge_trajectory(edge_drift(graph, edge), h0, e.bottom);
    if (e.leaf()) return tr.duration;
    return tr.duration + std::max(descent_time(graph, e.left_child, e.bottom),
                                  descent_time(graph, e.right_child, e.bottom));
}

}  // namespace

BranchEstimate branching_probabilities(const WellGraph& graph, int vertex, const BranchOptions& opt,
                                       const Stream& stream) {
    const Edge& e = graph.edge(vertex);
    if (e.leaf()) {
        fail(ErrorKind::Usage, fmt::format("vertex {} is exterior; branching needs an interior vertex",
                                           graph.vertex_label(vertex)));
    }
    const KickPair& pair = e.kicks;
    BranchEstimate out;
    out.vertex = vertex;
    out.method = opt.method;
    out.budget = opt.budget;
    out.open_regime = !eta_positive(pair);

    auto use_general = [&](const char* why) {
        out.warning = fmt::format(
            "{} estimator needs eta > 0; eta = {} can be non-positive, fell back to general parity "
            "(open-formula regime)",
            why, pair.eta.text());
        const GeneralParityStats g = general_parity(pair, opt.budget, stream);
        out.estimator = "general-parity";
        out.p_left = g.value;
        out.p_right = 1.0 - g.value;
        const double n = static_cast<double>(g.ladder_points);
        out.standard_error = std::sqrt(g.value * (1.0 - g.value) / n);
        out.ci = {g.value - kZ95 * out.standard_error, g.value + kZ95 * out.standard_error};
    };

    switch (opt.method) {
        case BranchMethod::Mc: {
            const double m = std::max(pair.bound(), 1.0);
            double offset = opt.start_offset > 0.0 ? opt.start_offset : 50.0 * m * opt.epsilon;
            offset = std::min(offset, 0.5 * (e.top - e.bottom));
            const double h0 = e.bottom + offset;
            const double q0 = 0.5 * (graph.wall_position(e.left_wall) + graph.wall_position(e.right_wall));
            const double horizon = std::max(1.0, 20.0 * descent_time(graph, vertex, h0));
            check_resolution(graph, opt.epsilon);
            const std::vector<int> left = graph.subtree_leaves(e.left_child);
            const int left_max = left.back();
            const auto c = replicate<CountPartial>(opt.budget, kChunk / 8, [&](std::uint64_t, std::uint64_t b, std::uint64_t en) {
                CountPartial part;
                for (std::uint64_t r = b; r < en; ++r) {
                    Stream s = stream.substream(r);
                    const int leaf = first_branch_with(graph, initial_state(graph, h0, q0), opt.epsilon,
                                                       horizon, PlainKicks{&s});
                    part.odd += leaf <= left_max ? 1u : 0u;
                    ++part.total;
                }
                return part;
            });
            const ParityEstimate pe = finish_parity(c);
            out.estimator = "mc";
            out.p_left = pe.p_odd;
            out.p_right = pe.p_even;
            out.standard_error = pe.standard_error;
            out.ci = pe.ci;
            break;
        }
        case BranchMethod::Ladder: {
            if (out.open_regime) {
                use_general("ladder");
                break;
            }
            const LadderStats st = ladder_stats_mc(pair, opt.budget, stream);
            out.estimator = "ladder";
            out.p_left = st.p;
            out.p_right = 1.0 - st.p;
            out.standard_error = st.p_se;
            out.ci = st.ci;
            break;
        }
        case BranchMethod::Grid: {
            if (out.open_regime) {
                use_general("grid");
                break;
            }
            const LadderGrid g = ladder_grid(pair, static_cast<int>(opt.budget));
            out.estimator = "grid";
            out.p_left = g.p;
            out.p_right = 1.0 - g.p;
            out.standard_error = 0.0;
            out.ci = {g.p, g.p};
            break;
        }
    }
    return out;
}

}  // namespace nelastic
