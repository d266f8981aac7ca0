#include "rate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include <fmt/format.h>

#include "error.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"

namespace nelastic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Safeguarded Newton for an increasing f on [lo, hi] with f(lo) < 0 < f(hi).
template <class F>
double bracketed_newton(F&& f_and_df, double lo, double hi, double tol, int* iterations) {
    double x = 0.5 * (lo + hi);
    for (int it = 1; it <= 400; ++it) {
        const auto [f, df] = f_and_df(x);
        if (iterations) *iterations = it;
        if (f == 0.0) return x;
        if (f < 0.0) lo = x; else hi = x;
        double next = x - f / df;
        if (!(df > 0.0) || !(next > lo && next < hi)) {
            next = 0.5 * (lo + hi);
        }
        if (std::abs(next - x) <= tol * std::max(1.0, std::abs(x)) || hi - lo <= tol * std::max(1.0, std::abs(x))) {
            return next;
        }
        x = next;
    }
    fail(ErrorKind::Numeric, fmt::format("root finder did not converge in [{:.17g}, {:.17g}]", lo, hi));
}

template <class F>
double composite_gauss5(F&& f, double a, double b, double tol) {
    const GaussRule& rule = gauss_rule_5();
    auto level = [&](int panels) {
        const double w = (b - a) / panels;
        double sum = 0.0;
        for (int p = 0; p < panels; ++p) {
            const double v = integrate_fixed(rule, f, a + p * w, a + (p + 1) * w);
            if (!std::isfinite(v)) return kInf;
            sum += v;
        }
        return sum;
    };
    double prev = level(1);
    if (!std::isfinite(prev)) return kInf;
    for (int panels = 2; panels <= 64; panels *= 2) {
        const double cur = level(panels);
        if (!std::isfinite(cur)) return kInf;
        if (std::abs(cur - prev) < tol * std::max(1.0, std::abs(cur))) return cur;
        prev = cur;
    }
    // Slopes at the edge of the finite range give a log singularity at an
    // endpoint; let the adaptive rule refine there.
    const QuadratureResult r = integrate_adaptive(f, a, b, tol, 40, tol * 1e-3);
    if (!std::isfinite(r.value)) return kInf;
    if (!r.converged && r.error > 10.0 * tol * std::max(1.0, std::abs(r.value))) {
        fail(ErrorKind::Numeric, fmt::format("action quadrature stalled at estimated error {:.3g}", r.error));
    }
    return r.value;
}

}  // namespace

EdgeHamiltonian edge_hamiltonian(const WellGraph& graph, int edge, HamiltonianFlavor flavor) {
    const Edge& e = graph.edge(edge);
    EdgeHamiltonian eh{edge, e.width, e.kicks, flavor, 0.0};
    if (flavor == HamiltonianFlavor::LeafFloor) {
        if (!e.leaf()) {
            fail(ErrorKind::Usage, fmt::format("edge {} is not a leaf; no floor Hamiltonian", edge));
        }
        eh.floor_energy = e.bottom;
    }
    return eh;
}

double hamiltonian_scale(const EdgeHamiltonian& eh, double h) {
    if (!(h > 0.0)) {
        fail(ErrorKind::Usage, fmt::format("Hamiltonian needs h > 0, got {:.17g}", h));
    }
    return std::sqrt(2.0 * h) / (2.0 * eh.width);
}

double hamiltonian(const EdgeHamiltonian& eh, double h, double beta) {
    if (eh.flavor == HamiltonianFlavor::LeafFloor) {
        const double c = hamiltonian_scale(eh, eh.floor_energy);
        return c * (eh.pair.xi.log_mgf_negative_part(-beta) + eh.pair.eta.log_mgf_negative_part(-beta));
    }
    const double c = hamiltonian_scale(eh, h);
    return c * cumulant(eh.pair, beta);
}

double hamiltonian_dbeta(const EdgeHamiltonian& eh, double h, double beta) {
    if (eh.flavor == HamiltonianFlavor::LeafFloor) {
        fail(ErrorKind::Usage, "derivative of the floor Hamiltonian is not provided");
    }
    return hamiltonian_scale(eh, h) * cumulant_derivatives(eh.pair, beta).d1;
}

std::pair<double, double> zeta_range(const KickPair& pair) {
    return {-(pair.xi.upper() + pair.eta.upper()), -(pair.xi.lower() + pair.eta.lower())};
}

double cumulant_slope_root(const KickPair& pair, double target, int* iterations) {
    const auto [zlo, zhi] = zeta_range(pair);
    if (!(target > zlo && target < zhi)) {
        fail(ErrorKind::Usage, fmt::format("slope {:.17g} outside ({:.17g}, {:.17g})", target, zlo, zhi));
    }
    auto f = [&](double b) {
        const LogMgf k = cumulant_all(pair, b);
        return std::pair<double, double>{k.d1 - target, k.d2};
    };
    double lo = 0.0;
    double hi = 0.0;
    const double f0 = f(0.0).first;
    if (f0 == 0.0) return 0.0;
    if (f0 < 0.0) {
        hi = 1.0;
        while (f(hi).first < 0.0) {
            lo = hi;
            hi *= 2.0;
            if (hi > 1e30) fail(ErrorKind::Numeric, "slope root bracket diverged");
        }
    } else {
        lo = -1.0;
        while (f(lo).first > 0.0) {
            hi = lo;
            lo *= 2.0;
            if (lo < -1e30) fail(ErrorKind::Numeric, "slope root bracket diverged");
        }
    }
    return bracketed_newton(f, lo, hi, 1e-14, iterations);
}

LegendreResult legendre(const EdgeHamiltonian& eh, double h, double alpha) {
    if (eh.flavor != HamiltonianFlavor::Interior) {
        fail(ErrorKind::Usage, "Legendre transform is defined for the interior Hamiltonian");
    }
    const double c = hamiltonian_scale(eh, h);
    const double a = alpha / c;
    const auto [zlo, zhi] = zeta_range(eh.pair);
    LegendreResult r;
    if (a > zhi || a < zlo) {
        return {kInf, a > zhi ? kInf : -kInf, false, 0};
    }
    if (a == zhi || a == zlo) {
        const double atom = a == zhi ? eh.pair.xi.atom_at_lower() * eh.pair.eta.atom_at_lower()
                                     : eh.pair.xi.atom_at_upper() * eh.pair.eta.atom_at_upper();
        const double value = atom > 0.0 ? -c * std::log(atom) : kInf;
        return {value, a == zhi ? kInf : -kInf, std::isfinite(value), 0};
    }
    // Within 1e-10 of a range end the adjoint exceeds what the root solve can
    // resolve; clamp the slope there (the integrand is only log-singular).
    const double margin = 1e-10 * std::max(1.0, zhi - zlo);
    const double a_eff = std::clamp(a, zlo + margin, zhi - margin);
    r.beta = cumulant_slope_root(eh.pair, a_eff, &r.iterations);
    r.value = c * (a_eff * r.beta - cumulant(eh.pair, r.beta));
    r.value = std::max(0.0, r.value);
    r.finite = true;
    return r;
}

double segment_action(const EdgeHamiltonian& eh, double h0, double h1, double tau) {
    if (tau <= 0.0) {
        return h0 == h1 ? 0.0 : kInf;
    }
    const double alpha = (h1 - h0) / tau;
    return composite_gauss5(
        [&](double s) { return legendre(eh, h0 + (h1 - h0) * s / tau, alpha).value; }, 0.0, tau, 1e-9);
}

double action(const WellGraph& graph, const GraphPath& path) {
    double total = 0.0;
    for (const PathSegment& seg : path.segments) {
        const EdgeHamiltonian eh = edge_hamiltonian(graph, seg.edge);
        const double tau = seg.t1 - seg.t0;
        if (seg.shape == SegmentShape::Linear) {
            total += segment_action(eh, seg.h0, seg.h1, tau);
        } else {
            if (tau <= 0.0) {
                if (seg.h0 != seg.h1) return kInf;
                continue;
            }
            const double r0 = std::sqrt(seg.h0);
            const double dr = (std::sqrt(seg.h1) - r0) / tau;
            total += composite_gauss5(
                [&](double s) {
                    const double r = r0 + dr * s;
                    return legendre(eh, r * r, 2.0 * r * dr).value;
                },
                0.0, tau, 1e-9);
        }
        if (!std::isfinite(total)) return kInf;
    }
    return total;
}

double uphill_root(const KickPair& pair) {
    const auto [zlo, zhi] = zeta_range(pair);
    if (!(zhi > 0.0)) {
        fail(ErrorKind::Hypothesis,
             fmt::format("no uphill: xi + eta >= 0 almost surely (xi = {}, eta = {})", pair.xi.text(),
                         pair.eta.text()));
    }
    if (!(pair.mean_sum() > 0.0)) {
        fail(ErrorKind::Hypothesis, "uphill root needs E(xi + eta) > 0");
    }
    (void)zlo;
    const double b_min = cumulant_slope_root(pair, 0.0);
    double hi = std::max(2.0 * b_min, 1e-3);
    while (cumulant(pair, hi) <= 0.0) {
        hi *= 2.0;
        if (hi > 1e30) fail(ErrorKind::Numeric, "uphill root bracket diverged");
    }
    auto f = [&](double b) {
        const LogMgf k = cumulant_all(pair, b);
        return std::pair<double, double>{k.value, k.d1};
    };
    return bracketed_newton(f, b_min, hi, 1e-15, nullptr);
}

double adjacent_quasipotential(const WellGraph& graph, int from, int to) {
    const Edge& a = graph.edge(from);
    const Edge& b = graph.edge(to);
    if (a.parent != to && b.parent != from) {
        fail(ErrorKind::Usage, fmt::format("{} and {} are not adjacent", graph.vertex_label(from),
                                           graph.vertex_label(to)));
    }
    const double dh = graph.vertex_energy(to) - graph.vertex_energy(from);
    if (dh <= 0.0) return 0.0;
    try {
        return uphill_root(a.kicks) * dh;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Hypothesis) return kInf;
        throw;
    }
}

PathMinimum minimize_path(const EdgeHamiltonian& eh, double h_a, double h_b, int segments, int scan_points) {
    if (!(h_b > h_a) || !(h_a > 0.0)) {
        fail(ErrorKind::Usage, "minimize_path needs 0 < h_a < h_b");
    }
    if (segments < 1 || scan_points < 3) {
        fail(ErrorKind::Usage, "minimize_path needs segments >= 1 and at least 3 scan points");
    }
    const auto [zlo, zhi] = zeta_range(eh.pair);
    (void)zlo;
    if (!(zhi > 0.0)) {
        fail(ErrorKind::Hypothesis, "no uphill path has finite action: xi + eta >= 0 almost surely");
    }
    PathMinimum out;
    out.segments = segments;
    const double ra = std::sqrt(h_a);
    const double rb = std::sqrt(h_b);
    for (int k = 0; k <= segments; ++k) {
        const double r = ra + (rb - ra) * k / segments;
        out.energies.push_back(k == segments ? h_b : r * r);
    }
    for (int k = 0; k < segments; ++k) {
        const double h0 = out.energies[static_cast<std::size_t>(k)];
        const double h1 = out.energies[static_cast<std::size_t>(k + 1)];
        const double dh = h1 - h0;
        // Below tau_lo the slope leaves the finite range at h0.
        const double tau_lo = dh / (hamiltonian_scale(eh, h0) * zhi) * (1.0 + 1e-9);
        const double u_lo = std::log(tau_lo);
        const double u_hi = u_lo + std::log(1e6);
        auto cost = [&](double u) { return segment_action(eh, h0, h1, std::exp(u)); };
        std::vector<double> us(static_cast<std::size_t>(scan_points));
        std::vector<double> vs(us.size());
        std::size_t best = 0;
        for (std::size_t i = 0; i < us.size(); ++i) {
            us[i] = u_lo + (u_hi - u_lo) * static_cast<double>(i) / static_cast<double>(us.size() - 1);
            vs[i] = cost(us[i]);
            if (vs[i] < vs[best]) best = i;
        }
        double a = us[best == 0 ? 0 : best - 1];
        double b = us[std::min(best + 1, us.size() - 1)];
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        double c = b - g * (b - a);
        double d = a + g * (b - a);
        double fc = cost(c);
        double fd = cost(d);
        int iter = 0;
        while (b - a > 1e-10 && iter < 200) {
            if (fc < fd) {
                b = d; d = c; fd = fc;
                c = b - g * (b - a);
                fc = cost(c);
            } else {
                a = c; c = d; fc = fd;
                d = a + g * (b - a);
                fd = cost(d);
            }
            ++iter;
        }
        out.converged = out.converged && (b - a <= 1e-10);
        double u_best = us[best];
        double v_best = vs[best];
        if (fc < v_best) { u_best = c; v_best = fc; }
        if (fd < v_best) { u_best = d; v_best = fd; }
        out.durations.push_back(std::exp(u_best));
        out.total_time += std::exp(u_best);
        out.value += v_best;
    }
    return out;
}

double RateTable::at(int from, int to) const {
    if (from == to) return 0.0;
    auto it = entries.find({from, to});
    if (it == entries.end()) {
        fail(ErrorKind::Usage, fmt::format("no rate entry for vertices {} -> {}", from, to));
    }
    return it->second.value;
}

RateTable compute_rate_table(const WellGraph& graph) {
    RateTable t;
    t.vertex_count = graph.edge_count();
    for (const Edge& e : graph.edges()) {
        if (e.parent == 0) continue;
        t.entries[{e.id, e.parent}] = {adjacent_quasipotential(graph, e.id, e.parent), false};
        t.entries[{e.parent, e.id}] = {adjacent_quasipotential(graph, e.parent, e.id), false};
    }
    return t;
}

std::vector<std::vector<double>> pairwise_quasipotential(const RateTable& table) {
    const auto n = static_cast<std::size_t>(table.vertex_count);
    std::vector<std::vector<double>> d(n, std::vector<double>(n, kInf));
    for (std::size_t i = 0; i < n; ++i) d[i][i] = 0.0;
    for (const auto& [key, entry] : table.entries) {
        const auto i = static_cast<std::size_t>(key.first - 1);
        const auto j = static_cast<std::size_t>(key.second - 1);
        if (i >= n || j >= n) {
            fail(ErrorKind::Usage, fmt::format("rate entry {} -> {} outside 1..{}", key.first, key.second, n));
        }
        if (entry.value < 0.0) {
            fail(ErrorKind::Invariant, fmt::format("negative V {} -> {}", key.first, key.second));
        }
        d[i][j] = std::min(d[i][j], entry.value);
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (d[i][k] + d[k][j] < d[i][j]) d[i][j] = d[i][k] + d[k][j];
    return d;
}

TiltedSampler::TiltedSampler(const KickPair& pair, double beta) : pair_(pair), beta_(beta) {
    if (!pair_.samplable()) {
        fail(ErrorKind::Hypothesis, "tilted sampling needs samplable kicks");
    }
    for (Side side : {Side::Left, Side::Right}) {
        const int i = static_cast<int>(side);
        const PerturbationSpec& x = spec(side);
        log_mgf_[i] = x.log_mgf(-beta_).value;
        extreme_[i] = beta_ > 0.0 ? x.lower() : x.upper();
        efficiency_[i] = beta_ == 0.0 ? 1.0 : std::exp(log_mgf_[i] + beta_ * extreme_[i]);
        if (efficiency_[i] < 1e-4) {
            fail(ErrorKind::Numeric,
                 fmt::format("tilted sampler envelope too loose for {}: acceptance {:.3g} < 1e-4", x.text(),
                             efficiency_[i]));
        }
    }
}

double TiltedSampler::sample(Side side, Stream& stream) const {
    const PerturbationSpec& x = spec(side);
    const double ext = extreme_[static_cast<int>(side)];
    for (;;) {
        const double v = x.sample(stream);
        const double u = stream.uniform_open();
        if (std::log(u) <= -beta_ * (v - ext)) return v;
    }
}

double TiltedSampler::sample_zeta(Stream& stream) const {
    const double a = sample(Side::Left, stream);
    const double b = sample(Side::Right, stream);
    return -(a + b);
}

double TiltedSampler::log_likelihood_ratio(Side side, double x) const {
    return beta_ * x + log_mgf_[static_cast<int>(side)];
}

namespace {

struct RarePartial {
    std::uint64_t hits = 0;
    MeanAccumulator weight;
    void merge(const RarePartial& o) {
        hits += o.hits;
        weight.merge(o.weight);
    }
};

struct TiltedKicks {
    const KickPair* target;
    const TiltedSampler* sampler;
    Stream* stream;
    double log_weight = 0.0;
    double operator()(const KickPair& pair, Side side) {
        if (sampler && &pair == target) {
            const double x = sampler->sample(side, *stream);
            log_weight += sampler->log_likelihood_ratio(side, x);
            return x;
        }
        return side == Side::Left ? pair.xi.sample(*stream) : pair.eta.sample(*stream);
    }
};

}  // namespace

RareEventResult rare_event_probability(const WellGraph& graph, const RareEventQuery& qry, const Stream& stream) {
    RareEventResult out;
    out.method = qry.method;
    out.budget = qry.budget;
    if (!(qry.delta_h >= 0.0) || !(qry.epsilon > 0.0) || !(qry.horizon > 0.0) || qry.budget == 0) {
        fail(ErrorKind::Usage, "rare event needs delta_h >= 0, epsilon > 0, horizon > 0, budget >= 1");
    }
    if (qry.delta_h == 0.0) {
        out.hits = qry.budget;
        out.estimate = 1.0;
        out.ci = {1.0, 1.0};
        return out;
    }
    const Edge& e = graph.edge(qry.edge);
    if (qry.h0 < e.bottom || qry.h0 > e.top) {
        fail(ErrorKind::Usage, fmt::format("h0 = {:.17g} outside edge {}", qry.h0, qry.edge));
    }
    const double target = qry.h0 + qry.delta_h;
    if (target + qry.epsilon * graph.kick_bound() >= graph.energy_cap()) {
        fail(ErrorKind::Usage, fmt::format("target energy {:.17g} too close to the cap {:.17g}", target,
                                           graph.energy_cap()));
    }
    check_resolution(graph, qry.epsilon);
    const double q0 = 0.5 * (graph.wall_position(e.left_wall) + graph.wall_position(e.right_wall));
    std::optional<TiltedSampler> sampler;
    if (qry.method == RareMethod::Tilted) {
        out.beta = uphill_root(e.kicks);
        sampler.emplace(e.kicks, out.beta);
    }
    const ParticleState start = initial_state(graph, qry.h0, q0);
    const auto tot = replicate<RarePartial>(qry.budget, 1024, [&](std::uint64_t, std::uint64_t b, std::uint64_t en) {
        RarePartial part;
        for (std::uint64_t r = b; r < en; ++r) {
            Stream s = stream.substream(r);
            ParticleState st = start;
            TiltedKicks kicks{&e.kicks, sampler ? &*sampler : nullptr, &s};
            double t_prev = 0.0;
            double h_prev = qry.h0;
            bool hit = false;
            for (;;) {
                const CollisionEvent ev = step(st, graph, qry.epsilon, kicks);
                if (ev.t > qry.horizon) {
                    // Ĥ at the horizon lies on the chord to the next corner.
                    const double x = (qry.horizon - t_prev) / (ev.t - t_prev);
                    hit = h_prev + (ev.h_post - h_prev) * x >= target;
                    break;
                }
                if (ev.h_post >= target) {
                    hit = true;
                    break;
                }
                t_prev = ev.t;
                h_prev = ev.h_post;
            }
            if (hit) ++part.hits;
            part.weight.add(hit ? (sampler ? std::exp(kicks.log_weight) : 1.0) : 0.0);
        }
        return part;
    });
    out.hits = tot.hits;
    out.estimate = tot.weight.mean();
    if (qry.method == RareMethod::Naive) {
        out.ci = wilson(tot.hits, qry.budget);
        out.standard_error = tot.weight.standard_error();
        if (tot.hits == 0) {
            out.upper_bound_only = true;
            out.ci.lo = 0.0;
        }
    } else {
        out.standard_error = tot.weight.standard_error();
        out.ci = {std::max(0.0, out.estimate - kZ95 * out.standard_error), out.estimate + kZ95 * out.standard_error};
    }
    out.exponent = out.estimate > 0.0 ? -qry.epsilon * std::log(out.estimate) : kInf;
    return out;
}

}  // namespace nelastic
