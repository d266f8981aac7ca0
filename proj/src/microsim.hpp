#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include <fmt/format.h>

#include "error.hpp"
#include "random.hpp"
#include "topology.hpp"

namespace nelastic {

enum class Side : int { Left = 0, Right = 1 };

struct ParticleState {
    int edge = 0;
    double energy = 0.0;
    double q = 0.0;
    int direction = -1;
    double natural_time = 0.0;
    std::uint64_t collisions = 0;
    std::vector<std::array<std::uint64_t, 2>> counts;  // per edge id (index 0 unused)
};

struct CollisionEvent {
    double t = 0.0;  // rescaled time
    Side side = Side::Left;
    double kick = 0.0;
    double h_pre = 0.0;
    double h_post = 0.0;
    int edge = 0;    // edge whose kick pair was used
};

struct GridSample {
    double t = 0.0;
    double h_step = 0.0;
    double h_hat = 0.0;
    int edge = 0;
};

struct TrajectoryRecord {
    double epsilon = 0.0;
    double horizon = 0.0;
    double grid_dt = 0.0;
    std::vector<GridSample> grid;
    std::vector<CollisionEvent> events;  // only when requested
    std::uint64_t collisions = 0;
    bool cap_exceeded = false;
    ParticleState final_state;
};

/// Draws kicks from the configured distributions.
struct PlainKicks {
    Stream* stream;
    double operator()(const KickPair& pair, Side side) {
        return side == Side::Left ? pair.xi.sample(*stream) : pair.eta.sample(*stream);
    }
};

[[nodiscard]] ParticleState initial_state(const WellGraph& graph, double energy, double q,
                                          int direction = -1);

/// Rejects epsilon when a single kick could cross more than half of the
/// smallest vertical gap.
void check_resolution(const WellGraph& graph, double epsilon);

/// Moves the particle to its next wall, applies the kick and relocates it.
/// `kicks(pair, side)` returns the kick value for the current edge's pair.
/// Throws Numeric (and leaves state.energy above the cap) when H exceeds H̄.
template <class Kicks>
CollisionEvent step(ParticleState& s, const WellGraph& graph, double epsilon, Kicks&& kicks) {
    const Edge& e = graph.edge(s.edge);
    const double wall = graph.wall_position(s.direction > 0 ? e.right_wall : e.left_wall);
    const double speed = std::sqrt(2.0 * s.energy);
    s.natural_time += std::abs(wall - s.q) / speed;
    s.q = wall;

    CollisionEvent ev;
    ev.t = epsilon * s.natural_time;
    ev.side = s.direction > 0 ? Side::Right : Side::Left;
    ev.edge = s.edge;
    ev.h_pre = s.energy;
    ev.kick = kicks(e.kicks, ev.side);
    double h = s.energy - epsilon * ev.kick;
    if (e.leaf()) {
        h = std::max(e.bottom, h);
    }
    s.energy = h;
    s.direction = -s.direction;
    ++s.collisions;
    if (static_cast<std::size_t>(s.edge) < s.counts.size()) {
        ++s.counts[static_cast<std::size_t>(s.edge)][static_cast<int>(ev.side)];
    }
    ev.h_post = h;

    if (h > graph.energy_cap()) {
        fail(ErrorKind::Numeric, "energy cap exceeded");
    }
    int v = s.edge;
    while (graph.edge(v).parent != 0 && h >= graph.edge(v).top) {
        v = graph.edge(v).parent;
    }
    while (h < graph.edge(v).bottom && !graph.edge(v).leaf()) {
        v = ev.side == Side::Left ? graph.edge(v).left_child : graph.edge(v).right_child;
    }
    s.edge = v;
    return ev;
}

struct RunOptions {
    double epsilon = 1e-3;
    double horizon = 1.0;   // rescaled time T
    double grid_dt = 1e-3;
    bool record_events = false;
    /// Stop as soon as the particle sits in a leaf (Ĥ still completed to the
    /// next collision).
    bool stop_in_leaf = false;
};

/// Simulates up to rescaled time T, sampling on the grid. The piecewise
/// linear Ĥ joins post-collision energies at collision times, starting from
/// (0, H0).
template <class Kicks>
TrajectoryRecord run_with(const WellGraph& graph, ParticleState state, const RunOptions& opt,
                          Kicks&& kicks) {
    if (!(opt.epsilon > 0.0) || !(opt.horizon > 0.0) || !(opt.grid_dt > 0.0)) {
        fail(ErrorKind::Usage, "epsilon, horizon and grid_dt must be positive");
    }
    check_resolution(graph, opt.epsilon);
    TrajectoryRecord rec;
    rec.epsilon = opt.epsilon;
    rec.horizon = opt.horizon;
    rec.grid_dt = opt.grid_dt;
    const auto n_grid = static_cast<std::uint64_t>(std::floor(opt.horizon / opt.grid_dt + 1e-9)) + 1;
    rec.grid.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n_grid, 1u << 24)));
    std::uint64_t next_grid = 0;

    double t_prev = 0.0;
    double h_prev = state.energy;
    int edge_prev = state.edge;
    auto emit_until = [&](double t_next, double h_next, bool inclusive) {
        while (next_grid < n_grid) {
            const double tg = static_cast<double>(next_grid) * opt.grid_dt;
            if (tg > opt.horizon || (inclusive ? tg > t_next : tg >= t_next)) break;
            const double span = t_next - t_prev;
            const double x = span > 0.0 ? (tg - t_prev) / span : 1.0;
            rec.grid.push_back({tg, h_prev, h_prev + (h_next - h_prev) * x, edge_prev});
            ++next_grid;
        }
    };

    for (;;) {
        CollisionEvent ev;
        try {
            ev = step(state, graph, opt.epsilon, kicks);
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::Numeric || !(state.energy > graph.energy_cap())) throw;
            rec.cap_exceeded = true;
            break;
        }
        emit_until(ev.t, ev.h_post, false);
        if (ev.t > opt.horizon) break;
        if (opt.record_events) rec.events.push_back(ev);
        t_prev = ev.t;
        h_prev = ev.h_post;
        edge_prev = state.edge;
        if (opt.stop_in_leaf && graph.is_leaf(state.edge)) break;
    }
    // Grid points past the last resolved corner (cap abort or early stop).
    emit_until(opt.horizon, h_prev, true);
    rec.collisions = state.collisions;
    rec.final_state = std::move(state);
    return rec;
}

[[nodiscard]] TrajectoryRecord run(const WellGraph& graph, double h0, double q0,
                                   const RunOptions& opt, Stream& stream);

/// Runs until the particle enters a leaf and returns that leaf. Throws Numeric
/// ("no decision") when the rescaled horizon runs out first.
template <class Kicks>
int first_branch_with(const WellGraph& graph, ParticleState state, double epsilon, double horizon,
                      Kicks&& kicks) {
    const double limit = horizon / epsilon;
    while (!graph.is_leaf(state.edge)) {
        if (state.natural_time > limit) {
            fail(ErrorKind::Numeric,
                 fmt::format("no decision: still in edge {} at rescaled time {:.6g}", state.edge,
                             horizon));
        }
        step(state, graph, epsilon, kicks);
    }
    return state.edge;
}

[[nodiscard]] int first_branch(const WellGraph& graph, double h0, double q0, double epsilon,
                               double horizon, Stream& stream);

}  // namespace nelastic
