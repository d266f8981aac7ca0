#include "microsim.hpp"

namespace nelastic {

ParticleState initial_state(const WellGraph& graph, double energy, double q, int direction) {
    if (direction != 1 && direction != -1) {
        fail(ErrorKind::Usage, "direction must be +1 or -1");
    }
    if (!(energy > 0.0)) {
        fail(ErrorKind::Usage, fmt::format("initial energy {:.17g} must be positive", energy));
    }
    ParticleState s;
    s.edge = graph.locate(energy, q);
    s.energy = energy;
    s.q = q;
    s.direction = direction;
    s.counts.assign(static_cast<std::size_t>(graph.edge_count() + 1), {0, 0});
    return s;
}

void check_resolution(const WellGraph& graph, double epsilon) {
    const double reach = epsilon * graph.kick_bound();
    const double gap = graph.min_vertical_gap();
    if (reach > 0.5 * gap) {
        fail(ErrorKind::Config,
             fmt::format("epsilon {:.6g} too large: a kick can move H by {:.6g}, more than half the "
                         "smallest vertical gap {:.6g}",
                         epsilon, reach, gap));
    }
}

TrajectoryRecord run(const WellGraph& graph, double h0, double q0, const RunOptions& opt,
                     Stream& stream) {
    return run_with(graph, initial_state(graph, h0, q0), opt, PlainKicks{&stream});
}

int first_branch(const WellGraph& graph, double h0, double q0, double epsilon, double horizon,
                 Stream& stream) {
    check_resolution(graph, epsilon);
    return first_branch_with(graph, initial_state(graph, h0, q0), epsilon, horizon,
                             PlainKicks{&stream});
}

}  // namespace nelastic
