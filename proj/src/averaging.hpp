#pragma once

#include <map>
#include <vector>

#include "microsim.hpp"
#include "random.hpp"
#include "topology.hpp"

namespace nelastic {

struct EdgeDrift {
    int edge = 0;
    double m = 0.0;      // E xi + E eta
    double width = 0.0;  // D
};

[[nodiscard]] EdgeDrift edge_drift(const WellGraph& graph, int edge);

/// The averaged decay on one edge: sqrt(H) falls linearly at rate m/(2 sqrt(2) D).
struct EdgeTrajectory {
    EdgeDrift drift;
    double h_start = 0.0;
    double h_end = 0.0;
    double duration = 0.0;

    [[nodiscard]] double energy_at(double t) const;
};

[[nodiscard]] EdgeTrajectory edge_trajectory(const EdgeDrift& drift, double h_start, double h_end);

/// Branch choice at an interior vertex (keyed by vertex id).
using Decisions = std::map<int, Side>;
/// p_left per interior vertex.
using BranchTable = std::map<int, double>;

/// Averaged path from (start_edge, H0) down to an exterior floor, taking the
/// supplied decision at every interior vertex on the way.
[[nodiscard]] GraphPath limit_path(const WellGraph& graph, int start_edge, double h0,
                                   const Decisions& decisions);

/// As limit_path, drawing each decision independently (one uniform per vertex).
[[nodiscard]] GraphPath sample_limit_process(const WellGraph& graph, int start_edge, double h0,
                                             const BranchTable& branch, Stream& stream);

/// Checks p_left in [0, 1] for every interior vertex.
void validate_branch_table(const WellGraph& graph, const BranchTable& branch);

struct SegmentComparison {
    int edge = 0;
    double t0 = 0.0;
    double t1 = 0.0;
    int record_edge = 0;  // the branch the simulation took at this segment's top vertex
    bool matched = false;
    double sup_distance = 0.0;
    std::size_t samples = 0;
};

struct ComparisonReport {
    double first_vertex_time = 0.0;
    double sup_before_vertex = 0.0;  // sup |Ĥ - H| over grid times t <= t0
    std::size_t samples_before_vertex = 0;
    std::vector<SegmentComparison> segments;  // later segments, up to the first mismatch
    bool branches_agree = true;
};

[[nodiscard]] ComparisonReport compare(const WellGraph& graph, const TrajectoryRecord& record,
                                       const GraphPath& path);

}  // namespace nelastic
