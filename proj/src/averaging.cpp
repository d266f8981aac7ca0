#include "averaging.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "error.hpp"

namespace nelastic {

EdgeDrift edge_drift(const WellGraph& graph, int edge) {
    const Edge& e = graph.edge(edge);
    EdgeDrift d{edge, e.kicks.mean_sum(), e.width};
    if (!(d.m > 0.0)) {
        fail(ErrorKind::Hypothesis,
             fmt::format("edge {} has non-positive mean kick sum {:.6g}", edge, d.m));
    }
    return d;
}

double EdgeTrajectory::energy_at(double t) const {
    const double tt = std::clamp(t, 0.0, duration);
    const double r = std::sqrt(h_start) - tt * drift.m / (2.0 * std::numbers::sqrt2 * drift.width);
    return r * r;
}

EdgeTrajectory edge_trajectory(const EdgeDrift& drift, double h_start, double h_end) {
    if (h_end > h_start) {
        fail(ErrorKind::Usage,
             fmt::format("averaged motion is downhill only: {:.17g} -> {:.17g}", h_start, h_end));
    }
    if (!(h_end >= 0.0) || !(drift.m > 0.0) || !(drift.width > 0.0)) {
        fail(ErrorKind::Usage, "edge trajectory needs h_end >= 0, m > 0 and D > 0");
    }
    EdgeTrajectory tr{drift, h_start, h_end, 0.0};
    tr.duration = 2.0 * std::numbers::sqrt2 * drift.width * (std::sqrt(h_start) - std::sqrt(h_end)) / drift.m;
    return tr;
}

namespace {

template <class Choose>
GraphPath descend(const WellGraph& graph, int start_edge, double h0, Choose&& choose) {
    const Edge& start = graph.edge(start_edge);
    if (h0 < start.bottom || h0 > start.top) {
        fail(ErrorKind::Usage, fmt::format("H0 = {:.17g} outside edge {} interval [{:.17g}, {:.17g}]",
                                           h0, start_edge, start.bottom, start.top));
    }
    GraphPath path;
    double t = 0.0;
    double h = h0;
    int v = start_edge;
    for (;;) {
        const Edge& e = graph.edge(v);
        const EdgeTrajectory tr = edge_trajectory(edge_drift(graph, v), h, e.bottom);
        path.segments.push_back({t, t + tr.duration, h, e.bottom, v, SegmentShape::SqrtAffine});
        t += tr.duration;
        h = e.bottom;
        if (e.leaf()) break;
        v = choose(v) == Side::Left ? e.left_child : e.right_child;
    }
    return path;
}

}  // namespace

GraphPath limit_path(const WellGraph& graph, int start_edge, double h0, const Decisions& decisions) {
    return descend(graph, start_edge, h0, [&](int vertex) {
        auto it = decisions.find(vertex);
        if (it == decisions.end()) {
            fail(ErrorKind::Usage, fmt::format("no branch decision for vertex {}", graph.vertex_label(vertex)));
        }
        return it->second;
    });
}

void validate_branch_table(const WellGraph& graph, const BranchTable& branch) {
    for (int v : graph.interior_vertices()) {
        auto it = branch.find(v);
        if (it == branch.end()) {
            fail(ErrorKind::Usage, fmt::format("no branch probability for vertex {}", graph.vertex_label(v)));
        }
        if (!(it->second >= 0.0 && it->second <= 1.0)) {
            fail(ErrorKind::Usage, fmt::format("branch probability {:.6g} at {} outside [0, 1]",
                                               it->second, graph.vertex_label(v)));
        }
    }
}

GraphPath sample_limit_process(const WellGraph& graph, int start_edge, double h0,
                               const BranchTable& branch, Stream& stream) {
    validate_branch_table(graph, branch);
    return descend(graph, start_edge, h0, [&](int vertex) {
        return stream.uniform_open() < branch.at(vertex) ? Side::Left : Side::Right;
    });
}

ComparisonReport compare(const WellGraph& graph, const TrajectoryRecord& record, const GraphPath& path) {
    ComparisonReport rep;
    if (path.empty()) return rep;
    const PathSegment& first = path.segments.front();
    rep.first_vertex_time = first.t1;
    for (const GridSample& g : record.grid) {
        if (g.t > first.t1) break;
        rep.sup_before_vertex = std::max(rep.sup_before_vertex, std::abs(g.h_hat - segment_energy(first, g.t)));
        ++rep.samples_before_vertex;
    }
    for (std::size_t k = 1; k < path.segments.size(); ++k) {
        const PathSegment& seg = path.segments[k];
        const int vertex = path.segments[k - 1].edge;
        SegmentComparison sc;
        sc.edge = seg.edge;
        sc.t0 = seg.t0;
        sc.t1 = seg.t1;
        for (const GridSample& g : record.grid) {
            if (graph.edge(g.edge).parent == vertex) {
                sc.record_edge = g.edge;
                break;
            }
        }
        sc.matched = sc.record_edge == seg.edge;
        if (sc.matched) {
            for (const GridSample& g : record.grid) {
                if (g.t < seg.t0) continue;
                if (g.t > seg.t1) break;
                sc.sup_distance = std::max(sc.sup_distance, std::abs(g.h_hat - segment_energy(seg, g.t)));
                ++sc.samples;
            }
        }
        rep.segments.push_back(sc);
        if (!sc.matched) {
            rep.branches_agree = false;
            break;
        }
    }
    return rep;
}

}  // namespace nelastic
