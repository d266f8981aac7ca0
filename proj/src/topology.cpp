#include "topology.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include <fmt/format.h>

#include "error.hpp"

namespace nelastic {

WellGraph::WellGraph(std::vector<Edge> edges, std::vector<double> wall_positions, double energy_cap)
    : edges_(std::move(edges)), walls_(std::move(wall_positions)), cap_(energy_cap) {
    for (const Edge& e : edges_) {
        if (e.parent == 0) {
            root_ = e.id;
        }
    }
}

const Edge& WellGraph::edge(int id) const {
    if (id < 1 || id > edge_count()) {
        fail(ErrorKind::Usage, fmt::format("edge {} out of range 1..{}", id, edge_count()));
    }
    return edges_[static_cast<std::size_t>(id - 1)];
}

double WellGraph::split_position(int id) const {
    const Edge& e = edge(id);
    if (e.leaf()) {
        fail(ErrorKind::Usage, fmt::format("edge {} is a leaf and has no split", id));
    }
    return walls_[static_cast<std::size_t>(e.split_wall)];
}

std::string WellGraph::vertex_label(int id) const {
    return fmt::format("{}{}", is_leaf(id) ? 'V' : 'O', id);
}

std::vector<int> WellGraph::exterior_vertices() const {
    std::vector<int> out;
    for (const Edge& e : edges_) {
        if (e.leaf()) out.push_back(e.id);
    }
    return out;
}

std::vector<int> WellGraph::interior_vertices() const {
    std::vector<int> out;
    for (const Edge& e : edges_) {
        if (!e.leaf()) out.push_back(e.id);
    }
    return out;
}

std::vector<int> WellGraph::subtree_leaves(int id) const {
    std::vector<int> out;
    std::function<void(int)> walk = [&](int v) {
        const Edge& e = edge(v);
        if (e.leaf()) {
            out.push_back(v);
            return;
        }
        walk(e.left_child);
        walk(e.right_child);
    };
    walk(id);
    return out;
}

std::vector<int> WellGraph::path_to_root(int id) const {
    std::vector<int> out;
    for (int v = id; v != 0; v = edge(v).parent) {
        out.push_back(v);
    }
    return out;
}

bool WellGraph::is_ancestor(int ancestor, int id) const {
    for (int v = id; v != 0; v = edge(v).parent) {
        if (v == ancestor) return true;
    }
    return false;
}

int WellGraph::lowest_common_ancestor(int a, int b) const {
    for (int v = a; v != 0; v = edge(v).parent) {
        if (is_ancestor(v, b)) return v;
    }
    return root_;
}

int WellGraph::locate(double energy, double q) const {
    if (!(q >= walls_.front() && q <= walls_.back())) {
        fail(ErrorKind::Usage, fmt::format("position {:.17g} outside [{:.17g}, {:.17g}]", q,
                                           walls_.front(), walls_.back()));
    }
    if (energy > cap_) {
        fail(ErrorKind::Usage, fmt::format("energy {:.17g} above cap {:.17g}", energy, cap_));
    }
    int v = root_;
    for (;;) {
        const Edge& e = edge(v);
        if (energy >= e.bottom) {
            return v;
        }
        if (e.leaf()) {
            fail(ErrorKind::Usage, fmt::format("energy {:.17g} below floor {:.17g} of well {}",
                                               energy, e.bottom, v));
        }
        const double split = walls_[static_cast<std::size_t>(e.split_wall)];
        if (q == split) {
            fail(ErrorKind::Usage,
                 fmt::format("position {:.17g} lies on wall {} at energy {:.17g} below its top", q,
                             e.split_wall + 1, energy));
        }
        v = q < split ? e.left_child : e.right_child;
    }
}

double WellGraph::min_vertical_gap() const {
    double gap = std::numeric_limits<double>::infinity();
    for (const Edge& e : edges_) {
        gap = std::min(gap, e.top - e.bottom);
    }
    return gap;
}

double WellGraph::kick_bound() const {
    double m = 0.0;
    for (const Edge& e : edges_) {
        m = std::max(m, e.kicks.bound());
    }
    return m;
}

WellGraph build_graph(const WellSystem& s) {
    const auto& q = s.wall_positions;
    if (q.size() < 2) {
        fail(ErrorKind::Config, "need at least two walls");
    }
    for (std::size_t i = 0; i + 1 < q.size(); ++i) {
        if (!(q[i] < q[i + 1]) || !std::isfinite(q[i]) || !std::isfinite(q[i + 1])) {
            fail(ErrorKind::Config,
                 fmt::format("wall positions must be finite and strictly increasing (walls {} and {})",
                             i + 1, i + 2));
        }
    }
    const int leaves = s.leaf_count();
    if (s.interior_heights.size() != q.size() - 2) {
        fail(ErrorKind::Config, fmt::format("expected {} interior wall heights, got {}",
                                            q.size() - 2, s.interior_heights.size()));
    }
    if (static_cast<int>(s.leaf_floors.size()) != leaves) {
        fail(ErrorKind::Config,
             fmt::format("expected {} leaf floors, got {}", leaves, s.leaf_floors.size()));
    }
    // Height of wall index w (0-based); end walls are infinite.
    auto height = [&](int w) {
        if (w == 0 || w + 1 == static_cast<int>(q.size())) {
            return std::numeric_limits<double>::infinity();
        }
        return s.interior_heights[static_cast<std::size_t>(w - 1)];
    };
    for (std::size_t i = 0; i < s.interior_heights.size(); ++i) {
        const double h = s.interior_heights[i];
        if (!std::isfinite(h) || h <= 0.0) {
            fail(ErrorKind::Config,
                 fmt::format("interior wall {} needs a finite positive height", i + 2));
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (s.interior_heights[j] == h) {
                fail(ErrorKind::Config,
                     fmt::format("degenerate topology: walls {} and {} have the same height {:g}",
                                 j + 2, i + 2, h));
            }
        }
    }
    for (int i = 0; i < leaves; ++i) {
        const double f = s.leaf_floors[static_cast<std::size_t>(i)];
        if (!std::isfinite(f) || f <= 0.0) {
            fail(ErrorKind::Config, fmt::format("floor of well {} must be positive", i + 1));
        }
        for (int j = 0; j < i; ++j) {
            if (s.leaf_floors[static_cast<std::size_t>(j)] == f) {
                fail(ErrorKind::Config,
                     fmt::format("degenerate topology: wells {} and {} have the same floor {:g}",
                                 j + 1, i + 1, f));
            }
        }
        if (!(f < height(i)) || !(f < height(i + 1))) {
            fail(ErrorKind::Config,
                 fmt::format("floor {:g} of well {} is not below both of its walls", f, i + 1));
        }
    }
    double max_level = 0.0;
    for (double h : s.interior_heights) max_level = std::max(max_level, h);
    for (double f : s.leaf_floors) max_level = std::max(max_level, f);
    if (!(s.energy_cap > max_level) || !std::isfinite(s.energy_cap)) {
        fail(ErrorKind::Config,
             fmt::format("energy cap {:g} must exceed every wall height and floor ({:g})",
                         s.energy_cap, max_level));
    }

    struct Node {
        int left_wall, right_wall, split_wall;
        double bottom, top;
        int left, right;  // indices into nodes
        int parent;
    };
    std::vector<Node> nodes;
    std::function<int(int, int, double, int)> split = [&](int i, int j, double top, int parent) {
        const int idx = static_cast<int>(nodes.size());
        nodes.push_back({i, j, -1, 0.0, top, -1, -1, parent});
        if (j == i + 1) {
            nodes[idx].bottom = s.leaf_floors[static_cast<std::size_t>(i)];
            return idx;
        }
        int k = i + 1;
        for (int w = i + 2; w < j; ++w) {
            if (height(w) > height(k)) k = w;
        }
        nodes[idx].split_wall = k;
        nodes[idx].bottom = height(k);
        const int l = split(i, k, height(k), idx);
        const int r = split(k, j, height(k), idx);
        nodes[idx].left = l;
        nodes[idx].right = r;
        return idx;
    };
    split(0, static_cast<int>(q.size()) - 1, s.energy_cap, -1);

    // Leaves keep their left-to-right index; merged wells follow by merge level.
    std::vector<int> id_of(nodes.size());
    std::vector<int> merged;
    for (std::size_t n = 0; n < nodes.size(); ++n) {
        if (nodes[n].left < 0) {
            id_of[n] = nodes[n].left_wall + 1;
        } else {
            merged.push_back(static_cast<int>(n));
        }
    }
    std::sort(merged.begin(), merged.end(),
              [&](int a, int b) { return nodes[a].bottom < nodes[b].bottom; });
    for (std::size_t m = 0; m < merged.size(); ++m) {
        id_of[static_cast<std::size_t>(merged[m])] = leaves + 1 + static_cast<int>(m);
    }

    const int n_edges = s.edge_count();
    if (!s.kicks.empty() && static_cast<int>(s.kicks.size()) != n_edges) {
        fail(ErrorKind::Config,
             fmt::format("expected kicks for {} wells, got {}", n_edges, s.kicks.size()));
    }
    std::vector<Edge> edges(static_cast<std::size_t>(n_edges));
    for (std::size_t n = 0; n < nodes.size(); ++n) {
        const Node& nd = nodes[n];
        Edge& e = edges[static_cast<std::size_t>(id_of[n] - 1)];
        e.id = id_of[n];
        e.bottom = nd.bottom;
        e.top = nd.top;
        e.left_wall = nd.left_wall;
        e.right_wall = nd.right_wall;
        e.width = q[static_cast<std::size_t>(nd.right_wall)] - q[static_cast<std::size_t>(nd.left_wall)];
        e.parent = nd.parent < 0 ? 0 : id_of[static_cast<std::size_t>(nd.parent)];
        e.split_wall = nd.split_wall;
        if (nd.left >= 0) {
            e.left_child = id_of[static_cast<std::size_t>(nd.left)];
            e.right_child = id_of[static_cast<std::size_t>(nd.right)];
        }
        if (!s.kicks.empty()) {
            e.kicks = s.kicks[static_cast<std::size_t>(e.id - 1)];
        }
    }
    return WellGraph(std::move(edges), q, s.energy_cap);
}

std::size_t GraphPath::segment_at(double t) const {
    if (segments.empty()) {
        fail(ErrorKind::Usage, "empty path");
    }
    auto it = std::upper_bound(segments.begin(), segments.end(), t,
                               [](double x, const PathSegment& s) { return x < s.t0; });
    if (it == segments.begin()) return 0;
    return static_cast<std::size_t>(std::distance(segments.begin(), it) - 1);
}

double segment_energy(const PathSegment& s, double t) {
    const double span = s.t1 - s.t0;
    if (span <= 0.0) return s.h1;
    const double x = std::clamp((t - s.t0) / span, 0.0, 1.0);
    if (s.shape == SegmentShape::Linear) {
        return s.h0 + (s.h1 - s.h0) * x;
    }
    const double r = std::sqrt(s.h0) + (std::sqrt(s.h1) - std::sqrt(s.h0)) * x;
    return r * r;
}

double GraphPath::energy_at(double t) const { return segment_energy(segments[segment_at(t)], t); }

int GraphPath::edge_at(double t) const { return segments[segment_at(t)].edge; }

void check_path(const WellGraph& graph, const GraphPath& path, double tol) {
    for (std::size_t i = 0; i < path.segments.size(); ++i) {
        const PathSegment& s = path.segments[i];
        const Edge& e = graph.edge(s.edge);
        if (s.t1 < s.t0) {
            fail(ErrorKind::Invariant, fmt::format("segment {} runs backwards in time", i));
        }
        for (double h : {s.h0, s.h1}) {
            if (h < e.bottom - tol || h > e.top + tol) {
                fail(ErrorKind::Invariant,
                     fmt::format("segment {} energy {:.17g} outside edge {} interval [{:.17g}, {:.17g}]",
                                 i, h, s.edge, e.bottom, e.top));
            }
        }
        if (i == 0) continue;
        const PathSegment& p = path.segments[i - 1];
        if (std::abs(p.t1 - s.t0) > tol || std::abs(p.h1 - s.h0) > tol) {
            fail(ErrorKind::Invariant, fmt::format("path discontinuous at segment {}", i));
        }
        if (p.edge == s.edge) continue;
        const Edge& pe = graph.edge(p.edge);
        double vertex = 0.0;
        if (pe.parent == s.edge) {
            vertex = pe.top;
        } else if (e.parent == p.edge) {
            vertex = e.top;
        } else if (pe.parent != 0 && pe.parent == e.parent) {
            vertex = pe.top;
        } else {
            fail(ErrorKind::Invariant,
                 fmt::format("segment {} jumps between non-adjacent edges {} and {}", i, p.edge, s.edge));
        }
        if (std::abs(s.h0 - vertex) > tol) {
            fail(ErrorKind::Invariant,
                 fmt::format("edge changes {} -> {} at energy {:.17g}, not at vertex energy {:.17g}",
                             p.edge, s.edge, s.h0, vertex));
        }
    }
}

}  // namespace nelastic
