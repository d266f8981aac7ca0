#pragma once

#include <string>
#include <vector>

#include "kernels.hpp"

namespace nelastic {

/// Walls, leaf floors and kicks of a multi-well system.
///
/// `interior_heights[k]` is the height of wall k+1 (0-based positions), i.e.
/// the end walls are not listed and are infinitely high. `kicks` is indexed by
/// edge id - 1 once the well numbering is known (see build_graph).
struct WellSystem {
    std::vector<double> wall_positions;
    std::vector<double> interior_heights;
    std::vector<double> leaf_floors;
    double energy_cap = 0.0;
    std::vector<KickPair> kicks;

    [[nodiscard]] int leaf_count() const { return static_cast<int>(wall_positions.size()) - 1; }
    [[nodiscard]] int edge_count() const { return 2 * leaf_count() - 1; }
};

/// Edge i of the graph is well i. Vertex i is the bottom of edge i: the
/// exterior vertex V_i for a leaf, the interior vertex O_i otherwise.
struct Edge {
    int id = 0;
    double bottom = 0.0;  // floor (leaf) or merge level
    double top = 0.0;     // parent's merge level, or the energy cap at the root
    int left_wall = 0;    // wall indices (0-based)
    int right_wall = 0;
    double width = 0.0;
    int parent = 0;       // 0 at the root
    int left_child = 0;   // 0 for leaves
    int right_child = 0;
    int split_wall = -1;  // interior edges: the wall separating the children
    KickPair kicks;

    [[nodiscard]] bool leaf() const noexcept { return left_child == 0; }
};

class WellGraph {
public:
    WellGraph() = default;
    WellGraph(std::vector<Edge> edges, std::vector<double> wall_positions, double energy_cap);

    [[nodiscard]] int edge_count() const noexcept { return static_cast<int>(edges_.size()); }
    [[nodiscard]] int leaf_count() const noexcept { return (edge_count() + 1) / 2; }
    [[nodiscard]] int root() const noexcept { return root_; }
    [[nodiscard]] const Edge& edge(int id) const;
    [[nodiscard]] const std::vector<Edge>& edges() const noexcept { return edges_; }
    [[nodiscard]] bool is_leaf(int id) const { return edge(id).leaf(); }

    [[nodiscard]] const std::vector<double>& wall_positions() const noexcept { return walls_; }
    [[nodiscard]] double wall_position(int index) const { return walls_.at(index); }
    [[nodiscard]] double split_position(int id) const;
    [[nodiscard]] double energy_cap() const noexcept { return cap_; }

    [[nodiscard]] double vertex_energy(int id) const { return edge(id).bottom; }
    [[nodiscard]] std::string vertex_label(int id) const;
    [[nodiscard]] std::vector<int> exterior_vertices() const;
    [[nodiscard]] std::vector<int> interior_vertices() const;

    /// Leaves of the subtree below edge `id`, left to right.
    [[nodiscard]] std::vector<int> subtree_leaves(int id) const;
    /// Edge ids from `id` up to the root, inclusive.
    [[nodiscard]] std::vector<int> path_to_root(int id) const;
    [[nodiscard]] int lowest_common_ancestor(int a, int b) const;
    [[nodiscard]] bool is_ancestor(int ancestor, int id) const;

    /// K(H, q): the edge whose energy interval contains H and whose span
    /// contains q. At a merge level the parent edge wins.
    [[nodiscard]] int locate(double energy, double q) const;

    /// Smallest vertical extent of any edge.
    [[nodiscard]] double min_vertical_gap() const;
    /// Largest kick bound over all edges.
    [[nodiscard]] double kick_bound() const;

private:
    std::vector<Edge> edges_;
    std::vector<double> walls_;
    double cap_ = 0.0;
    int root_ = 0;
};

/// Validates the system and builds the merge tree: the region between two
/// walls is split at its highest interior wall. Leaves are numbered left to
/// right, merged wells by ascending merge level.
[[nodiscard]] WellGraph build_graph(const WellSystem& system);

enum class SegmentShape { Linear, SqrtAffine };

/// One piece of a path on the graph: energy moves from h0 to h1 over [t0, t1]
/// inside `edge`, either linearly or with sqrt(H) affine in t.
struct PathSegment {
    double t0 = 0.0;
    double t1 = 0.0;
    double h0 = 0.0;
    double h1 = 0.0;
    int edge = 0;
    SegmentShape shape = SegmentShape::Linear;
};

struct GraphPath {
    std::vector<PathSegment> segments;

    [[nodiscard]] bool empty() const noexcept { return segments.empty(); }
    [[nodiscard]] double start_time() const { return segments.front().t0; }
    [[nodiscard]] double end_time() const { return segments.back().t1; }
    /// Index of the segment containing t (the later one at a breakpoint).
    [[nodiscard]] std::size_t segment_at(double t) const;
    [[nodiscard]] double energy_at(double t) const;
    [[nodiscard]] int edge_at(double t) const;
};

/// Energy of a segment at time t in [t0, t1].
[[nodiscard]] double segment_energy(const PathSegment& s, double t);

/// Throws Invariant if the path is discontinuous, leaves an edge's interval,
/// or changes edge away from a vertex energy.
void check_path(const WellGraph& graph, const GraphPath& path, double tol = 1e-9);

}  // namespace nelastic
