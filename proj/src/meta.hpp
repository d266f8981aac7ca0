#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "averaging.hpp"
#include "rate.hpp"
#include "topology.hpp"

namespace nelastic {

/// The vertex tree of the graph with quasi-potentials on adjacent pairs.
/// Vertex ids are 1-based; children are ordered (left, right).
struct VertexTree {
    std::vector<std::string> labels;  // index id - 1
    std::vector<int> parent;          // 0 at the root
    std::vector<int> left;            // 0 for exterior vertices
    std::vector<int> right;
    RateTable rates;

    [[nodiscard]] int size() const noexcept { return static_cast<int>(labels.size()); }
    [[nodiscard]] bool exterior(int id) const { return left.at(static_cast<std::size_t>(id - 1)) == 0; }
    [[nodiscard]] int root() const;
    [[nodiscard]] const std::string& label(int id) const { return labels.at(static_cast<std::size_t>(id - 1)); }
    [[nodiscard]] int find(const std::string& label) const;
    [[nodiscard]] std::vector<int> exterior_vertices() const;
    [[nodiscard]] std::vector<int> interior_vertices() const;
    [[nodiscard]] std::vector<int> subtree_exterior(int id) const;
    [[nodiscard]] int lowest_common_ancestor(int a, int b) const;
    /// Vertices on the tree path between a and b, inclusive.
    [[nodiscard]] std::vector<int> tree_path(int a, int b) const;
};

/// Tree and computed rate table of a well graph.
[[nodiscard]] VertexTree vertex_tree(const WellGraph& graph);

/// Parses a V-table: one line per tree edge, `child parent V_up [V_down]`
/// (V_down defaults to 0, `inf` allowed, `#` comments). The first child
/// listed for a parent is its left child. Labels are `V<k>` / `O<k>` with
/// distinct k; ids follow ascending k.
[[nodiscard]] VertexTree parse_vtable(const std::string& text);

/// Parses `p,p,...` into p_left for each interior vertex in ascending id.
[[nodiscard]] BranchTable parse_branch_list(const VertexTree& tree, const std::string& list);

/// Product of branch probabilities down from `vertex`; indexed like
/// tree.exterior_vertices().
[[nodiscard]] std::vector<double> descend_distribution(const VertexTree& tree, int vertex,
                                                       const BranchTable& branch);

/// Shortest-path V restricted to exterior vertices (order of exterior_vertices()).
[[nodiscard]] std::vector<std::vector<double>> exterior_V(const VertexTree& tree);

struct WGraphResult {
    double value = 0.0;  // +inf when no admissible graph exists
    /// Each minimiser maps state index -> target index (-1 for sinks).
    std::vector<std::vector<int>> minimizers;
};

/// Exhaustive minimum over W-graphs: maps from non-sink states to other
/// states with every arrow chain ending in the sink set. At most 12 states.
[[nodiscard]] WGraphResult w_graph_min(const std::vector<std::vector<double>>& V,
                                       const std::vector<bool>& sink);

struct Cycle {
    int index = 0;
    int rank = 0;
    std::vector<int> members;       // exterior vertex ids
    std::vector<int> presentation;  // members plus interior vertices on tree paths between them
    double a = 0.0;                 // A(pi)
    double internal_min = 0.0;      // min_i W_pi(i)
    double c = 0.0;                 // C(pi) = A - internal_min
    std::vector<std::pair<int, int>> exit_arrows;  // (from, to) vertex ids over all minimisers
    std::vector<int> landings;      // distinct landing vertices (LCA of exit arrows)
    int parent = -1;                // enclosing cycle
};

struct ExitProfile {
    double exponent = 0.0;
    std::vector<int> landings;
    bool multi_landing = false;
    std::vector<double> distribution;  // empty when exponent is +inf
};

struct TimelineEntry {
    double from = 0.0;  // timescale exponent interval [from, to)
    double to = 0.0;
    std::vector<double> distribution;
};

struct CycleReport {
    std::vector<int> states;  // exterior vertex ids
    std::vector<Cycle> cycles;
    std::vector<TimelineEntry> timeline;
    std::vector<std::string> notes;
};

/// Cycle hierarchy over the exterior vertices of the tree.
[[nodiscard]] CycleReport cycle_hierarchy(const VertexTree& tree);

[[nodiscard]] ExitProfile exit_profile(const VertexTree& tree, const Cycle& cycle, const BranchTable& branch);

/// Fills report.timeline starting from u0 (over exterior vertices).
void metastable_timeline(const VertexTree& tree, CycleReport& report, const BranchTable& branch,
                         const std::vector<double>& u0);

}  // namespace nelastic
