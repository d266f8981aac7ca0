#include "meta.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "error.hpp"

namespace nelastic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool nearly_equal(double a, double b) {
    if (a == b) return true;
    if (!std::isfinite(a) || !std::isfinite(b)) return false;
    return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
}

std::vector<std::vector<double>> submatrix(const std::vector<std::vector<double>>& V, const std::vector<int>& idx) {
    std::vector<std::vector<double>> out(idx.size(), std::vector<double>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j)
            out[i][j] = V[static_cast<std::size_t>(idx[i])][static_cast<std::size_t>(idx[j])];
    return out;
}

}  // namespace

int VertexTree::root() const {
    for (int i = 0; i < size(); ++i) {
        if (parent[static_cast<std::size_t>(i)] == 0) return i + 1;
    }
    fail(ErrorKind::Config, "vertex tree has no root");
}

int VertexTree::find(const std::string& l) const {
    for (int i = 0; i < size(); ++i) {
        if (labels[static_cast<std::size_t>(i)] == l) return i + 1;
    }
    fail(ErrorKind::Usage, fmt::format("unknown vertex '{}'", l));
}

std::vector<int> VertexTree::exterior_vertices() const {
    std::vector<int> out;
    for (int i = 1; i <= size(); ++i)
        if (exterior(i)) out.push_back(i);
    return out;
}

std::vector<int> VertexTree::interior_vertices() const {
    std::vector<int> out;
    for (int i = 1; i <= size(); ++i)
        if (!exterior(i)) out.push_back(i);
    return out;
}

std::vector<int> VertexTree::subtree_exterior(int id) const {
    if (exterior(id)) return {id};
    std::vector<int> out = subtree_exterior(left[static_cast<std::size_t>(id - 1)]);
    const std::vector<int> r = subtree_exterior(right[static_cast<std::size_t>(id - 1)]);
    out.insert(out.end(), r.begin(), r.end());
    return out;
}

int VertexTree::lowest_common_ancestor(int a, int b) const {
    std::set<int> up;
    for (int v = a; v != 0; v = parent[static_cast<std::size_t>(v - 1)]) up.insert(v);
    for (int v = b; v != 0; v = parent[static_cast<std::size_t>(v - 1)]) {
        if (up.count(v)) return v;
    }
    return root();
}

std::vector<int> VertexTree::tree_path(int a, int b) const {
    const int top = lowest_common_ancestor(a, b);
    std::vector<int> out;
    for (int v = a; v != top; v = parent[static_cast<std::size_t>(v - 1)]) out.push_back(v);
    out.push_back(top);
    std::vector<int> down;
    for (int v = b; v != top; v = parent[static_cast<std::size_t>(v - 1)]) down.push_back(v);
    out.insert(out.end(), down.rbegin(), down.rend());
    return out;
}

VertexTree vertex_tree(const WellGraph& graph) {
    VertexTree t;
    for (const Edge& e : graph.edges()) {
        t.labels.push_back(graph.vertex_label(e.id));
        t.parent.push_back(e.parent);
        t.left.push_back(e.left_child);
        t.right.push_back(e.right_child);
    }
    t.rates = compute_rate_table(graph);
    return t;
}

VertexTree parse_vtable(const std::string& text) {
    struct Row {
        std::string child, parent;
        double up, down;
        int line;
    };
    std::vector<Row> rows;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto number = [&](const std::string& tok, int ln) {
        if (tok == "inf" || tok == "+inf" || tok == "infinity") return kInf;
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (tok.empty() || end != tok.c_str() + tok.size()) {
            fail(ErrorKind::Config, fmt::format("v-table line {}: bad number '{}'", ln, tok));
        }
        if (v < 0.0) {
            fail(ErrorKind::Config, fmt::format("v-table line {}: negative V {}", ln, tok));
        }
        return v;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string w; ls >> w;) tok.push_back(w);
        if (tok.empty()) continue;
        if (tok.size() < 3 || tok.size() > 4) {
            fail(ErrorKind::Config,
                 fmt::format("v-table line {}: expected 'child parent V_up [V_down]'", line_no));
        }
        rows.push_back({tok[0], tok[1], number(tok[2], line_no), tok.size() == 4 ? number(tok[3], line_no) : 0.0,
                        line_no});
    }
    if (rows.empty()) {
        fail(ErrorKind::Config, "v-table is empty");
    }
    std::map<std::string, long> key;
    auto register_label = [&](const std::string& l, int ln) {
        if (key.count(l)) return;
        if (l.size() < 2 || (l[0] != 'V' && l[0] != 'O') ||
            !std::all_of(l.begin() + 1, l.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
            fail(ErrorKind::Config, fmt::format("v-table line {}: label '{}' must be V<k> or O<k>", ln, l));
        }
        const long k = std::stol(l.substr(1));
        for (const auto& [other, ok] : key) {
            if (ok == k) {
                fail(ErrorKind::Config, fmt::format("v-table line {}: labels '{}' and '{}' share number {}", ln,
                                                    other, l, k));
            }
        }
        key[l] = k;
    };
    for (const Row& r : rows) {
        register_label(r.child, r.line);
        register_label(r.parent, r.line);
    }
    std::vector<std::pair<long, std::string>> order;
    for (const auto& [l, k] : key) order.emplace_back(k, l);
    std::sort(order.begin(), order.end());
    VertexTree t;
    std::map<std::string, int> id;
    for (const auto& [k, l] : order) {
        t.labels.push_back(l);
        id[l] = static_cast<int>(t.labels.size());
    }
    const auto n = t.labels.size();
    t.parent.assign(n, 0);
    t.left.assign(n, 0);
    t.right.assign(n, 0);
    t.rates.vertex_count = static_cast<int>(n);
    for (const Row& r : rows) {
        const int c = id[r.child];
        const int p = id[r.parent];
        if (c == p) fail(ErrorKind::Config, fmt::format("v-table line {}: self loop", r.line));
        auto& cp = t.parent[static_cast<std::size_t>(c - 1)];
        if (cp != 0) fail(ErrorKind::Config, fmt::format("v-table line {}: '{}' has two parents", r.line, r.child));
        cp = p;
        auto& l = t.left[static_cast<std::size_t>(p - 1)];
        auto& rr = t.right[static_cast<std::size_t>(p - 1)];
        if (l == 0) l = c;
        else if (rr == 0) rr = c;
        else fail(ErrorKind::Config, fmt::format("v-table line {}: '{}' has more than two children", r.line, r.parent));
        t.rates.entries[{c, p}] = {r.up, true};
        t.rates.entries[{p, c}] = {r.down, true};
    }
    int roots = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (t.parent[i] == 0) ++roots;
        if (t.left[i] != 0 && t.right[i] == 0) {
            fail(ErrorKind::Config, fmt::format("v-table: '{}' has a single child (merges are binary)", t.labels[i]));
        }
    }
    if (roots != 1) {
        fail(ErrorKind::Config, fmt::format("v-table must describe one tree, found {} roots", roots));
    }
    // Cycles in the parent relation would leave some vertex unreachable from the root.
    std::size_t reached = 0;
    std::function<void(int)> walk = [&](int v) {
        ++reached;
        if (reached > n) return;
        if (t.left[static_cast<std::size_t>(v - 1)] != 0) {
            walk(t.left[static_cast<std::size_t>(v - 1)]);
            walk(t.right[static_cast<std::size_t>(v - 1)]);
        }
    };
    walk(t.root());
    if (reached != n) fail(ErrorKind::Config, "v-table parent links do not form a tree");
    return t;
}

BranchTable parse_branch_list(const VertexTree& tree, const std::string& list) {
    std::vector<double> ps;
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (item.empty() || end != item.c_str() + item.size()) {
            fail(ErrorKind::Usage, fmt::format("bad branch probability '{}'", item));
        }
        ps.push_back(v);
    }
    const std::vector<int> interior = tree.interior_vertices();
    if (ps.size() != interior.size()) {
        fail(ErrorKind::Usage, fmt::format("--branch needs {} probabilities (one per interior vertex), got {}",
                                           interior.size(), ps.size()));
    }
    BranchTable b;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!(ps[i] >= 0.0 && ps[i] <= 1.0)) {
            fail(ErrorKind::Usage, fmt::format("branch probability {} outside [0, 1]", ps[i]));
        }
        b[interior[i]] = ps[i];
    }
    return b;
}

std::vector<double> descend_distribution(const VertexTree& tree, int vertex, const BranchTable& branch) {
    const std::vector<int> ext = tree.exterior_vertices();
    std::vector<double> out(ext.size(), 0.0);
    std::function<void(int, double)> walk = [&](int v, double mass) {
        if (tree.exterior(v)) {
            const auto pos = std::find(ext.begin(), ext.end(), v) - ext.begin();
            out[static_cast<std::size_t>(pos)] += mass;
            return;
        }
        auto it = branch.find(v);
        if (it == branch.end()) {
            fail(ErrorKind::Usage, fmt::format("no branch probability for {}", tree.label(v)));
        }
        const double p = it->second;
        if (p > 0.0) walk(tree.left[static_cast<std::size_t>(v - 1)], mass * p);
        if (p < 1.0) walk(tree.right[static_cast<std::size_t>(v - 1)], mass * (1.0 - p));
    };
    walk(vertex, 1.0);
    return out;
}

std::vector<std::vector<double>> exterior_V(const VertexTree& tree) {
    RateTable t = tree.rates;
    t.vertex_count = tree.size();
    const auto full = pairwise_quasipotential(t);
    const std::vector<int> ext = tree.exterior_vertices();
    std::vector<std::vector<double>> out(ext.size(), std::vector<double>(ext.size()));
    for (std::size_t i = 0; i < ext.size(); ++i)
        for (std::size_t j = 0; j < ext.size(); ++j)
            out[i][j] = full[static_cast<std::size_t>(ext[i] - 1)][static_cast<std::size_t>(ext[j] - 1)];
    return out;
}

WGraphResult w_graph_min(const std::vector<std::vector<double>>& V, const std::vector<bool>& sink) {
    const std::size_t n = V.size();
    if (n > 12) {
        fail(ErrorKind::Usage, fmt::format("W-graph enumeration supports at most 12 states, got {}", n));
    }
    if (sink.size() != n) {
        fail(ErrorKind::Usage, "sink mask size mismatch");
    }
    WGraphResult res;
    std::vector<int> free_states;
    for (std::size_t i = 0; i < n; ++i)
        if (!sink[i]) free_states.push_back(static_cast<int>(i));
    if (free_states.empty()) {
        res.minimizers.push_back(std::vector<int>(n, -1));
        return res;
    }
    if (free_states.size() == n) {
        res.value = kInf;
        return res;
    }
    // Candidate arrows per free state, cheapest first.
    std::vector<std::vector<int>> options(n);
    std::vector<double> cheapest(n, kInf);
    for (int i : free_states) {
        for (std::size_t j = 0; j < n; ++j) {
            if (static_cast<int>(j) == i || !std::isfinite(V[static_cast<std::size_t>(i)][j])) continue;
            options[static_cast<std::size_t>(i)].push_back(static_cast<int>(j));
        }
        auto& o = options[static_cast<std::size_t>(i)];
        std::stable_sort(o.begin(), o.end(), [&](int a, int b) {
            return V[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] <
                   V[static_cast<std::size_t>(i)][static_cast<std::size_t>(b)];
        });
        if (o.empty()) {
            res.value = kInf;
            return res;
        }
        cheapest[static_cast<std::size_t>(i)] = V[static_cast<std::size_t>(i)][static_cast<std::size_t>(o.front())];
    }
    std::vector<double> suffix(free_states.size() + 1, 0.0);
    for (std::size_t k = free_states.size(); k-- > 0;) {
        suffix[k] = suffix[k + 1] + cheapest[static_cast<std::size_t>(free_states[k])];
    }
    constexpr std::size_t kMaxMinimizers = 100000;
    double best = kInf;
    std::vector<int> arrow(n, -1);
    std::function<void(std::size_t, double)> dfs = [&](std::size_t k, double partial) {
        const double bound = partial + suffix[k];
        if (bound > best && !nearly_equal(bound, best)) return;
        if (k == free_states.size()) {
            if (partial < best && !nearly_equal(partial, best)) {
                best = partial;
                res.minimizers.clear();
            }
            if (res.minimizers.size() < kMaxMinimizers) res.minimizers.push_back(arrow);
            return;
        }
        const int i = free_states[k];
        for (int j : options[static_cast<std::size_t>(i)]) {
            // Reject arrows closing a loop through already-assigned states.
            int w = j;
            bool loop = false;
            while (!sink[static_cast<std::size_t>(w)] && arrow[static_cast<std::size_t>(w)] >= 0) {
                w = arrow[static_cast<std::size_t>(w)];
                if (w == i) {
                    loop = true;
                    break;
                }
            }
            if (loop) continue;
            arrow[static_cast<std::size_t>(i)] = j;
            dfs(k + 1, partial + V[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            arrow[static_cast<std::size_t>(i)] = -1;
        }
    };
    dfs(0, 0.0);
    res.value = best;
    if (!std::isfinite(best)) res.minimizers.clear();
    return res;
}

namespace {

struct HierarchyContext {
    const VertexTree& tree;
    std::vector<int> states;  // exterior ids
    std::vector<std::vector<double>> V;

    int index_of(int vertex) const {
        return static_cast<int>(std::find(states.begin(), states.end(), vertex) - states.begin());
    }

    Cycle evaluate(std::vector<int> members, int rank) const {
        std::sort(members.begin(), members.end());
        Cycle c;
        c.rank = rank;
        c.members = members;
        std::set<int> pres(members.begin(), members.end());
        for (std::size_t i = 0; i < members.size(); ++i)
            for (std::size_t j = i + 1; j < members.size(); ++j)
                for (int v : tree.tree_path(members[i], members[j])) pres.insert(v);
        c.presentation.assign(pres.begin(), pres.end());

        std::vector<bool> sink(states.size(), true);
        std::vector<int> idx;
        for (int m : members) {
            sink[static_cast<std::size_t>(index_of(m))] = false;
            idx.push_back(index_of(m));
        }
        const WGraphResult outer = w_graph_min(V, sink);
        c.a = outer.value;
        if (members.size() == 1) {
            c.internal_min = 0.0;
        } else {
            const auto sub = submatrix(V, idx);
            c.internal_min = kInf;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                std::vector<bool> s(idx.size(), false);
                s[i] = true;
                c.internal_min = std::min(c.internal_min, w_graph_min(sub, s).value);
            }
        }
        c.c = std::isfinite(c.a) ? c.a - c.internal_min : kInf;
        std::set<std::pair<int, int>> arrows;
        std::set<int> landings;
        for (const auto& g : outer.minimizers) {
            for (int m : members) {
                const int to = g[static_cast<std::size_t>(index_of(m))];
                if (to < 0 || !sink[static_cast<std::size_t>(to)]) continue;
                const int tv = states[static_cast<std::size_t>(to)];
                arrows.insert({m, tv});
                landings.insert(tree.lowest_common_ancestor(m, tv));
            }
        }
        c.exit_arrows.assign(arrows.begin(), arrows.end());
        c.landings.assign(landings.begin(), landings.end());
        return c;
    }
};

std::string arrows_text(const VertexTree& tree, const Cycle& c) {
    std::string s;
    for (const auto& [a, b] : c.exit_arrows) {
        if (!s.empty()) s += ", ";
        s += fmt::format("{}->{}", tree.label(a), tree.label(b));
    }
    return s;
}

std::string members_text(const VertexTree& tree, const std::vector<int>& members) {
    std::string s = "{";
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (i) s += ",";
        s += tree.label(members[i]);
    }
    return s + "}";
}

}  // namespace

CycleReport cycle_hierarchy(const VertexTree& tree) {
    HierarchyContext ctx{tree, tree.exterior_vertices(), exterior_V(tree)};
    CycleReport rep;
    rep.states = ctx.states;
    const std::size_t n = ctx.states.size();
    if (n > 12) {
        fail(ErrorKind::Usage, fmt::format("cycle hierarchy supports at most 12 exterior vertices, got {}", n));
    }
    std::vector<int> current;
    for (int v : ctx.states) {
        Cycle c = ctx.evaluate({v}, 0);
        c.index = static_cast<int>(rep.cycles.size());
        current.push_back(c.index);
        rep.cycles.push_back(std::move(c));
    }
    while (current.size() > 1) {
        // Arrows between current cycles along each cycle's minimal exit.
        const std::size_t m = current.size();
        auto owner = [&](int vertex) {
            for (std::size_t k = 0; k < m; ++k) {
                const auto& mem = rep.cycles[static_cast<std::size_t>(current[k])].members;
                if (std::find(mem.begin(), mem.end(), vertex) != mem.end()) return k;
            }
            fail(ErrorKind::Invariant, "exterior vertex outside every cycle");
        };
        std::vector<std::vector<bool>> reach(m, std::vector<bool>(m, false));
        for (std::size_t k = 0; k < m; ++k) {
            const Cycle& c = rep.cycles[static_cast<std::size_t>(current[k])];
            if (!std::isfinite(c.c)) continue;
            if (c.landings.size() > 1) {
                fail(ErrorKind::Config,
                     fmt::format("tie in V: minimal exits of {} ({}) land at different vertices",
                                 members_text(tree, c.members), arrows_text(tree, c)));
            }
            for (int leaf : tree.subtree_exterior(c.landings.front())) {
                const std::size_t o = owner(leaf);
                if (o != k) reach[k][o] = true;
            }
        }
        for (std::size_t k = 0; k < m; ++k) reach[k][k] = true;
        for (std::size_t via = 0; via < m; ++via)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    if (reach[i][via] && reach[via][j]) reach[i][j] = true;
        std::vector<bool> used(m, false);
        std::vector<int> next;
        bool merged_any = false;
        for (std::size_t i = 0; i < m; ++i) {
            if (used[i]) continue;
            std::vector<std::size_t> scc;
            for (std::size_t j = 0; j < m; ++j)
                if (!used[j] && reach[i][j] && reach[j][i]) scc.push_back(j);
            for (std::size_t j : scc) used[j] = true;
            if (scc.size() == 1) {
                next.push_back(current[i]);
                continue;
            }
            merged_any = true;
            std::vector<int> members;
            int max_rank = 0;
            for (std::size_t j : scc) {
                const Cycle& c = rep.cycles[static_cast<std::size_t>(current[j])];
                members.insert(members.end(), c.members.begin(), c.members.end());
                max_rank = std::max(max_rank, c.rank);
            }
            Cycle c = ctx.evaluate(members, max_rank + 1);
            c.index = static_cast<int>(rep.cycles.size());
            for (std::size_t j : scc) rep.cycles[static_cast<std::size_t>(current[j])].parent = c.index;
            next.push_back(c.index);
            rep.cycles.push_back(std::move(c));
        }
        if (!merged_any) {
            rep.notes.push_back("hierarchy stops before a single cycle: remaining cycles have no finite exit");
            break;
        }
        current = std::move(next);
    }
    return rep;
}

ExitProfile exit_profile(const VertexTree& tree, const Cycle& cycle, const BranchTable& branch) {
    ExitProfile p;
    p.exponent = cycle.c;
    p.landings = cycle.landings;
    p.multi_landing = cycle.landings.size() > 1;
    if (std::isfinite(cycle.c) && cycle.landings.size() == 1) {
        p.distribution = descend_distribution(tree, cycle.landings.front(), branch);
    }
    return p;
}

void metastable_timeline(const VertexTree& tree, CycleReport& rep, const BranchTable& branch,
                         const std::vector<double>& u0) {
    const std::size_t n = rep.states.size();
    if (u0.size() != n) {
        fail(ErrorKind::Usage, fmt::format("start distribution has {} entries, expected {}", u0.size(), n));
    }
    double total = 0.0;
    for (double x : u0) {
        if (!(x >= 0.0)) fail(ErrorKind::Usage, "start distribution has a negative entry");
        total += x;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        fail(ErrorKind::Usage, fmt::format("start distribution sums to {:.17g}, not 1", total));
    }
    std::vector<double> thresholds;
    for (const Cycle& c : rep.cycles) {
        if (!std::isfinite(c.c)) continue;
        for (const Cycle& d : rep.cycles) {
            if (d.index < c.index && std::isfinite(d.c) && nearly_equal(c.c, d.c)) {
                fail(ErrorKind::Config, fmt::format("tie in C: cycles {} and {} share exponent {:.17g}",
                                                    members_text(tree, d.members), members_text(tree, c.members),
                                                    c.c));
            }
        }
        thresholds.push_back(c.c);
    }
    std::sort(thresholds.begin(), thresholds.end());
    const auto full_V = exterior_V(tree);

    // Chain of enclosing cycles per state, innermost first.
    std::vector<std::vector<int>> chain(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const Cycle& c : rep.cycles) {
            if (c.members.size() == 1 && c.members.front() == rep.states[i]) {
                for (int k = c.index; k >= 0; k = rep.cycles[static_cast<std::size_t>(k)].parent) chain[i].push_back(k);
            }
        }
    }

    rep.timeline.clear();
    std::vector<double> u = u0;
    rep.timeline.push_back({0.0, thresholds.empty() ? kInf : thresholds.front(), u});
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        const double s = thresholds[t];
        std::vector<std::vector<double>> P(n, std::vector<double>(n, 0.0));
        std::vector<bool> absorbing(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            int chosen = -1;
            for (int k : chain[i]) {
                if (rep.cycles[static_cast<std::size_t>(k)].c <= s) chosen = k;
            }
            if (chosen < 0) {
                absorbing[i] = true;
                P[i][i] = 1.0;
                continue;
            }
            const ExitProfile ex = exit_profile(tree, rep.cycles[static_cast<std::size_t>(chosen)], branch);
            if (ex.multi_landing) {
                fail(ErrorKind::Config, fmt::format("tie in V: cycle {} has several exit landings ({})",
                                                    members_text(tree, rep.cycles[static_cast<std::size_t>(chosen)].members),
                                                    arrows_text(tree, rep.cycles[static_cast<std::size_t>(chosen)])));
            }
            P[i] = ex.distribution;
        }
        // Closed classes without an absorbing state settle on their ground state.
        std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
        for (std::size_t i = 0; i < n; ++i) {
            reach[i][i] = true;
            for (std::size_t j = 0; j < n; ++j)
                if (P[i][j] > 0.0) reach[i][j] = true;
        }
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    if (reach[i][k] && reach[k][j]) reach[i][j] = true;
        std::vector<bool> seen(n, false);
        for (std::size_t i = 0; i < n; ++i) {
            if (seen[i]) continue;
            std::vector<int> cls;
            for (std::size_t j = 0; j < n; ++j)
                if (reach[i][j] && reach[j][i]) cls.push_back(static_cast<int>(j));
            for (int j : cls) seen[static_cast<std::size_t>(j)] = true;
            bool closed = true;
            for (int a : cls)
                for (std::size_t b = 0; b < n; ++b)
                    if (reach[static_cast<std::size_t>(a)][b] && std::find(cls.begin(), cls.end(), static_cast<int>(b)) == cls.end())
                        closed = false;
            if (!closed) continue;
            if (cls.size() == 1 && absorbing[static_cast<std::size_t>(cls.front())]) continue;
            const auto sub = submatrix(full_V, cls);
            double best = kInf;
            int ground = -1;
            bool tie = false;
            for (std::size_t k = 0; k < cls.size(); ++k) {
                std::vector<bool> sink(cls.size(), false);
                sink[k] = true;
                const double w = cls.size() == 1 ? 0.0 : w_graph_min(sub, sink).value;
                if (ground >= 0 && nearly_equal(w, best)) tie = true;
                if (w < best && !nearly_equal(w, best)) {
                    best = w;
                    ground = cls[k];
                    tie = false;
                }
            }
            if (tie || ground < 0) {
                fail(ErrorKind::Config, fmt::format("tie in V: recurrent class {} has no unique ground state at scale {:g}",
                                                    members_text(tree, [&] {
                                                        std::vector<int> v;
                                                        for (int c : cls) v.push_back(rep.states[static_cast<std::size_t>(c)]);
                                                        return v;
                                                    }()),
                                                    s));
            }
            const auto g = static_cast<std::size_t>(ground);
            absorbing[g] = true;
            std::fill(P[g].begin(), P[g].end(), 0.0);
            P[g][g] = 1.0;
        }
        std::vector<int> trans, absb;
        for (std::size_t i = 0; i < n; ++i) (absorbing[i] ? absb : trans).push_back(static_cast<int>(i));
        std::vector<double> next(n, 0.0);
        for (int a : absb) next[static_cast<std::size_t>(a)] = u[static_cast<std::size_t>(a)];
        if (!trans.empty()) {
            const auto nt = static_cast<Eigen::Index>(trans.size());
            const auto na = static_cast<Eigen::Index>(absb.size());
            Eigen::MatrixXd A = Eigen::MatrixXd::Identity(nt, nt);
            Eigen::MatrixXd R(nt, na);
            for (Eigen::Index i = 0; i < nt; ++i) {
                const auto& row = P[static_cast<std::size_t>(trans[static_cast<std::size_t>(i)])];
                for (Eigen::Index j = 0; j < nt; ++j) A(i, j) -= row[static_cast<std::size_t>(trans[static_cast<std::size_t>(j)])];
                for (Eigen::Index j = 0; j < na; ++j) R(i, j) = row[static_cast<std::size_t>(absb[static_cast<std::size_t>(j)])];
            }
            const Eigen::MatrixXd B = A.partialPivLu().solve(R);
            for (Eigen::Index i = 0; i < nt; ++i) {
                const double mass = u[static_cast<std::size_t>(trans[static_cast<std::size_t>(i)])];
                if (mass == 0.0) continue;
                for (Eigen::Index j = 0; j < na; ++j) {
                    next[static_cast<std::size_t>(absb[static_cast<std::size_t>(j)])] += mass * std::max(0.0, B(i, j));
                }
            }
        }
        // Absorption conserves mass; renormalising removes the solve's rounding drift.
        const double mass = std::accumulate(next.begin(), next.end(), 0.0);
        for (double& x : next) x /= mass;
        u = next;
        rep.timeline.push_back({s, t + 1 < thresholds.size() ? thresholds[t + 1] : kInf, u});
    }
}

}  // namespace nelastic
