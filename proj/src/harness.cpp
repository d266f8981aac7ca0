#include "harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "averaging.hpp"
#include "error.hpp"
#include "kernels.hpp"
#include "ladder.hpp"
#include "meta.hpp"
#include "microsim.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "rate.hpp"

namespace nelastic {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Stream ids per subcommand so that commands never share random numbers.
enum StreamId : std::uint64_t { kSimulate = 1, kAverage = 2, kBranching = 3, kRare = 5, kValidate = 7 };

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Token {
    std::string text;
    int column = 1;
};

std::vector<Token> tokenize(const std::string& line) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        if (i >= line.size()) break;
        const std::size_t b = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        out.push_back({line.substr(b, i - b), static_cast<int>(b) + 1});
    }
    return out;
}

[[noreturn]] void grammar(int line, int column, const std::string& msg) {
    fail(ErrorKind::Config, fmt::format("config line {}, column {}: {}", line, column, msg));
}

double to_double(const Token& t, int line, bool allow_inf = false) {
    if (allow_inf && (t.text == "inf" || t.text == "+inf")) return kInf;
    char* end = nullptr;
    const double v = std::strtod(t.text.c_str(), &end);
    if (t.text.empty() || end != t.text.c_str() + t.text.size() || !std::isfinite(v)) {
        grammar(line, t.column, fmt::format("expected a number, got '{}'", t.text));
    }
    return v;
}

std::uint64_t to_u64(const Token& t, int line) {
    if (t.text.empty() || !std::all_of(t.text.begin(), t.text.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
        grammar(line, t.column, fmt::format("expected a non-negative integer, got '{}'", t.text));
    }
    try {
        return std::stoull(t.text);
    } catch (const std::exception&) {
        grammar(line, t.column, fmt::format("integer '{}' out of range", t.text));
    }
}

std::vector<double> to_list(const Token& t, int line) {
    std::vector<double> out;
    std::stringstream ss(t.text);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(to_double({item, t.column}, line));
    if (out.empty()) grammar(line, t.column, "empty list");
    return out;
}

std::string fmt_num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return fmt::format("{:.17g}", x);
}

json jnum(double x) {
    if (std::isfinite(x)) return x;
    return fmt_num(x);
}

}  // namespace

std::uint64_t fnv1a(const std::string& bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, fmt::format("cannot read '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string resolve_out_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("NELASTIC_OUT_DIR"); env != nullptr && *env != '\0') return env;
    return "nelastic-out";
}

Config parse_config(const std::string& text) {
    Config cfg;
    cfg.text = text;
    std::string section;
    std::vector<std::pair<double, double>> walls;  // position, height (inf at the ends)
    std::vector<int> wall_lines;
    std::map<int, std::pair<double, int>> floors;  // leaf -> floor, line
    std::optional<KickPair> default_kicks;
    std::map<int, std::pair<KickPair, int>> kicks;
    std::optional<double> cap;
    std::set<std::string> seen_sections;

    static const std::regex kick_re(R"((xi|eta)\s*=\s*([A-Za-z\-]+\s*\([^)]*\)))");
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const std::string t = trim(line);
        if (t.front() == '[') {
            if (t.back() != ']') grammar(line_no, static_cast<int>(line.find('[')) + 1, "unterminated section header");
            section = t.substr(1, t.size() - 2);
            static const std::set<std::string> known{"walls", "floors", "kicks", "sim", "analysis"};
            if (!known.count(section)) {
                grammar(line_no, static_cast<int>(line.find('[')) + 2, fmt::format("unknown section '{}'", section));
            }
            if (!seen_sections.insert(section).second) {
                grammar(line_no, 1, fmt::format("section [{}] appears twice", section));
            }
            if (section == "kicks") cfg.has_kicks = true;
            continue;
        }
        if (section.empty()) grammar(line_no, 1, "content before the first section header");
        if (section == "walls") {
            const auto tok = tokenize(line);
            if (tok.size() > 2) grammar(line_no, tok[2].column, "expected 'position [height]'");
            const double pos = to_double(tok[0], line_no);
            const double h = tok.size() == 2 ? to_double(tok[1], line_no, true) : kInf;
            walls.emplace_back(pos, h);
            wall_lines.push_back(line_no);
        } else if (section == "floors") {
            const auto tok = tokenize(line);
            if (tok.size() != 2) grammar(line_no, tok.back().column, "expected '<well> <floor>'");
            const auto well = static_cast<int>(to_u64(tok[0], line_no));
            if (floors.count(well)) grammar(line_no, tok[0].column, fmt::format("floor of well {} given twice", well));
            floors[well] = {to_double(tok[1], line_no), line_no};
        } else if (section == "kicks") {
            const auto tok = tokenize(line);
            std::map<std::string, std::string> spec;
            for (auto it = std::sregex_iterator(line.begin(), line.end(), kick_re); it != std::sregex_iterator(); ++it) {
                spec[(*it)[1]] = (*it)[2];
            }
            if (!spec.count("xi") || !spec.count("eta")) {
                grammar(line_no, tok.size() > 1 ? tok[1].column : 1, "expected '<well|default> xi=<dist> eta=<dist>'");
            }
            KickPair pair;
            try {
                pair.xi = PerturbationSpec::parse(spec["xi"]);
                pair.eta = PerturbationSpec::parse(spec["eta"]);
            } catch (const Error& e) {
                grammar(line_no, static_cast<int>(line.find("xi")) + 1, e.what());
            }
            if (tok[0].text == "default") {
                if (default_kicks) grammar(line_no, 1, "default kicks given twice");
                default_kicks = pair;
            } else {
                const auto well = static_cast<int>(to_u64(tok[0], line_no));
                if (kicks.count(well)) grammar(line_no, tok[0].column, fmt::format("kicks of well {} given twice", well));
                kicks[well] = {pair, line_no};
            }
        } else {
            std::string key, value;
            int value_col = 1;
            if (auto eq = line.find('='); eq != std::string::npos) {
                key = trim(line.substr(0, eq));
                value = trim(line.substr(eq + 1));
                value_col = static_cast<int>(line.find_first_not_of(" \t", eq + 1)) + 1;
            } else {
                const auto tok = tokenize(line);
                if (tok.size() != 2) grammar(line_no, tok.front().column, "expected 'key = value'");
                key = tok[0].text;
                value = tok[1].text;
                value_col = tok[1].column;
            }
            const Token v{value, value_col};
            const int key_col = static_cast<int>(line.find_first_not_of(" \t")) + 1;
            if (section == "sim") {
                if (key == "epsilon") cfg.sim.epsilon = to_double(v, line_no);
                else if (key == "horizon") cfg.sim.horizon = to_double(v, line_no);
                else if (key == "grid_dt") cfg.sim.grid_dt = to_double(v, line_no);
                else if (key == "replicas") cfg.sim.replicas = to_u64(v, line_no);
                else if (key == "seed") cfg.sim.seed = to_u64(v, line_no);
                else if (key == "energy_cap") cap = to_double(v, line_no);
                else if (key == "h0") cfg.sim.h0 = to_double(v, line_no);
                else if (key == "q0") cfg.sim.q0 = to_double(v, line_no);
                else grammar(line_no, key_col, fmt::format("unknown [sim] key '{}'", key));
            } else {
                auto& a = cfg.analysis;
                if (key == "method") a.method = value;
                else if (key == "budget") a.budget = to_u64(v, line_no);
                else if (key == "grid_points") a.grid_points = static_cast<int>(to_u64(v, line_no));
                else if (key == "parity_level") a.parity_level = to_double(v, line_no);
                else if (key == "branch") a.branch = value;
                else if (key == "segments") a.segments = static_cast<int>(to_u64(v, line_no));
                else if (key == "rare_edge") a.rare_edge = static_cast<int>(to_u64(v, line_no));
                else if (key == "rare_h0") a.rare_h0 = to_double(v, line_no);
                else if (key == "rare_delta_h") a.rare_delta_h = to_list(v, line_no);
                else if (key == "rare_epsilons") a.rare_epsilons = to_list(v, line_no);
                else if (key == "rare_horizon") a.rare_horizon = to_double(v, line_no);
                else if (key == "rare_budget") a.rare_budget = to_u64(v, line_no);
                else if (key == "rare_method") a.rare_method = value;
                else grammar(line_no, key_col, fmt::format("unknown [analysis] key '{}'", key));
            }
        }
    }
    if (walls.size() < 2) fail(ErrorKind::Config, "config needs a [walls] section with at least two walls");
    const auto n = walls.size();
    for (std::size_t i = 0; i < n; ++i) {
        const bool end = i == 0 || i + 1 == n;
        if (!end && !std::isfinite(walls[i].second)) {
            grammar(wall_lines[i], 1, fmt::format("interior wall {} needs a finite height", i + 1));
        }
        if (end && std::isfinite(walls[i].second)) {
            grammar(wall_lines[i], 1, "end walls are infinitely high; drop the height or write 'inf'");
        }
        cfg.system.wall_positions.push_back(walls[i].first);
        if (!end) cfg.system.interior_heights.push_back(walls[i].second);
    }
    const int leaves = static_cast<int>(n) - 1;
    for (const auto& [well, f] : floors) {
        if (well < 1 || well > leaves) {
            grammar(f.second, 1, fmt::format("well {} is not a leaf well (1..{})", well, leaves));
        }
    }
    for (int w = 1; w <= leaves; ++w) {
        if (!floors.count(w)) fail(ErrorKind::Config, fmt::format("[floors] is missing well {}", w));
        cfg.system.leaf_floors.push_back(floors[w].first);
    }
    double top = 0.0;
    for (double h : cfg.system.interior_heights) top = std::max(top, h);
    for (double f : cfg.system.leaf_floors) top = std::max(top, f);
    cfg.system.energy_cap = cap ? *cap : 2.0 * top + 1.0;
    const int edges = 2 * leaves - 1;
    if (cfg.has_kicks) {
        for (const auto& [well, k] : kicks) {
            if (well < 1 || well > edges) {
                grammar(k.second, 1, fmt::format("well {} does not exist (1..{})", well, edges));
            }
        }
        for (int w = 1; w <= edges; ++w) {
            if (kicks.count(w)) cfg.system.kicks.push_back(kicks[w].first);
            else if (default_kicks) cfg.system.kicks.push_back(*default_kicks);
            else fail(ErrorKind::Config, fmt::format("[kicks] is missing well {} and has no default", w));
            validate_kick_pair(cfg.system.kicks.back());
        }
    }
    // Topology invariants are enforced here, at parse time.
    (void)build_graph(cfg.system);
    return cfg;
}

namespace {

namespace fs = std::filesystem;

struct Context {
    RunRequest req;
    std::optional<Config> cfg;
    std::optional<WellGraph> graph;
    std::uint64_t seed = 1;
    fs::path out;
    std::vector<RunOutput> outputs;
    json summary = json::object();
    std::string text;
    bool checks_failed = false;

    void write(const std::string& name, const std::string& content) {
        const fs::path p = out / name;
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorKind::Io, fmt::format("cannot write '{}'", p.string()));
        f << content;
        if (!f) fail(ErrorKind::Io, fmt::format("write failed for '{}'", p.string()));
        outputs.push_back({name, fnv1a(content)});
    }

    const Config& config() const {
        if (!cfg) fail(ErrorKind::Usage, fmt::format("'{}' needs --config", req.command));
        return *cfg;
    }

    const WellGraph& kicked_graph() const {
        if (!config().has_kicks) fail(ErrorKind::Config, fmt::format("'{}' needs a [kicks] section", req.command));
        return *graph;
    }

    double epsilon() const { return req.epsilon ? *req.epsilon : config().sim.epsilon; }
    std::uint64_t replicas() const { return req.replicas ? *req.replicas : config().sim.replicas; }
    std::string method() const { return req.method ? *req.method : (cfg ? cfg->analysis.method : "ladder"); }
};

json graph_json(const WellGraph& g) {
    json edges = json::array();
    for (const Edge& e : g.edges()) {
        edges.push_back({{"id", e.id},
                         {"vertex", g.vertex_label(e.id)},
                         {"bottom", jnum(e.bottom)},
                         {"top", jnum(e.top)},
                         {"width", jnum(e.width)},
                         {"walls", {e.left_wall + 1, e.right_wall + 1}},
                         {"parent", e.parent},
                         {"children", e.leaf() ? json::array() : json{e.left_child, e.right_child}},
                         {"xi", e.kicks.xi.text()},
                         {"eta", e.kicks.eta.text()}});
    }
    return {{"edges", edges}, {"root", g.root()}, {"energy_cap", jnum(g.energy_cap())}};
}

std::pair<double, double> start_point(const Context& c) {
    const WellGraph& g = *c.graph;
    const Edge& root = g.edge(g.root());
    const double h0 = c.config().sim.h0 ? *c.config().sim.h0 : 0.5 * (root.bottom + root.top);
    double q0 = 0.0;
    if (c.config().sim.q0) {
        q0 = *c.config().sim.q0;
    } else {
        // Middle of the widest leaf-to-root chain containing h0: pick the edge at h0 on the root's path.
        int e = g.root();
        while (h0 < g.edge(e).bottom && !g.is_leaf(e)) e = g.edge(e).left_child;
        q0 = 0.5 * (g.wall_position(g.edge(e).left_wall) + g.wall_position(g.edge(e).right_wall));
        if (!g.is_leaf(e) && q0 == g.split_position(e)) {
            q0 = 0.5 * (g.wall_position(g.edge(e).left_wall) + q0);
        }
    }
    return {h0, q0};
}

double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) return std::nan("");
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::min(v.size() - 1, k == 0 ? 0 : k - 1)];
}

std::string gnuplot(const std::string& csv, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::string& using_cols) {
    return fmt::format(
        "set datafile separator ','\nset key autotitle columnhead\nset title '{}'\nset xlabel '{}'\n"
        "set ylabel '{}'\nplot '{}' using {} with lines\n",
        title, xlabel, ylabel, csv, using_cols);
}

// ---- simulate ----

struct SimRow {
    std::uint64_t replica = 0;
    std::uint64_t collisions = 0;
    int final_edge = 0;
    double final_energy = 0.0;
    double h_hat_end = 0.0;
    bool cap = false;
};

struct SimPartial {
    std::vector<SimRow> rows;
    std::vector<GridSample> grid0;
    std::vector<CollisionEvent> events0;
    void merge(const SimPartial& o) {
        rows.insert(rows.end(), o.rows.begin(), o.rows.end());
        if (grid0.empty()) grid0 = o.grid0;
        if (events0.empty()) events0 = o.events0;
    }
};

void cmd_simulate(Context& c) {
    const WellGraph& g = c.kicked_graph();
    const auto [h0, q0] = start_point(c);
    RunOptions opt;
    opt.epsilon = c.epsilon();
    opt.horizon = c.config().sim.horizon;
    opt.grid_dt = c.config().sim.grid_dt;
    const Stream base(c.seed, kSimulate);
    const SimPartial all = replicate<SimPartial>(c.replicas(), 1, [&](std::uint64_t, std::uint64_t b, std::uint64_t e) {
        SimPartial p;
        for (std::uint64_t r = b; r < e; ++r) {
            Stream s = base.substream(r);
            RunOptions o = opt;
            o.record_events = r == 0;
            TrajectoryRecord rec = run(g, h0, q0, o, s);
            p.rows.push_back({r, rec.collisions, rec.final_state.edge, rec.final_state.energy,
                              rec.grid.empty() ? h0 : rec.grid.back().h_hat, rec.cap_exceeded});
            if (r == 0) {
                p.grid0 = std::move(rec.grid);
                p.events0 = std::move(rec.events);
            }
        }
        return p;
    });
    std::string traj = "t,H_step,H_hat,edge\n";
    for (const GridSample& s : all.grid0) {
        traj += fmt::format("{},{},{},{}\n", fmt_num(s.t), fmt_num(s.h_step), fmt_num(s.h_hat), s.edge);
    }
    std::string events = "t,side,kick,H_pre,H_post,edge\n";
    for (const CollisionEvent& e : all.events0) {
        events += fmt::format("{},{},{},{},{},{}\n", fmt_num(e.t), e.side == Side::Left ? "left" : "right",
                              fmt_num(e.kick), fmt_num(e.h_pre), fmt_num(e.h_post), e.edge);
    }
    std::string reps = "replica,collisions,final_edge,final_energy,h_hat_end,cap_exceeded\n";
    std::uint64_t capped = 0;
    for (const SimRow& r : all.rows) {
        reps += fmt::format("{},{},{},{},{},{}\n", r.replica, r.collisions, r.final_edge, fmt_num(r.final_energy),
                            fmt_num(r.h_hat_end), r.cap ? 1 : 0);
        capped += r.cap ? 1 : 0;
    }
    c.write("trajectory.csv", traj);
    c.write("events.csv", events);
    c.write("replicas.csv", reps);
    c.write("trajectory.gp", gnuplot("trajectory.csv", "energy of replica 0", "t", "H", "1:3"));
    c.summary = {{"replicas", all.rows.size()}, {"h0", jnum(h0)}, {"q0", jnum(q0)}, {"epsilon", jnum(opt.epsilon)},
                 {"horizon", jnum(opt.horizon)}, {"cap_exceeded", capped}};
    c.text = fmt::format("simulated {} replicas (epsilon {:g}, horizon {:g}); {} hit the energy cap\n",
                         all.rows.size(), opt.epsilon, opt.horizon, capped);
}

// ---- average ----

struct AvgRow {
    std::uint64_t replica = 0;
    double sup = 0.0;
    double first_vertex_time = 0.0;
    bool agree = true;
};

struct AvgPartial {
    std::vector<AvgRow> rows;
    void merge(const AvgPartial& o) { rows.insert(rows.end(), o.rows.begin(), o.rows.end()); }
};

void cmd_average(Context& c) {
    const WellGraph& g = c.kicked_graph();
    const auto [h0, q0] = start_point(c);
    const int start = g.locate(h0, q0);
    Decisions left;
    for (int v : g.interior_vertices()) left[v] = Side::Left;
    const GraphPath path = limit_path(g, start, h0, left);
    RunOptions opt;
    opt.epsilon = c.epsilon();
    opt.horizon = c.config().sim.horizon;
    opt.grid_dt = c.config().sim.grid_dt;
    const Stream base(c.seed, kAverage);
    const AvgPartial all = replicate<AvgPartial>(c.replicas(), 1, [&](std::uint64_t, std::uint64_t b, std::uint64_t e) {
        AvgPartial p;
        for (std::uint64_t r = b; r < e; ++r) {
            Stream s = base.substream(r);
            const TrajectoryRecord rec = run(g, h0, q0, opt, s);
            const ComparisonReport cmp = compare(g, rec, path);
            p.rows.push_back({r, cmp.sup_before_vertex, cmp.first_vertex_time, cmp.branches_agree});
        }
        return p;
    });
    std::string lp = "t,H,edge\n";
    const double t_end = std::min(opt.horizon, path.end_time());
    const auto steps = static_cast<std::uint64_t>(std::floor(t_end / opt.grid_dt + 1e-9));
    for (std::uint64_t k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) * opt.grid_dt;
        lp += fmt::format("{},{},{}\n", fmt_num(t), fmt_num(path.energy_at(t)), path.edge_at(t));
    }
    std::string errs = "replica,sup_error,relative_error,first_vertex_time,branches_agree\n";
    std::vector<double> rel;
    std::uint64_t agree = 0;
    for (const AvgRow& r : all.rows) {
        errs += fmt::format("{},{},{},{},{}\n", r.replica, fmt_num(r.sup), fmt_num(r.sup / h0),
                            fmt_num(r.first_vertex_time), r.agree ? 1 : 0);
        rel.push_back(r.sup / h0);
        agree += r.agree ? 1 : 0;
    }
    std::sort(rel.begin(), rel.end());
    c.summary = {{"replicas", all.rows.size()},
                 {"epsilon", jnum(opt.epsilon)},
                 {"h0", jnum(h0)},
                 {"first_vertex_time", jnum(path.segments.empty() ? 0.0 : path.segments.front().t1)},
                 {"median_relative_error", jnum(quantile_sorted(rel, 0.5))},
                 {"p95_relative_error", jnum(quantile_sorted(rel, 0.95))},
                 {"branches_agree_fraction", jnum(all.rows.empty() ? 0.0 : static_cast<double>(agree) / static_cast<double>(all.rows.size()))}};
    c.write("limit_path.csv", lp);
    c.write("averaging_errors.csv", errs);
    c.write("averaging.json", c.summary.dump(2) + "\n");
    c.write("limit_path.gp", gnuplot("limit_path.csv", "averaged energy", "t", "H", "1:2"));
    c.text = fmt::format("averaging over {} replicas: median sup error {:.4g} H0, 95th percentile {:.4g} H0\n",
                         all.rows.size(), quantile_sorted(rel, 0.5), quantile_sorted(rel, 0.95));
}

// ---- branching ----

json estimate_json(const WellGraph& g, const BranchEstimate& b) {
    return {{"vertex", g.vertex_label(b.vertex)}, {"method", branch_method_name(b.method)},
            {"estimator", b.estimator}, {"p_left", jnum(b.p_left)}, {"p_right", jnum(b.p_right)},
            {"standard_error", jnum(b.standard_error)}, {"ci", {jnum(b.ci.lo), jnum(b.ci.hi)}},
            {"open_regime", b.open_regime}, {"warning", b.warning}, {"budget", b.budget}};
}

std::vector<BranchEstimate> estimate_branches(const Context& c) {
    const WellGraph& g = c.kicked_graph();
    BranchOptions opt;
    opt.method = parse_branch_method(c.method());
    opt.budget = c.config().analysis.budget;
    if (opt.method == BranchMethod::Grid) opt.budget = static_cast<std::uint64_t>(c.config().analysis.grid_points);
    opt.epsilon = c.epsilon();
    const Stream base(c.seed, kBranching);
    std::vector<BranchEstimate> out;
    for (int v : g.interior_vertices()) {
        out.push_back(branching_probabilities(g, v, opt, base.substream(static_cast<std::uint64_t>(v))));
    }
    return out;
}

void cmd_branching(Context& c) {
    const WellGraph& g = *c.graph;
    const auto est = estimate_branches(c);
    std::string csv = "vertex,method,estimator,p_left,p_right,standard_error,ci_lo,ci_hi,budget\n";
    json arr = json::array();
    for (const BranchEstimate& b : est) {
        csv += fmt::format("{},{},{},{},{},{},{},{},{}\n", g.vertex_label(b.vertex), branch_method_name(b.method),
                           b.estimator, fmt_num(b.p_left), fmt_num(b.p_right), fmt_num(b.standard_error),
                           fmt_num(b.ci.lo), fmt_num(b.ci.hi), b.budget);
        arr.push_back(estimate_json(g, b));
        c.text += fmt::format("{}: p_left {:.6f} +- {:.2g} ({}){}\n", g.vertex_label(b.vertex), b.p_left,
                              b.standard_error, b.estimator, b.warning.empty() ? "" : "  [" + b.warning + "]");
    }
    if (est.empty()) c.text = "no interior vertices\n";
    c.summary = {{"estimates", arr}};
    c.write("branching.csv", csv);
    c.write("branching.json", c.summary.dump(2) + "\n");
}

// ---- rate ----

void cmd_rate(Context& c) {
    const WellGraph& g = c.kicked_graph();
    const RateTable table = compute_rate_table(g);
    std::string csv = "from,to,V\n";
    for (const auto& [k, v] : table.entries) {
        csv += fmt::format("{},{},{}\n", g.vertex_label(k.first), g.vertex_label(k.second), fmt_num(v.value));
    }
    const auto qp = pairwise_quasipotential(table);
    std::string mat = "from";
    for (int j = 1; j <= g.edge_count(); ++j) mat += "," + g.vertex_label(j);
    mat += "\n";
    for (int i = 1; i <= g.edge_count(); ++i) {
        mat += g.vertex_label(i);
        for (int j = 1; j <= g.edge_count(); ++j) mat += "," + fmt_num(qp[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)]);
        mat += "\n";
    }
    std::string ham = "edge,h,beta,H\n";
    json edges = json::array();
    for (const Edge& e : g.edges()) {
        const EdgeHamiltonian eh = edge_hamiltonian(g, e.id);
        const double h = 0.5 * (e.bottom + e.top);
        for (int k = 0; k <= 100; ++k) {
            const double beta = -5.0 + 0.1 * k;
            ham += fmt::format("{},{},{},{}\n", e.id, fmt_num(h), fmt_num(beta), fmt_num(hamiltonian(eh, h, beta)));
        }
        json row = {{"edge", e.id}, {"drift_at_mid", jnum(hamiltonian_dbeta(eh, h, 0.0))}};
        try {
            row["beta_star"] = jnum(uphill_root(e.kicks));
        } catch (const Error&) {
            row["beta_star"] = nullptr;
        }
        if (e.parent != 0) {
            try {
                const PathMinimum pm = minimize_path(eh, e.bottom, e.top, c.config().analysis.segments);
                row["path_minimum"] = jnum(pm.value);
                row["path_minimum_converged"] = pm.converged;
            } catch (const Error& err) {
                if (err.kind() != ErrorKind::Hypothesis) throw;
                row["path_minimum"] = jnum(kInf);
            }
        }
        edges.push_back(row);
    }
    c.summary = {{"edges", edges}};
    c.write("rate_table.csv", csv);
    c.write("quasipotential.csv", mat);
    c.write("hamiltonian.csv", ham);
    c.write("rate.json", c.summary.dump(2) + "\n");
    c.write("hamiltonian.gp", gnuplot("hamiltonian.csv", "H(h, beta) at mid-edge", "beta", "H", "3:4"));
    c.text = fmt::format("rate table with {} adjacent entries written\n", table.entries.size());
}

// ---- rare ----

double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxx > 0.0 ? sxy / sxx : std::nan("");
}

void cmd_rare(Context& c) {
    const WellGraph& g = c.kicked_graph();
    const AnalysisParams& a = c.config().analysis;
    const Edge& e = g.edge(a.rare_edge);
    RareEventQuery q;
    q.edge = a.rare_edge;
    q.h0 = a.rare_h0 ? *a.rare_h0 : e.bottom + 0.25 * (e.top - e.bottom);
    q.horizon = a.rare_horizon;
    q.budget = a.rare_budget;
    if (a.rare_method == "tilted") q.method = RareMethod::Tilted;
    else if (a.rare_method == "naive") q.method = RareMethod::Naive;
    else fail(ErrorKind::Usage, fmt::format("unknown rare_method '{}' (tilted|naive)", a.rare_method));
    const std::vector<double> eps = c.req.epsilon ? std::vector<double>{*c.req.epsilon} : a.rare_epsilons;
    const Stream base(c.seed, kRare);
    std::string csv = "epsilon,delta_h,estimate,standard_error,hits,budget,exponent,beta\n";
    json per_eps = json::array();
    std::uint64_t idx = 0;
    std::vector<double> slopes;
    for (double ep : eps) {
        q.epsilon = ep;
        std::vector<double> xs, ys;
        for (double dh : a.rare_delta_h) {
            q.delta_h = dh;
            const RareEventResult r = rare_event_probability(g, q, base.substream(idx++));
            csv += fmt::format("{},{},{},{},{},{},{},{}\n", fmt_num(ep), fmt_num(dh), fmt_num(r.estimate),
                               fmt_num(r.standard_error), r.hits, r.budget, fmt_num(r.exponent), fmt_num(r.beta));
            if (std::isfinite(r.exponent)) {
                xs.push_back(dh);
                ys.push_back(r.exponent);
            }
        }
        const double slope = xs.size() >= 2 ? ols_slope(xs, ys) : std::nan("");
        if (std::isfinite(slope)) slopes.push_back(slope);
        per_eps.push_back({{"epsilon", jnum(ep)}, {"slope", jnum(slope)}});
        c.text += fmt::format("epsilon {:g}: fitted slope {:.6g}\n", ep, slope);
    }
    double beta_star = std::nan("");
    try {
        beta_star = uphill_root(e.kicks);
    } catch (const Error&) {
    }
    c.summary = {{"edge", q.edge}, {"h0", jnum(q.h0)}, {"beta_star", jnum(beta_star)}, {"fits", per_eps},
                 {"method", a.rare_method}};
    c.text += fmt::format("beta* = {:.6g}\n", beta_star);
    c.write("rare.csv", csv);
    c.write("rare.json", c.summary.dump(2) + "\n");
    c.write("rare.gp", gnuplot("rare.csv", "-epsilon ln P", "delta_h", "exponent", "2:7"));
}

// ---- metastable ----

VertexTree load_tree(const Context& c) {
    if (!c.req.vtable_text.empty()) return parse_vtable(c.req.vtable_text);
    return vertex_tree(c.kicked_graph());
}

BranchTable load_branch(const Context& c, const VertexTree& tree) {
    std::string list = c.req.branch ? *c.req.branch : (c.cfg ? c.cfg->analysis.branch : std::string());
    if (!list.empty()) return parse_branch_list(tree, list);
    if (!c.req.vtable_text.empty() || !c.cfg) {
        fail(ErrorKind::Usage, "a v-table needs --branch p,p,... (one per interior vertex)");
    }
    BranchTable b;
    for (const BranchEstimate& e : estimate_branches(c)) b[e.vertex] = e.p_left;
    return b;
}

json labels_json(const VertexTree& t, const std::vector<int>& ids) {
    json a = json::array();
    for (int v : ids) a.push_back(t.label(v));
    return a;
}

void add_landing_notes(const VertexTree& tree, CycleReport& rep) {
    const auto V = exterior_V(tree);
    for (const Cycle& cy : rep.cycles) {
        if (cy.members.size() != 1 || cy.landings.size() != 1 || !std::isfinite(cy.c)) continue;
        const int v = cy.members.front();
        const auto below = tree.subtree_exterior(cy.landings.front());
        if (std::find(below.begin(), below.end(), v) == below.end()) continue;
        const auto i = static_cast<std::size_t>(std::find(rep.states.begin(), rep.states.end(), v) - rep.states.begin());
        std::string direct;
        for (std::size_t j = 0; j < rep.states.size(); ++j) {
            const int w = rep.states[j];
            if (std::find(below.begin(), below.end(), w) != below.end()) continue;
            direct += fmt::format("{}V({},{}) = {}", direct.empty() ? "" : ", ", tree.label(v), tree.label(w),
                                  fmt_num(V[i][j]));
        }
        if (direct.empty()) continue;
        rep.notes.push_back(fmt::format(
            "exit from {} at scale {} lands at {}, whose subtree contains {} itself; leaving that subtree directly "
            "costs more ({})",
            tree.label(v), fmt_num(cy.c), tree.label(cy.landings.front()), tree.label(v), direct));
    }
}

void cmd_metastable(Context& c) {
    const VertexTree tree = load_tree(c);
    const BranchTable branch = load_branch(c, tree);
    CycleReport rep = cycle_hierarchy(tree);
    const auto u0 = descend_distribution(tree, tree.root(), branch);
    metastable_timeline(tree, rep, branch, u0);
    add_landing_notes(tree, rep);

    json cycles = json::array();
    for (const Cycle& cy : rep.cycles) {
        json arrows = json::array();
        for (const auto& [a, b] : cy.exit_arrows) arrows.push_back({tree.label(a), tree.label(b)});
        const ExitProfile ex = exit_profile(tree, cy, branch);
        json dist = json::array();
        for (double x : ex.distribution) dist.push_back(jnum(x));
        cycles.push_back({{"index", cy.index}, {"rank", cy.rank}, {"members", labels_json(tree, cy.members)},
                          {"presentation", labels_json(tree, cy.presentation)}, {"A", jnum(cy.a)},
                          {"internal_min", jnum(cy.internal_min)}, {"C", jnum(cy.c)}, {"exit_arrows", arrows},
                          {"landings", labels_json(tree, cy.landings)}, {"multi_landing", ex.multi_landing},
                          {"exit_distribution", dist}, {"parent", cy.parent}});
    }
    json timeline = json::array();
    std::string csv = "from,to";
    for (int v : rep.states) csv += "," + tree.label(v);
    csv += "\n";
    for (const TimelineEntry& t : rep.timeline) {
        json d = json::array();
        csv += fmt_num(t.from) + "," + fmt_num(t.to);
        for (double x : t.distribution) {
            d.push_back(jnum(x));
            csv += "," + fmt_num(x);
        }
        csv += "\n";
        timeline.push_back({{"from", jnum(t.from)}, {"to", jnum(t.to)}, {"distribution", d}});
    }
    json br = json::object();
    for (const auto& [v, p] : branch) br[tree.label(v)] = jnum(p);
    c.summary = {{"states", labels_json(tree, rep.states)}, {"branch", br}, {"cycles", cycles},
                 {"timeline", timeline}, {"notes", rep.notes}};
    c.write("cycles.json", c.summary.dump(2) + "\n");
    c.write("timeline.csv", csv);
    for (const Cycle& cy : rep.cycles) {
        std::string members;
        for (int m : cy.members) members += (members.empty() ? "" : ",") + tree.label(m);
        c.text += fmt::format("cycle {{{}}}: C = {}\n", members, fmt_num(cy.c));
    }
    for (const TimelineEntry& t : rep.timeline) {
        std::string d;
        for (double x : t.distribution) d += (d.empty() ? "" : ", ") + fmt::format("{:.6g}", x);
        c.text += fmt::format("[{}, {}): ({})\n", fmt_num(t.from), fmt_num(t.to), d);
    }
    for (const std::string& n : rep.notes) c.text += "note: " + n + "\n";
}

// ---- validate ----

struct CheckList {
    json items = json::array();
    int failed = 0;

    void add(const std::string& name, bool ok, const std::string& detail = {}) {
        items.push_back({{"check", name}, {"passed", ok}, {"detail", detail}});
        failed += ok ? 0 : 1;
    }

    template <class F>
    void guarded(const std::string& name, F&& f) {
        try {
            f();
        } catch (const Error& e) {
            add(name, false, fmt::format("{} error: {}", error_kind_name(e.kind()), e.what()));
        }
    }
};

// Plain odometer over every arrow assignment; independent of the pruned search.
double brute_force_w(const std::vector<std::vector<double>>& V, const std::vector<bool>& sink) {
    const std::size_t n = V.size();
    std::vector<std::size_t> free_states;
    for (std::size_t i = 0; i < n; ++i)
        if (!sink[i]) free_states.push_back(i);
    if (free_states.empty()) return 0.0;
    if (free_states.size() == n) return kInf;
    std::vector<std::size_t> digit(free_states.size(), 0);
    double best = kInf;
    for (;;) {
        std::vector<std::size_t> to(n, n);
        bool valid = true;
        double sum = 0.0;
        for (std::size_t k = 0; k < free_states.size(); ++k) {
            const std::size_t i = free_states[k];
            if (digit[k] == i) valid = false;
            to[i] = digit[k];
            sum += V[i][digit[k]];
        }
        for (std::size_t k = 0; valid && k < free_states.size(); ++k) {
            std::size_t w = free_states[k];
            for (std::size_t steps = 0; !sink[w]; ++steps) {
                if (steps > n) {
                    valid = false;
                    break;
                }
                w = to[w];
            }
        }
        if (valid) best = std::min(best, sum);
        std::size_t k = 0;
        while (k < digit.size() && ++digit[k] == n) digit[k++] = 0;
        if (k == digit.size()) break;
    }
    return best;
}

void validate_graph(const WellGraph& g, CheckList& checks) {
    checks.add("edge count is 2L-1", g.edge_count() == 2 * g.leaf_count() - 1,
               fmt::format("{} edges, {} leaves", g.edge_count(), g.leaf_count()));
    for (const Edge& e : g.edges()) {
        if (!e.leaf()) {
            const double sum = g.edge(e.left_child).width + g.edge(e.right_child).width;
            checks.add(fmt::format("width additivity at {}", g.vertex_label(e.id)),
                       std::abs(e.width - sum) <= 1e-12 * std::max(1.0, e.width),
                       fmt::format("D = {}, children sum {}", fmt_num(e.width), fmt_num(sum)));
            for (int ch : {e.left_child, e.right_child}) {
                checks.add(fmt::format("edge {} meets its parent at {}", ch, g.vertex_label(e.id)),
                           g.edge(ch).top == e.bottom && g.edge(ch).parent == e.id);
            }
        } else {
            checks.add(fmt::format("floor of well {} is positive", e.id), e.bottom > 0.0, fmt_num(e.bottom));
        }
    }
}

void validate_kernels(const WellGraph& g, CheckList& checks) {
    for (const Edge& e : g.edges()) {
        const KickPair& k = e.kicks;
        const std::string tag = fmt::format("well {}", e.id);
        checks.add(tag + ": E(xi + eta) > 0", k.mean_sum() > 0.0, fmt_num(k.mean_sum()));
        checks.guarded(tag + ": cumulant", [&] {
            checks.add(tag + ": K0(0) = 0", cumulant(k, 0.0) == 0.0, fmt_num(cumulant(k, 0.0)));
            bool convex = true;
            double worst = kInf;
            for (int i = 0; i < 100; ++i) {
                const double beta = -10.0 + 20.0 * i / 99.0;
                const double d2 = cumulant_derivatives(k, beta).d2;
                worst = std::min(worst, d2);
                convex = convex && d2 > 0.0;
            }
            checks.add(tag + ": K0'' > 0 on a 100-point grid", convex, fmt::format("min {}", fmt_num(worst)));
        });
        for (const PerturbationSpec* s : {&k.xi, &k.eta}) {
            if (!s->has_density()) continue;
            checks.guarded(tag + ": density grid of " + s->text(), [&] {
                const DensityGrid grid = density_grid(*s, 1024);
                double mass = 0.0, trap = 0.0;
                for (std::size_t i = 0; i < grid.mass.size(); ++i) {
                    mass += grid.mass[i];
                    const double w = (i == 0 || i + 1 == grid.mass.size()) ? 0.5 * grid.h : grid.h;
                    trap += w * grid.cell_density[i];
                }
                checks.add(tag + ": density grid of " + s->text() + " integrates to 1",
                           std::abs(mass - 1.0) <= 1e-9 && std::abs(trap - 1.0) <= 1e-9,
                           fmt::format("mass {}, trapezoid {}", fmt_num(mass), fmt_num(trap)));
            });
        }
    }
}

void validate_hamiltonian(const WellGraph& g, CheckList& checks) {
    for (const Edge& e : g.edges()) {
        const std::string tag = fmt::format("well {}", e.id);
        checks.guarded(tag + ": Hamiltonian", [&] {
            const EdgeHamiltonian eh = edge_hamiltonian(g, e.id);
            const double h = 0.5 * (e.bottom + e.top);
            checks.add(tag + ": H(h, 0) = 0", hamiltonian(eh, h, 0.0) == 0.0);
            double worst = 0.0;
            for (int i = 0; i <= 20; ++i) {
                const double beta = -3.0 + 0.3 * i;
                const double step = 1e-5;
                const double fd = (hamiltonian(eh, h, beta + step) - hamiltonian(eh, h, beta - step)) / (2 * step);
                const double an = hamiltonian_dbeta(eh, h, beta);
                worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(an)));
            }
            checks.add(tag + ": dH/dbeta matches finite differences", worst <= 1e-6,
                       fmt::format("max relative gap {}", fmt_num(worst)));
            const double drift = hamiltonian_dbeta(eh, h, 0.0);
            const double l0 = legendre(eh, h, drift).value;
            checks.add(tag + ": L(h, drift) = 0", l0 <= 1e-10, fmt_num(l0));
            const auto [zlo, zhi] = zeta_range(e.kicks);
            const double c = hamiltonian_scale(eh, h);
            const double above = c * zhi + 1e-3 * std::max(1.0, std::abs(c * zhi));
            const double below = c * zlo - 1e-3 * std::max(1.0, std::abs(c * zlo));
            checks.add(tag + ": L = +inf outside the slope range",
                       std::isinf(legendre(eh, h, above).value) && std::isinf(legendre(eh, h, below).value));
        });
    }
}

void validate_tree(const VertexTree& tree, const std::optional<BranchTable>& given, CheckList& checks) {
    RateTable t = tree.rates;
    t.vertex_count = tree.size();
    const auto full = pairwise_quasipotential(t);
    for (int o : tree.interior_vertices()) {
        bool ok = false;
        for (int v : tree.exterior_vertices()) {
            ok = ok || full[static_cast<std::size_t>(o - 1)][static_cast<std::size_t>(v - 1)] == 0.0;
        }
        checks.add(fmt::format("{} is unstable (V = 0 to some exterior vertex)", tree.label(o)), ok);
    }
    const auto V = exterior_V(tree);
    const std::size_t n = V.size();
    if (n > 12) {
        checks.add("cycle hierarchy", true, "skipped: more than 12 exterior vertices");
        return;
    }
    if (n <= 7) {
        bool same = true;
        std::string detail;
        for (std::uint64_t mask = 1; mask + 1 < (std::uint64_t{1} << n); ++mask) {
            std::vector<bool> sink(n);
            for (std::size_t i = 0; i < n; ++i) sink[i] = (mask >> i) & 1U;
            const double a = w_graph_min(V, sink).value;
            const double b = brute_force_w(V, sink);
            if (!(a == b || std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)))) {
                same = false;
                detail = fmt::format("sink mask {}: {} vs {}", mask, fmt_num(a), fmt_num(b));
            }
        }
        checks.add("W-graph minimum matches brute-force enumeration", same, detail);
    }
    checks.guarded("cycle hierarchy", [&] {
        CycleReport rep = cycle_hierarchy(tree);
        for (const Cycle& c : rep.cycles) {
            if (c.members.size() != 1) continue;
            const auto i = static_cast<std::size_t>(std::find(rep.states.begin(), rep.states.end(), c.members.front()) -
                                                    rep.states.begin());
            double m = kInf;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) m = std::min(m, V[i][j]);
            checks.add(fmt::format("C({{{}}}) = min_j V", tree.label(c.members.front())),
                       c.c == m || std::abs(c.c - m) <= 1e-12 * std::max(1.0, m), fmt_num(c.c));
        }
        bool nonneg = true;
        for (const Cycle& c : rep.cycles) nonneg = nonneg && c.c >= 0.0;
        checks.add("every C is non-negative", nonneg);
        BranchTable branch;
        if (given) branch = *given;
        else for (int o : tree.interior_vertices()) branch[o] = 0.5;
        const auto u0 = descend_distribution(tree, tree.root(), branch);
        metastable_timeline(tree, rep, branch, u0);
        bool prob = true;
        for (const TimelineEntry& e : rep.timeline) {
            double s = 0.0;
            for (double x : e.distribution) {
                prob = prob && x >= 0.0;
                s += x;
            }
            prob = prob && std::abs(s - 1.0) <= 1e-12;
        }
        checks.add("timeline entries are probability vectors", prob);
        const auto& last = rep.timeline.back().distribution;
        const auto ground = static_cast<std::size_t>(std::max_element(last.begin(), last.end()) - last.begin());
        bool mono = true;
        for (std::size_t k = 1; k < rep.timeline.size(); ++k) {
            mono = mono && rep.timeline[k].distribution[ground] >= rep.timeline[k - 1].distribution[ground] - 1e-15;
        }
        checks.add("ground-state mass is non-decreasing", mono, tree.label(rep.states[ground]));
    });
}

void cmd_validate(Context& c) {
    CheckList checks;
    if (c.cfg) {
        validate_graph(*c.graph, checks);
        if (c.cfg->has_kicks) {
            validate_kernels(*c.graph, checks);
            validate_hamiltonian(*c.graph, checks);
        }
    }
    if (!c.req.vtable_text.empty() || (c.cfg && c.cfg->has_kicks)) {
        checks.guarded("vertex tree", [&] {
            const VertexTree tree = load_tree(c);
            std::optional<BranchTable> branch;
            const std::string list = c.req.branch ? *c.req.branch : (c.cfg ? c.cfg->analysis.branch : std::string());
            if (!list.empty()) branch = parse_branch_list(tree, list);
            validate_tree(tree, branch, checks);
        });
    }
    if (!c.cfg && c.req.vtable_text.empty()) fail(ErrorKind::Usage, "validate needs --config or --v-table");
    c.checks_failed = checks.failed > 0;
    c.summary = {{"checks", checks.items}, {"failed", checks.failed}, {"total", checks.items.size()}};
    c.write("validate.json", c.summary.dump(2) + "\n");
    for (const auto& item : checks.items) {
        c.text += fmt::format("[{}] {}{}\n", item["passed"].get<bool>() ? "ok" : "FAIL", item["check"].get<std::string>(),
                              item["detail"].get<std::string>().empty() ? "" : " (" + item["detail"].get<std::string>() + ")");
    }
    c.text += fmt::format("{} of {} checks passed\n", checks.items.size() - static_cast<std::size_t>(checks.failed),
                          checks.items.size());
}

std::string hex64(std::uint64_t x) { return fmt::format("{:016x}", x); }

}  // namespace

RunResult run_command(const RunRequest& request) {
    static const std::map<std::string, std::function<void(Context&)>> commands{
        {"simulate", cmd_simulate}, {"average", cmd_average},       {"branching", cmd_branching},
        {"rate", cmd_rate},         {"rare", cmd_rare},             {"metastable", cmd_metastable},
        {"validate", cmd_validate}};
    const auto it = commands.find(request.command);
    if (it == commands.end()) fail(ErrorKind::Usage, fmt::format("unknown subcommand '{}'", request.command));
    const auto start = std::chrono::steady_clock::now();

    Context c;
    c.req = request;
    if (!request.config_text.empty()) {
        c.cfg = parse_config(request.config_text);
        c.graph = build_graph(c.cfg->system);
    }
    c.seed = request.seed ? *request.seed : (c.cfg ? c.cfg->sim.seed : 1);
    if (request.method) (void)parse_branch_method(*request.method);
    if (request.epsilon && !(*request.epsilon > 0.0)) fail(ErrorKind::Usage, "--epsilon must be positive");
    c.out = resolve_out_dir(request.out_dir);
    std::error_code ec;
    fs::create_directories(c.out, ec);
    if (ec) fail(ErrorKind::Io, fmt::format("cannot create '{}': {}", c.out.string(), ec.message()));
    if (c.graph && request.command != "metastable" && request.command != "validate") {
        c.write("graph.json", graph_json(*c.graph).dump(2) + "\n");
    }

    it->second(c);

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json outputs = json::array();
    for (const RunOutput& o : c.outputs) outputs.push_back({{"file", o.file}, {"fnv1a", hex64(o.hash)}});
    json params = json::object();
    params["seed"] = request.seed ? json(*request.seed) : json(nullptr);
    params["replicas"] = request.replicas ? json(*request.replicas) : json(nullptr);
    params["epsilon"] = request.epsilon ? json(*request.epsilon) : json(nullptr);
    params["method"] = request.method ? json(*request.method) : json(nullptr);
    params["branch"] = request.branch ? json(*request.branch) : json(nullptr);
    json manifest = {{"tool", "nelastic"},
                     {"version", kVersion},
                     {"command", request.command},
                     {"seed", c.seed},
                     {"flags", params},
                     {"config_hash", request.config_text.empty() ? json(nullptr) : json(hex64(fnv1a(request.config_text)))},
                     {"config_text", request.config_text},
                     {"vtable_hash", request.vtable_text.empty() ? json(nullptr) : json(hex64(fnv1a(request.vtable_text)))},
                     {"vtable_text", request.vtable_text},
                     {"duration_seconds", seconds},
                     {"outputs", outputs}};
    const fs::path mpath = c.out / "manifest.json";
    {
        std::ofstream f(mpath, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorKind::Io, fmt::format("cannot write '{}'", mpath.string()));
        f << manifest.dump(2) << "\n";
    }

    RunResult r;
    r.command = request.command;
    r.summary_text = c.text;
    r.summary_json = json{{"command", request.command}, {"seed", c.seed}, {"result", c.summary}}.dump(2);
    r.outputs = c.outputs;
    r.manifest_path = mpath.string();
    r.checks_failed = c.checks_failed;
    return r;
}

RunResult rerun_manifest(const std::string& manifest_path, const std::string& out_dir) {
    json m;
    try {
        m = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, fmt::format("manifest '{}' is not valid JSON: {}", manifest_path, e.what()));
    }
    RunRequest req;
    try {
        req.command = m.at("command").get<std::string>();
        req.config_text = m.at("config_text").get<std::string>();
        req.vtable_text = m.at("vtable_text").get<std::string>();
        const json& f = m.at("flags");
        req.seed = m.at("seed").get<std::uint64_t>();
        if (!f.at("replicas").is_null()) req.replicas = f.at("replicas").get<std::uint64_t>();
        if (!f.at("epsilon").is_null()) req.epsilon = f.at("epsilon").get<double>();
        if (!f.at("method").is_null()) req.method = f.at("method").get<std::string>();
        if (!f.at("branch").is_null()) req.branch = f.at("branch").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, fmt::format("manifest '{}' is incomplete: {}", manifest_path, e.what()));
    }
    if (!req.config_text.empty() && m.at("config_hash").get<std::string>() != hex64(fnv1a(req.config_text))) {
        fail(ErrorKind::Invariant, "manifest config hash does not match its embedded config text");
    }
    req.out_dir = out_dir;
    RunResult r = run_command(req);
    std::map<std::string, std::string> fresh;
    for (const RunOutput& o : r.outputs) fresh[o.file] = hex64(o.hash);
    std::string mismatches;
    for (const json& o : m.at("outputs")) {
        const auto file = o.at("file").get<std::string>();
        const auto it = fresh.find(file);
        if (it == fresh.end() || it->second != o.at("fnv1a").get<std::string>()) {
            mismatches += (mismatches.empty() ? "" : ", ") + file;
        }
    }
    if (!mismatches.empty()) {
        fail(ErrorKind::Invariant, fmt::format("rerun did not reproduce: {}", mismatches));
    }
    r.summary_text += fmt::format("rerun reproduced {} output files byte for byte\n", m.at("outputs").size());
    return r;
}

}  // namespace nelastic
