#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "harness.hpp"
#include "meta.hpp"
#include "test_util.hpp"

using namespace nelastic;
using nelastic::test::error_kind;
using nelastic::test::source_path;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

VertexTree four_well() { return parse_vtable(read_file(source_path("fixtures/four_well.vt"))); }

const Cycle* find_cycle(const CycleReport& r, std::vector<int> members) {
    std::sort(members.begin(), members.end());
    for (const Cycle& c : r.cycles) {
        std::vector<int> m = c.members;
        std::sort(m.begin(), m.end());
        if (m == members) return &c;
    }
    return nullptr;
}

// Independent enumerator: every map from non-sink states to other states,
// kept when iterating it from any state reaches a sink.
double brute_w(const std::vector<std::vector<double>>& v, const std::vector<bool>& sink) {
    const int n = static_cast<int>(v.size());
    std::vector<int> free;
    for (int i = 0; i < n; ++i)
        if (!sink[static_cast<std::size_t>(i)]) free.push_back(i);
    if (free.size() == static_cast<std::size_t>(n)) return kInf;
    std::vector<int> target(static_cast<std::size_t>(n), -1);
    std::vector<int> digit(free.size(), 0);
    double best = kInf;
    for (;;) {
        for (std::size_t k = 0; k < free.size(); ++k) target[static_cast<std::size_t>(free[k])] = digit[k];
        bool ok = true;
        double sum = 0.0;
        for (int s : free) {
            if (target[static_cast<std::size_t>(s)] == s) {
                ok = false;
                break;
            }
            sum += v[static_cast<std::size_t>(s)][static_cast<std::size_t>(target[static_cast<std::size_t>(s)])];
            int x = s;
            for (int step = 0; step <= n && !sink[static_cast<std::size_t>(x)]; ++step) x = target[static_cast<std::size_t>(x)];
            if (!sink[static_cast<std::size_t>(x)]) {
                ok = false;
                break;
            }
        }
        if (ok) best = std::min(best, sum);
        std::size_t k = 0;
        while (k < digit.size() && ++digit[k] == n) digit[k++] = 0;
        if (k == digit.size()) break;
    }
    return best;
}

std::vector<std::vector<double>> read_timeline_fixture() {
    std::ifstream in(source_path("fixtures/four_well_timeline.csv"));
    std::string line;
    std::getline(in, line);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(cell == "inf" ? kInf : std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("V-table parsing", "[meta]") {
    const VertexTree t = four_well();
    REQUIRE(t.size() == 7);
    CHECK(t.root() == 7);
    CHECK(t.label(5) == "O5");
    CHECK(t.left[4] == 1);
    CHECK(t.right[4] == 2);
    CHECK(t.left[6] == 6);
    CHECK(t.exterior_vertices() == std::vector<int>{1, 2, 3, 4});
    CHECK(t.rates.at(3, 6) == 6.0);
    CHECK(t.rates.at(6, 3) == 0.0);
    CHECK(t.lowest_common_ancestor(1, 3) == 6);
    CHECK(t.tree_path(2, 3) == std::vector<int>{2, 5, 6, 3});

    CHECK(error_kind([] { (void)parse_vtable("X1 O2 1\n"); }) == ErrorKind::Config);
    CHECK(error_kind([] { (void)parse_vtable("V1 O3 1\nV1 O3 2\n"); }) == ErrorKind::Config);
    CHECK(error_kind([] { (void)parse_vtable("V1 O3 one\nV2 O3 1\n"); }) == ErrorKind::Config);
    CHECK(error_kind([] { (void)parse_vtable("V1 O3\nV2 O3 1\n"); }) == ErrorKind::Config);
    CHECK(error_kind([] { (void)parse_vtable("V1 O3 1\nV2 O4 1\n"); }) == ErrorKind::Config);
    CHECK(error_kind([] { (void)parse_vtable("V1 O3 1\nV2 O3 1\nV4 O3 1\n"); }) == ErrorKind::Config);
    CHECK_NOTHROW(parse_vtable("# two wells\nV1 O3 inf\nV2 O3 1 0\n"));
}

TEST_CASE("descend distribution", "[meta]") {
    const VertexTree t = four_well();
    const BranchTable b{{5, 0.3}, {6, 0.6}, {7, 0.7}};
    const auto d = descend_distribution(t, 7, b);
    CHECK(d[0] == Catch::Approx(0.3 * 0.6 * 0.7).epsilon(1e-15));
    CHECK(d[1] == Catch::Approx(0.7 * 0.6 * 0.7).epsilon(1e-15));
    CHECK(d[2] == Catch::Approx(0.4 * 0.7).epsilon(1e-15));
    CHECK(d[3] == Catch::Approx(0.3).epsilon(1e-15));
    CHECK(descend_distribution(t, 5, b) == std::vector<double>{0.3, 0.7, 0.0, 0.0});
    CHECK(descend_distribution(t, 7, {{5, 0.5}, {6, 0.5}, {7, 0.5}}) == std::vector<double>{0.125, 0.125, 0.25, 0.5});
    CHECK(parse_branch_list(t, "0.3,0.6,0.7") == b);
    CHECK(error_kind([&] { (void)parse_branch_list(t, "0.3,0.6"); }) == ErrorKind::Usage);
    CHECK(error_kind([&] { (void)parse_branch_list(t, "0.3,0.6,1.5"); }) == ErrorKind::Usage);
}

TEST_CASE("exterior quasi-potential by hand path sums", "[meta]") {
    const VertexTree t = four_well();
    const auto v = exterior_V(t);
    CHECK(v[0][1] == 2.0);
    CHECK(v[1][0] == 1.0);
    CHECK(v[1][2] == 2.0);
    CHECK(v[2][0] == 6.0);
    CHECK(v[2][1] == 6.0);
    CHECK(v[2][3] == 7.0);
    CHECK(v[3][0] == 5.0);
    for (int i = 0; i < 4; ++i) CHECK(v[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] == 0.0);
    // Interior vertices are unstable: each reaches some exterior vertex at zero cost.
    const auto all = pairwise_quasipotential(t.rates);
    for (int o : t.interior_vertices()) {
        bool zero = false;
        for (int e : t.exterior_vertices()) zero = zero || all[static_cast<std::size_t>(o - 1)][static_cast<std::size_t>(e - 1)] == 0.0;
        CHECK(zero);
    }
    // Raising one adjacent value never lowers an exterior pair.
    for (auto& [key, entry] : t.rates.entries) {
        VertexTree raised = t;
        raised.rates.entries[key].value = entry.value + 1.5;
        const auto w = exterior_V(raised);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) CHECK(w[i][j] >= v[i][j]);
    }
}

TEST_CASE("W-graph minima", "[meta]") {
    const auto v = exterior_V(four_well());
    const WGraphResult r = w_graph_min(v, {false, false, true, true});
    CHECK(r.value == 4.0);
    // V2->V1, V1->V3 and V1->V2, V2->V3.
    REQUIRE(r.minimizers.size() == 2);
    std::vector<std::vector<int>> m = r.minimizers;
    std::sort(m.begin(), m.end());
    CHECK(m[0] == std::vector<int>{1, 2, -1, -1});
    CHECK(m[1] == std::vector<int>{2, 0, -1, -1});
    CHECK(w_graph_min(v, {false, false, false, true}).value == 11.0);
    // Single free state: cheapest outgoing arrow.
    CHECK(w_graph_min(v, {true, true, false, true}).value == 6.0);
    CHECK(w_graph_min(v, {false, false, false, false}).value == kInf);
    CHECK(error_kind([] {
              (void)w_graph_min(std::vector<std::vector<double>>(13, std::vector<double>(13, 1.0)), std::vector<bool>(13, true));
          }) == ErrorKind::Usage);
}

TEST_CASE("W-graph minimum matches exhaustive enumeration on random instances", "[meta]") {
    Stream s(2718);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(s.uniform_open() * 4);
        std::vector<std::vector<double>> v(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
        for (auto& row : v)
            for (double& x : row) x = s.uniform_open() < 0.1 ? kInf : 10 * s.uniform_open();
        std::vector<bool> sink(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < sink.size(); ++i) sink[i] = s.uniform_open() < 0.4;
        const double want = brute_w(v, sink);
        const double got = w_graph_min(v, sink).value;
        if (std::isinf(want)) {
            CHECK(std::isinf(got));
        } else {
            CHECK(got == Catch::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("cycle hierarchy exponents", "[meta]") {
    const VertexTree t = four_well();
    const CycleReport r = cycle_hierarchy(t);
    const auto c = [&](std::vector<int> m) {
        const Cycle* cy = find_cycle(r, std::move(m));
        REQUIRE(cy != nullptr);
        return cy->c;
    };
    CHECK(c({1}) == 2.0);
    CHECK(c({2}) == 1.0);
    CHECK(c({3}) == 6.0);
    CHECK(c({4}) == 5.0);
    CHECK(c({1, 2}) == 3.0);
    CHECK(c({1, 2, 3}) == 7.0);
    const Cycle* c12 = find_cycle(r, {1, 2});
    CHECK(c12->a == 4.0);
    CHECK(c12->internal_min == 1.0);
    const Cycle* c123 = find_cycle(r, {1, 2, 3});
    CHECK(c123->a == 11.0);
    CHECK(c123->internal_min == 4.0);
    // Singletons: C equals the cheapest exit to another exterior vertex.
    const auto v = exterior_V(t);
    for (int k = 1; k <= 4; ++k) {
        double m = kInf;
        for (int j = 1; j <= 4; ++j)
            if (j != k) m = std::min(m, v[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j - 1)]);
        CHECK(c({k}) == m);
    }
    // Exit of {V1, V2} lands at the unstable O6: everything leaving the cycle goes to V3.
    const ExitProfile ep = exit_profile(t, *c12, {{5, 0.3}, {6, 0.6}, {7, 0.7}});
    CHECK(ep.exponent == 3.0);
    CHECK(ep.landings == std::vector<int>{6});
    CHECK(ep.distribution[2] == Catch::Approx(0.4).epsilon(1e-15));
    CHECK(ep.distribution[3] == 0.0);
    CHECK(ep.distribution[0] + ep.distribution[1] == Catch::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("unreachable exits give an infinite exponent", "[meta]") {
    const VertexTree t = parse_vtable("V1 O3 inf\nV2 O3 1\n");
    const CycleReport r = cycle_hierarchy(t);
    const Cycle* c1 = find_cycle(r, {1});
    REQUIRE(c1 != nullptr);
    CHECK(c1->c == kInf);
    const ExitProfile ep = exit_profile(t, *c1, {{3, 0.5}});
    CHECK(ep.exponent == kInf);
    CHECK(ep.landings.empty());
    CHECK(ep.distribution.empty());
}

TEST_CASE("metastable timeline reproduces the hand-derived sequence", "[meta]") {
    const VertexTree t = four_well();
    const BranchTable b{{5, 0.3}, {6, 0.6}, {7, 0.7}};
    CycleReport r = cycle_hierarchy(t);
    metastable_timeline(t, r, b, descend_distribution(t, 7, b));
    const auto want = read_timeline_fixture();
    REQUIRE(r.timeline.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(r.timeline[i].from == want[i][0]);
        CHECK(r.timeline[i].to == want[i][1]);
        for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(r.timeline[i].distribution[k] - want[i][k + 2]) <= 1e-12);
    }
}

TEST_CASE("timeline structure is independent of the branch probabilities", "[meta]") {
    const VertexTree t = four_well();
    Stream s(99);
    for (int trial = 0; trial < 100; ++trial) {
        const double a = s.uniform_open(), bb = s.uniform_open(), c = s.uniform_open();
        const BranchTable b{{5, a}, {6, bb}, {7, c}};
        CycleReport r = cycle_hierarchy(t);
        metastable_timeline(t, r, b, descend_distribution(t, 7, b));
        const std::vector<std::vector<double>> want{
            {a * bb * c, (1 - a) * bb * c, (1 - bb) * c, 1 - c},
            {bb * c, 0, (1 - bb) * c, 1 - c},
            {bb * c, 0, (1 - bb) * c, 1 - c},
            {0, 0, c, 1 - c},
            {0, 0, 1, 0},
            {0, 0, 1, 0},
            {0, 0, 1, 0}};
        REQUIRE(r.timeline.size() == want.size());
        double ground = -1.0;
        for (std::size_t i = 0; i < want.size(); ++i) {
            const auto& d = r.timeline[i].distribution;
            double sum = 0.0;
            for (std::size_t k = 0; k < 4; ++k) {
                CHECK(std::abs(d[k] - want[i][k]) <= 1e-12);
                CHECK((d[k] == 0.0) == (want[i][k] == 0.0));
                CHECK(d[k] >= 0.0);
                sum += d[k];
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
            CHECK(d[2] >= ground - 1e-12);
            ground = d[2];
        }
    }
}

TEST_CASE("timeline from the final state stays put", "[meta]") {
    const VertexTree t = four_well();
    CycleReport r = cycle_hierarchy(t);
    metastable_timeline(t, r, {{5, 0.3}, {6, 0.6}, {7, 0.7}}, {0, 0, 1, 0});
    for (const TimelineEntry& e : r.timeline) CHECK(e.distribution == std::vector<double>{0, 0, 1, 0});
}

TEST_CASE("ties abort", "[meta]") {
    const VertexTree t = parse_vtable("V1 O3 2\nV2 O3 2\n");
    CHECK(error_kind([&] {
              CycleReport r = cycle_hierarchy(t);
              metastable_timeline(t, r, {{3, 0.5}}, {0.5, 0.5});
          }) == ErrorKind::Config);
}
