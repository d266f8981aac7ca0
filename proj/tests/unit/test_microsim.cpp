#include "catch_amalgamated.hpp"

#include <cmath>

#include "averaging.hpp"
#include "microsim.hpp"
#include "test_util.hpp"

using namespace nelastic;
using nelastic::test::error_kind;

namespace {

KickPair constant_kicks(double c) { return {PerturbationSpec::uniform(c, c), PerturbationSpec::uniform(c, c)}; }

WellGraph two_well(const KickPair& k, double cap = 8.0) {
    WellSystem s;
    s.wall_positions = {0.0, 1.0, 2.0};
    s.interior_heights = {1.0};
    s.leaf_floors = {0.4, 0.25};
    s.energy_cap = cap;
    s.kicks = {k, k, k};
    return build_graph(s);
}

WellGraph single_well(const KickPair& k, double floor = 0.5, double cap = 10.0) {
    WellSystem s;
    s.wall_positions = {0.0, 1.0};
    s.leaf_floors = {floor};
    s.energy_cap = cap;
    s.kicks = {k};
    return build_graph(s);
}

struct Fixed {
    double value;
    double operator()(const KickPair&, Side) const { return value; }
};

}  // namespace

TEST_CASE("constant kicks lower the energy by exactly 2 eps c over two collisions", "[microsim]") {
    const double eps = 1e-3, c = 0.3;
    const WellGraph g = single_well(constant_kicks(c));
    ParticleState s = initial_state(g, 2.0, 0.25);
    Stream stream(1);
    const CollisionEvent e1 = step(s, g, eps, PlainKicks{&stream});
    const CollisionEvent e2 = step(s, g, eps, PlainKicks{&stream});
    CHECK(e1.side == Side::Left);
    CHECK(e2.side == Side::Right);
    CHECK(s.energy == Catch::Approx(2.0 - 2 * eps * c).epsilon(1e-15));
    // Flight times: 0.25 to the left wall at speed 2, then the full width after the first kick.
    const double t2 = 0.25 / 2.0 + 1.0 / std::sqrt(2 * (2.0 - eps * c));
    CHECK(s.natural_time == Catch::Approx(t2).epsilon(1e-14));
    CHECK(e2.t == Catch::Approx(eps * t2).epsilon(1e-14));
    CHECK(s.counts[1][0] == 1);
    CHECK(s.counts[1][1] == 1);
}

TEST_CASE("crossing a merge level lands in the child holding q", "[microsim]") {
    const WellGraph g = two_well(constant_kicks(0.5));
    const double eps = 1e-3;
    // Just above the merge level 1.0, moving left: the kick happens at q = 0.
    ParticleState s = initial_state(g, 1.0 + 0.2 * eps, 0.5, -1);
    CHECK(s.edge == 3);
    (void)step(s, g, eps, Fixed{0.5});
    CHECK(s.edge == 1);
    CHECK(s.energy == Catch::Approx(1.0 - 0.3 * eps).epsilon(1e-15));
    ParticleState r = initial_state(g, 1.0 + 0.2 * eps, 0.5, +1);
    (void)step(r, g, eps, Fixed{0.5});
    CHECK(r.edge == 2);
    // Upward: a negative kick at a leaf wall lifts the particle into the merged well.
    ParticleState u = initial_state(g, 1.0 - 0.2 * eps, 0.5, -1);
    CHECK(u.edge == 1);
    (void)step(u, g, eps, Fixed{-0.5});
    CHECK(u.edge == 3);
}

TEST_CASE("leaf floor clamps the energy", "[microsim]") {
    const double eps = 1e-3;
    const WellGraph g = single_well(constant_kicks(0.5), 1.0);
    ParticleState s = initial_state(g, 1.0 + eps * 0.1, 0.5, -1);
    const CollisionEvent e = step(s, g, eps, Fixed{0.5});
    CHECK(s.energy == 1.0);
    CHECK(e.h_post == 1.0);
    CHECK(e.kick == 0.5);
}

TEST_CASE("collision counts scale like T / eps", "[microsim]") {
    const double eps = 1e-3, d = 1.0;
    const WellGraph g = single_well({PerturbationSpec::uniform(0.2, 0.4), PerturbationSpec::uniform(0.2, 0.4)});
    Stream stream(21);
    RunOptions opt;
    opt.epsilon = eps;
    opt.horizon = 1.0;
    opt.grid_dt = 1e-3;
    opt.record_events = true;
    const TrajectoryRecord rec = run(g, 2.0, 0.5, opt, stream);
    double h_min = 2.0, h_max = 2.0;
    for (const CollisionEvent& e : rec.events) {
        h_min = std::min(h_min, e.h_post);
        h_max = std::max(h_max, e.h_pre);
    }
    const double c1 = std::sqrt(2 * h_min) / (2 * d) * 0.95;
    const double c2 = std::sqrt(2 * h_max) / (2 * d) * 1.05;
    const auto left = static_cast<double>(rec.final_state.counts[1][0]);
    CHECK(left >= c1 / eps);
    CHECK(left <= c2 / eps);

    // Piecewise-linear and step versions stay within 2 M eps.
    double sup = 0.0;
    for (const GridSample& s : rec.grid) sup = std::max(sup, std::abs(s.h_hat - s.h_step));
    CHECK(sup <= 2 * 0.4 * eps);
    CHECK(rec.grid.size() == 1001);
    CHECK(rec.grid.back().t == Catch::Approx(1.0));
}

TEST_CASE("zero-variance kicks follow the averaged trajectory", "[microsim][averaging]") {
    const double eps = 1e-3, c = 0.3;
    const WellGraph g = single_well(constant_kicks(c));
    Stream stream(2);
    RunOptions opt;
    opt.epsilon = eps;
    opt.horizon = 1.0;
    opt.grid_dt = 1e-3;
    const TrajectoryRecord rec = run(g, 2.0, 0.5, opt, stream);
    const GraphPath path = limit_path(g, 1, 2.0, {});
    double sup = 0.0;
    for (const GridSample& s : rec.grid) sup = std::max(sup, std::abs(s.h_hat - path.energy_at(s.t)));
    CHECK(sup <= 2 * c * eps);
}

TEST_CASE("runs are reproducible", "[microsim]") {
    const WellGraph g = two_well({PerturbationSpec::uniform(-0.4, 0.8), PerturbationSpec::uniform(-0.3, 0.9)});
    RunOptions opt;
    opt.epsilon = 1e-3;
    opt.horizon = 0.5;
    opt.grid_dt = 1e-2;
    opt.record_events = true;
    Stream a(99, 4), b(99, 4);
    const TrajectoryRecord ra = run(g, 2.0, 1.5, opt, a);
    const TrajectoryRecord rb = run(g, 2.0, 1.5, opt, b);
    REQUIRE(ra.events.size() == rb.events.size());
    for (std::size_t i = 0; i < ra.events.size(); ++i) {
        REQUIRE(ra.events[i].kick == rb.events[i].kick);
        REQUIRE(ra.events[i].h_post == rb.events[i].h_post);
    }
    for (std::size_t i = 0; i < ra.grid.size(); ++i) REQUIRE(ra.grid[i].h_hat == rb.grid[i].h_hat);
}

TEST_CASE("energy cap and resolution guards", "[microsim]") {
    KickPair up = constant_kicks(-0.5);
    const WellGraph g = single_well(up, 0.5, 2.01);
    RunOptions opt;
    opt.epsilon = 1e-3;
    opt.horizon = 1.0;
    opt.grid_dt = 1e-2;
    Stream s(1);
    const TrajectoryRecord rec = run(g, 2.0, 0.5, opt, s);
    CHECK(rec.cap_exceeded);
    CHECK(rec.grid.size() == 101);

    const WellGraph g2 = two_well(constant_kicks(0.5));
    CHECK(error_kind([&] { check_resolution(g2, 0.7); }) == ErrorKind::Config);
    CHECK_NOTHROW(check_resolution(g2, 1e-3));
}

TEST_CASE("deterministic kicks: branch follows the parity of the crossing collision", "[microsim]") {
    const double eps = 1e-3, c = 0.4;
    const WellGraph g = two_well(constant_kicks(c));
    for (int k = 1; k <= 12; ++k) {
        // The k-th collision is the first one below the merge level 1.0.
        const double h0 = 1.0 + (k - 0.5) * eps * c;
        Stream s(1);
        const int leaf = first_branch(g, h0, 1.5, eps, 1.0, s);
        // Collisions alternate left, right, ... starting on the left.
        CHECK(leaf == (k % 2 == 1 ? 1 : 2));
    }
}

TEST_CASE("mirror-symmetric start splits evenly", "[microsim]") {
    const double eps = 1e-2;
    const KickPair k{PerturbationSpec::uniform(0.2, 0.6), PerturbationSpec::uniform(0.2, 0.6)};
    WellSystem sys;
    sys.wall_positions = {0.0, 1.0, 2.0};
    sys.interior_heights = {1.0};
    sys.leaf_floors = {0.4, 0.3};
    sys.energy_cap = 8.0;
    sys.kicks = {k, k, k};
    const WellGraph g = build_graph(sys);
    const Stream base(404);
    const int n = 100000;
    int left = 0;
    for (int i = 0; i < n; ++i) {
        Stream s = base.substream(static_cast<std::uint64_t>(i));
        const bool mirror = s.uniform_open() < 0.5;
        ParticleState st = initial_state(g, 1.3, mirror ? 1.5 : 0.5, mirror ? +1 : -1);
        left += first_branch_with(g, st, eps, 10.0, PlainKicks{&s}) == 1 ? 1 : 0;
    }
    const double p = static_cast<double>(left) / n;
    CHECK(std::abs(p - 0.5) <= 3.0 * std::sqrt(0.25 / n));
}

TEST_CASE("both-positive kicks branch left with probability E xi / E(xi + eta)", "[microsim]") {
    const double eps = 1e-3;
    const KickPair k{PerturbationSpec::uniform(0.2, 0.4), PerturbationSpec::uniform(0.6, 1.0)};
    const WellGraph g = two_well(k);
    const Stream base(77);
    const int n = 100000;
    int left = 0;
    for (int i = 0; i < n; ++i) {
        Stream s = base.substream(static_cast<std::uint64_t>(i));
        left += first_branch(g, 1.0 + 50 * eps, 0.5, eps, 10.0, s) == 1 ? 1 : 0;
    }
    const double p = static_cast<double>(left) / n;
    CHECK(std::abs(p - 3.0 / 11.0) <= 3.0 * std::sqrt(3.0 / 11.0 * 8.0 / 11.0 / n));
}
