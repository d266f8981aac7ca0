#include "catch_amalgamated.hpp"

#include <array>
#include <cmath>

#include <boost/numeric/odeint.hpp>

#include "averaging.hpp"
#include "harness.hpp"
#include "test_util.hpp"

using namespace nelastic;
using nelastic::test::error_kind;
using nelastic::test::source_path;

namespace {

WellGraph nested() {
    const Config cfg = parse_config(read_file(source_path("fixtures/nested.cfg")));
    return build_graph(cfg.system);
}

double closed_duration(double m, double d, double ha, double hb) {
    return 2 * std::sqrt(2.0) * d * (std::sqrt(ha) - std::sqrt(hb)) / m;
}

}  // namespace

TEST_CASE("edge trajectory closed form", "[averaging]") {
    const EdgeDrift d{1, 2 * std::sqrt(2.0), 1.0};
    const EdgeTrajectory tr = edge_trajectory(d, 4.0, 1.0);
    CHECK(tr.duration == Catch::Approx(1.0).epsilon(1e-15));
    for (double t : {0.0, 0.25, 0.5, 0.9, 1.0}) CHECK(tr.energy_at(t) == Catch::Approx((2 - t) * (2 - t)).epsilon(1e-14));
    CHECK(edge_trajectory(d, 2.5, 2.5).duration == 0.0);
    CHECK(error_kind([&] { (void)edge_trajectory(d, 1.0, 2.0); }).has_value());
}

TEST_CASE("closed form matches an adaptive ODE solve", "[averaging]") {
    namespace odeint = boost::numeric::odeint;
    const double m = 0.7, dw = 1.3, h0 = 5.0;
    const EdgeTrajectory tr = edge_trajectory({1, m, dw}, h0, 0.5);
    using State = std::array<double, 1>;
    State x{h0};
    auto rhs = [&](const State& s, State& dx, double) { dx[0] = -m * std::sqrt(2 * s[0]) / (2 * dw); };
    auto stepper = odeint::make_controlled(1e-14, 1e-14, odeint::runge_kutta_dopri5<State>());
    double t = 0.0;
    const double dt_out = tr.duration / 20;
    for (int k = 1; k <= 20; ++k) {
        odeint::integrate_adaptive(stepper, rhs, x, t, k * dt_out, 1e-4);
        t = k * dt_out;
        CHECK(std::abs(x[0] - tr.energy_at(t)) <= 1e-10);
    }
}

TEST_CASE("durations add along an edge", "[averaging]") {
    const EdgeDrift d{1, 0.55, 2.1};
    for (const auto& [a, b, c] : std::vector<std::array<double, 3>>{{9.0, 4.0, 1.0}, {3.3, 3.2999, 0.01}, {100, 50, 25}}) {
        const double whole = edge_trajectory(d, a, c).duration;
        const double parts = edge_trajectory(d, a, b).duration + edge_trajectory(d, b, c).duration;
        CHECK(std::abs(whole - parts) <= 1e-12);
    }
}

TEST_CASE("nested system path with all-left decisions", "[averaging]") {
    const WellGraph g = nested();
    CHECK(edge_drift(g, 7).m == Catch::Approx(0.2 + 0.3).epsilon(1e-14));
    CHECK(edge_drift(g, 4).m == Catch::Approx(0.2 + 0.3).epsilon(1e-14));
    const double h0 = 6.0;
    const GraphPath p = limit_path(g, 7, h0, {{5, Side::Left}, {6, Side::Left}, {7, Side::Left}});
    REQUIRE(p.segments.size() == 4);
    CHECK(p.segments[0].edge == 7);
    CHECK(p.segments[1].edge == 6);
    CHECK(p.segments[2].edge == 5);
    CHECK(p.segments[3].edge == 1);
    check_path(g, p);
    // Widths 4.5, 3.0, 2.2, 1.0; merge levels 4, 3, 2; floor 0.5; all drifts 0.5.
    const double expect = closed_duration(0.5, 4.5, h0, 4.0) + closed_duration(0.5, 3.0, 4.0, 3.0) +
                          closed_duration(0.5, 2.2, 3.0, 2.0) + closed_duration(0.5, 1.0, 2.0, 0.5);
    CHECK(p.end_time() - p.start_time() == Catch::Approx(expect).epsilon(1e-13));
    CHECK(p.energy_at(p.end_time()) == Catch::Approx(0.5).epsilon(1e-13));
    for (const PathSegment& s : p.segments) {
        // sqrt(H) is affine: check at the midpoint.
        const double tm = 0.5 * (s.t0 + s.t1);
        CHECK(std::sqrt(segment_energy(s, tm)) == Catch::Approx(0.5 * (std::sqrt(s.h0) + std::sqrt(s.h1))).epsilon(1e-13));
    }
}

TEST_CASE("path decisions and errors", "[averaging]") {
    const WellGraph g = nested();
    CHECK(error_kind([&] { (void)limit_path(g, 7, 6.0, {{7, Side::Left}}); }) == ErrorKind::Usage);
    CHECK(error_kind([&] { (void)limit_path(g, 7, 13.0, {}); }) == ErrorKind::Usage);
    const GraphPath right = limit_path(g, 7, 6.0, {{7, Side::Right}});
    REQUIRE(right.segments.size() == 2);
    CHECK(right.segments[1].edge == 4);
    const GraphPath leaf = limit_path(g, 3, 2.5, {});
    CHECK(leaf.segments.size() == 1);
    CHECK(error_kind([&] { validate_branch_table(g, {{5, 0.3}, {6, 1.2}, {7, 0.5}}); }) == ErrorKind::Usage);
    CHECK(error_kind([&] { validate_branch_table(g, {{5, 0.3}, {6, 0.2}}); }) == ErrorKind::Usage);
}

TEST_CASE("limit process terminal law is the product of branch probabilities", "[averaging]") {
    const WellGraph g = nested();
    const double p5 = 0.3, p6 = 0.6, p7 = 0.7;
    const BranchTable branch{{5, p5}, {6, p6}, {7, p7}};
    Stream always(1);
    const GraphPath det = sample_limit_process(g, 7, 6.0, {{5, 1.0}, {6, 1.0}, {7, 1.0}}, always);
    CHECK(det.segments.back().edge == 1);

    const std::array<double, 4> law{p5 * p6 * p7, (1 - p5) * p6 * p7, (1 - p6) * p7, 1 - p7};
    std::array<int, 4> hits{};
    const int n = 100000;
    Stream s(31);
    for (int i = 0; i < n; ++i) ++hits[static_cast<std::size_t>(sample_limit_process(g, 7, 6.0, branch, s).segments.back().edge - 1)];
    for (std::size_t k = 0; k < 4; ++k) {
        const double sigma = std::sqrt(law[k] * (1 - law[k]) / n);
        CHECK(std::abs(hits[k] / static_cast<double>(n) - law[k]) <= 3 * sigma);
    }
}
