#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "stats.hpp"
#include "test_util.hpp"

using namespace nelastic;
using nelastic::test::error_kind;

namespace {

// Independent oracles written from the textbook formulas.
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double truncnormal_cdf(double x, double mu, double sigma, double lo, double hi) {
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    const double z = normal_cdf((hi - mu) / sigma) - normal_cdf((lo - mu) / sigma);
    return (normal_cdf((x - mu) / sigma) - normal_cdf((lo - mu) / sigma)) / z;
}

double truncnormal_pdf(double x, double mu, double sigma, double lo, double hi) {
    if (x < lo || x > hi) return 0.0;
    const double z = normal_cdf((hi - mu) / sigma) - normal_cdf((lo - mu) / sigma);
    const double t = (x - mu) / sigma;
    return std::exp(-0.5 * t * t) / (sigma * std::sqrt(2.0 * M_PI) * z);
}

// Composite Simpson on a fine mesh: ln E exp(s X) for a density on [a, b].
template <class Pdf>
double simpson_log_mgf(Pdf pdf, double a, double b, double s, int n = 20000) {
    const double h = (b - a) / n;
    double sum = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = i == n ? b : a + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        sum += w * pdf(x) * std::exp(s * x);
    }
    return std::log(sum * h / 3.0);
}

KickPair pair_of(PerturbationSpec xi, PerturbationSpec eta) { return KickPair{std::move(xi), std::move(eta)}; }

}  // namespace

TEST_CASE("degenerate uniform samples zero", "[kernels]") {
    const auto z = PerturbationSpec::uniform(0.0, 0.0);
    Stream s(3);
    for (int i = 0; i < 1000; ++i) REQUIRE(z.sample(s) == 0.0);
    CHECK_FALSE(z.has_density());
    CHECK(z.samplable());
}

TEST_CASE("uniform sample mean obeys the LLN bound", "[kernels]") {
    const auto u = PerturbationSpec::uniform(0.2, 0.4);
    Stream s(11);
    MeanAccumulator acc;
    for (int i = 0; i < 1000000; ++i) {
        const double x = u.sample(s);
        REQUIRE(x >= 0.2);
        REQUIRE(x <= 0.4);
        acc.add(x);
    }
    CHECK(std::abs(acc.mean() - 0.3) <= 3.0 * (0.2 / std::sqrt(12.0)) / 1e3);
}

TEST_CASE("truncated normal empirical CDF matches the analytic CDF", "[kernels]") {
    const auto t = PerturbationSpec::truncated_normal(0.0, 1.0, -2.0, 2.0);
    Stream s(5);
    std::vector<double> xs(1000000);
    for (double& x : xs) x = t.sample(s);
    std::sort(xs.begin(), xs.end());
    double ks = 0.0;
    const double n = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = truncnormal_cdf(xs[i], 0.0, 1.0, -2.0, 2.0);
        ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
    }
    CHECK(ks < 0.002);
    for (double x : {-1.9, -0.5, 0.0, 0.7, 1.99}) {
        CHECK(t.cdf(x) == Catch::Approx(truncnormal_cdf(x, 0.0, 1.0, -2.0, 2.0)).margin(1e-14));
    }
}

TEST_CASE("closed-form moments", "[kernels]") {
    CHECK(PerturbationSpec::uniform(0.2, 0.4).mean() == Catch::Approx(0.3).epsilon(1e-15));
    CHECK(PerturbationSpec::uniform(0.2, 0.4).variance() == Catch::Approx(0.04 / 12.0).epsilon(1e-13));
    CHECK(PerturbationSpec::two_point(-1.0, 0.25, 1.0).mean() == Catch::Approx(0.5).epsilon(1e-15));
    CHECK(PerturbationSpec::two_point(-1.0, 0.25, 1.0).variance() == Catch::Approx(0.75).epsilon(1e-15));
    CHECK(std::abs(PerturbationSpec::scaled_beta(2.0, 2.0, -1.0, 1.0).mean()) < 1e-15);
    // Beta(2,3) on [0,1]: mean 2/5, variance 6/(25*6) = 1/25.
    CHECK(PerturbationSpec::scaled_beta(2.0, 3.0, 0.0, 1.0).mean() == Catch::Approx(0.4).epsilon(1e-14));
    CHECK(PerturbationSpec::scaled_beta(2.0, 3.0, 0.0, 1.0).variance() == Catch::Approx(0.04).epsilon(1e-13));
    // Truncated normal moments against a Simpson oracle.
    const auto t = PerturbationSpec::truncated_normal(0.3, 0.5, -0.2, 1.0);
    double m = 0.0, m2 = 0.0;
    const int n = 20000;
    const double h = 1.2 / n;
    for (int i = 0; i <= n; ++i) {
        const double x = -0.2 + i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        const double p = truncnormal_pdf(x, 0.3, 0.5, -0.2, 1.0);
        m += w * x * p;
        m2 += w * x * x * p;
    }
    m *= h / 3.0;
    m2 *= h / 3.0;
    CHECK(t.mean() == Catch::Approx(m).epsilon(1e-10));
    CHECK(t.variance() == Catch::Approx(m2 - m * m).epsilon(1e-9));
}

TEST_CASE("cumulant values", "[kernels]") {
    const auto both_pos = pair_of(PerturbationSpec::uniform(0.2, 0.4), PerturbationSpec::uniform(0.6, 1.0));
    const auto test_pair = pair_of(PerturbationSpec::two_point(-1.0, 0.25, 1.0), PerturbationSpec::uniform(0.0, 0.0));
    const auto tn = pair_of(PerturbationSpec::truncated_normal(0.1, 0.3, -0.5, 0.8),
                            PerturbationSpec::scaled_beta(2.0, 3.0, -0.2, 0.9));
    for (const KickPair* p : {&both_pos, &test_pair, &tn}) CHECK(cumulant(*p, 0.0) == 0.0);

    // xi + eta = +1 w.p. 3/4, -1 w.p. 1/4.
    for (double b : {-2.0, -0.3, 0.5, 1.7, 3.0}) {
        CHECK(cumulant(test_pair, b) == Catch::Approx(std::log(0.75 * std::exp(-b) + 0.25 * std::exp(b))).epsilon(1e-14));
    }
    CHECK(std::abs(cumulant(test_pair, std::log(3.0))) < 1e-15);

    const double closed = std::log((std::exp(-0.2) - std::exp(-0.4)) / 0.2 * (std::exp(-0.6) - std::exp(-1.0)) / 0.4);
    CHECK(cumulant(both_pos, 1.0) == Catch::Approx(closed).epsilon(1e-14));
    const double simpson = simpson_log_mgf([](double x) { return x >= 0.2 && x <= 0.4 ? 5.0 : 0.0; }, 0.2, 0.4, -1.0) +
                           simpson_log_mgf([](double x) { return x >= 0.6 && x <= 1.0 ? 2.5 : 0.0; }, 0.6, 1.0, -1.0);
    CHECK(cumulant(both_pos, 1.0) == Catch::Approx(simpson).epsilon(1e-12));

    for (double b : {-4.0, -1.0, 0.7, 5.0}) {
        const double oracle =
            simpson_log_mgf([](double x) { return truncnormal_pdf(x, 0.1, 0.3, -0.5, 0.8); }, -0.5, 0.8, -b) +
            simpson_log_mgf([](double x) { const double y = (x + 0.2) / 1.1; return 12.0 * y * (1 - y) * (1 - y) / 1.1; },
                            -0.2, 0.9, -b);
        CHECK(cumulant(tn, b) == Catch::Approx(oracle).epsilon(1e-10));
        // Independence factorisation.
        CHECK(cumulant(tn, b) == Catch::Approx(tn.xi.log_mgf(-b).value + tn.eta.log_mgf(-b).value).epsilon(1e-12));
    }
}

TEST_CASE("cumulant derivatives", "[kernels]") {
    const std::vector<KickPair> pairs{
        pair_of(PerturbationSpec::uniform(0.2, 0.4), PerturbationSpec::uniform(0.6, 1.0)),
        pair_of(PerturbationSpec::uniform(-0.4, 0.8), PerturbationSpec::uniform(-0.3, 0.9)),
        pair_of(PerturbationSpec::truncated_normal(0.1, 0.3, -0.5, 0.8), PerturbationSpec::scaled_beta(2.0, 3.0, -0.2, 0.9)),
        pair_of(PerturbationSpec::two_point(-1.0, 0.25, 1.0), PerturbationSpec::uniform(0.0, 0.0)),
    };
    for (const KickPair& p : pairs) {
        const auto d0 = cumulant_derivatives(p, 0.0);
        CHECK(d0.d1 == Catch::Approx(-p.mean_sum()).margin(1e-13));
        CHECK(d0.d2 == Catch::Approx(p.xi.variance() + p.eta.variance()).epsilon(1e-10));
        for (int i = 0; i <= 40; ++i) {
            const double b = -6.0 + 0.3 * i;
            const double step = 1e-5;
            const double fd = (cumulant(p, b + step) - cumulant(p, b - step)) / (2 * step);
            const auto d = cumulant_derivatives(p, b);
            CHECK(std::abs(d.d1 - fd) <= 1e-6);
            CHECK(d.d2 > 0.0);
        }
    }
}

TEST_CASE("density grids", "[kernels]") {
    const auto u = PerturbationSpec::uniform(-0.5, 0.25);
    const DensityGrid g = density_grid(u, 301);
    double trap = 0.0, mass = 0.0;
    for (std::size_t i = 0; i < g.x.size(); ++i) {
        const double w = (i == 0 || i + 1 == g.x.size()) ? 0.5 * g.h : g.h;
        trap += w * g.cell_density[i];
        mass += g.mass[i];
        REQUIRE(g.density[i] >= 0.0);
        if (g.x[i] > -0.5 + 1e-12 && g.x[i] < 0.25 - 1e-12) CHECK(g.density[i] == Catch::Approx(1.0 / 0.75).epsilon(1e-14));
        if (g.x[i] < -0.5 - 1e-12 || g.x[i] > 0.25 + 1e-12) CHECK(g.density[i] == 0.0);
    }
    CHECK(std::abs(trap - 1.0) <= 1e-9);
    CHECK(std::abs(mass - 1.0) <= 1e-12);

    const auto t = PerturbationSpec::truncated_normal(0.0, 1.0, -2.0, 2.0);
    const DensityGrid tg = density_grid(t, 1025);
    for (std::size_t i = 0; i < tg.x.size(); ++i) {
        CHECK(std::abs(tg.density[i] - truncnormal_pdf(tg.x[i], 0.0, 1.0, -2.0, 2.0)) <= 1e-12);
    }

    CHECK(error_kind([&] { (void)density_grid(PerturbationSpec::two_point(-1, 0.25, 1), 128); }) == ErrorKind::Hypothesis);
    CHECK(error_kind([&] { (void)density_grid(u, 32); }) == ErrorKind::Usage);
}

TEST_CASE("parsing and validation", "[kernels]") {
    const auto u = PerturbationSpec::parse("uniform(0.2, 0.4)");
    CHECK(u.family() == Family::Uniform);
    CHECK(u.text() == "uniform(0.2, 0.4)");
    CHECK(PerturbationSpec::parse("truncnormal(0,1,-2,2)").family() == Family::TruncatedNormal);
    CHECK(PerturbationSpec::parse("beta(2,2,-1,1)").family() == Family::ScaledBeta);
    CHECK(PerturbationSpec::parse("twopoint(-1,0.25,1)").family() == Family::TwoPoint);
    CHECK(error_kind([] { (void)PerturbationSpec::parse("gauss(0,1)"); }) == ErrorKind::Config);
    CHECK(error_kind([] { (void)PerturbationSpec::parse("uniform(1,0)"); }) == ErrorKind::Config);
    CHECK(error_kind([] { (void)PerturbationSpec::parse("uniform(0"); }) == ErrorKind::Config);

    Stream s(1);
    CHECK(error_kind([&] { (void)PerturbationSpec::two_point(-1, 0.25, 1).sample(s); }) == ErrorKind::Hypothesis);
    CHECK(error_kind([] {
              validate_kick_pair({PerturbationSpec::uniform(-0.5, 0.1), PerturbationSpec::uniform(-0.2, 0.2)});
          }) == ErrorKind::Config);
}

TEST_CASE("sampling is deterministic per stream", "[kernels]") {
    const auto b = PerturbationSpec::scaled_beta(2.0, 5.0, -1.0, 2.0);
    Stream s1(8, 2), s2(8, 2);
    for (int i = 0; i < 1000; ++i) {
        const double x = b.sample(s1);
        REQUIRE(x == b.sample(s2));
        REQUIRE(x >= -1.0);
        REQUIRE(x <= 2.0);
    }
    CHECK(s1.draws() == 1000);
}
