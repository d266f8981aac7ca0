#include "catch_amalgamated.hpp"

#include <set>

#include "parallel.hpp"
#include "random.hpp"
#include "stats.hpp"

using namespace nelastic;

TEST_CASE("philox known-answer vectors", "[random]") {
    using A4 = std::array<std::uint32_t, 4>;
    CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are reproducible and distinct", "[random]") {
    Stream a(42, 3), b(42, 3), c(42, 4), d(43, 3);
    std::vector<std::uint64_t> va, vb, vc, vd;
    for (int i = 0; i < 100; ++i) {
        va.push_back(a.next_u64());
        vb.push_back(b.next_u64());
        vc.push_back(c.next_u64());
        vd.push_back(d.next_u64());
    }
    CHECK(va == vb);
    CHECK(va != vc);
    CHECK(va != vd);
    CHECK(a.draws() == 100);

    const Stream base(9, 1);
    std::set<std::uint64_t> firsts;
    for (std::uint64_t i = 0; i < 1000; ++i) {
        Stream s = base.substream(i);
        firsts.insert(s.next_u64());
    }
    CHECK(firsts.size() == 1000);
    CHECK(base.substream(5) == base.substream(5));
}

TEST_CASE("uniform_open stays inside (0,1) with mean 1/2", "[random]") {
    Stream s(1);
    MeanAccumulator acc;
    for (int i = 0; i < 200000; ++i) {
        const double u = s.uniform_open();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        acc.add(u);
    }
    // Law of large numbers: 4 standard errors of U(0,1).
    CHECK(std::abs(acc.mean() - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / 200000.0));
}

namespace {
struct Sum {
    std::vector<double> values;
    void merge(const Sum& o) { values.insert(values.end(), o.values.begin(), o.values.end()); }
};
}  // namespace

TEST_CASE("replicate folds chunks in order regardless of workers", "[random][parallel]") {
    const Stream base(77);
    auto body = [&](std::uint64_t, std::uint64_t b, std::uint64_t e) {
        Sum s;
        for (std::uint64_t i = b; i < e; ++i) {
            Stream r = base.substream(i);
            s.values.push_back(r.uniform_open());
        }
        return s;
    };
    set_worker_count(1);
    const Sum one = replicate<Sum>(1000, 7, body);
    set_worker_count(4);
    const Sum four = replicate<Sum>(1000, 7, body);
    set_worker_count(0);
    CHECK(one.values == four.values);
    CHECK(one.values.size() == 1000);
}

TEST_CASE("wilson interval covers the estimate", "[random][stats]") {
    const Interval ci = wilson(30, 100);
    CHECK(ci.lo < 0.3);
    CHECK(ci.hi > 0.3);
    const Interval zero = wilson(0, 100);
    CHECK(zero.lo <= 1e-15);
    CHECK(zero.hi > 0.0);
}
