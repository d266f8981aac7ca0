#include "kernels.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <limits>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "error.hpp"
#include "quadrature.hpp"

namespace nelastic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kQuadTol = 1e-12;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

const boost::math::normal_distribution<double>& std_normal() {
    static const boost::math::normal_distribution<double> n(0.0, 1.0);
    return n;
}

double phi(double z) { return boost::math::pdf(std_normal(), z); }
double big_phi(double z) { return boost::math::cdf(std_normal(), z); }
double big_q(double z) { return boost::math::cdf(boost::math::complement(std_normal(), z)); }

// Mass of the standard normal between za < zb, computed on the side of the
// origin that keeps it accurate.
double normal_mass(double za, double zb) {
    if (za > 0.0) {
        return big_q(za) - big_q(zb);
    }
    return big_phi(zb) - big_phi(za);
}

// ln((e^u - 1) / u), stable for all u.
double log_phi(double u) {
    if (std::abs(u) < 1e-3) {
        const double u2 = u * u;
        return u / 2.0 + u2 / 24.0 - u2 * u2 / 2880.0;
    }
    if (u > 0.0) {
        return u + std::log(-std::expm1(-u) / u);
    }
    return std::log(std::expm1(u) / u);
}

// h(u) = 1/(1 - e^{-u}) - 1/u, the tilted mean of U(0,1).
double tilt_mean(double u) {
    if (std::abs(u) < 0.1) {
        const double u2 = u * u;
        return 0.5 + u * (1.0 / 12.0 + u2 * (-1.0 / 720.0 + u2 * (1.0 / 30240.0 - u2 / 1209600.0)));
    }
    return 1.0 / (-std::expm1(-u)) - 1.0 / u;
}

// h'(u) = 1/u^2 - 1/(4 sinh^2(u/2)), the tilted variance of U(0,1).
double tilt_var(double u) {
    if (std::abs(u) < 0.1) {
        const double u2 = u * u;
        return 1.0 / 12.0 + u2 * (-1.0 / 240.0 + u2 * (1.0 / 6048.0 - u2 / 172800.0));
    }
    const double sh = std::sinh(0.5 * u);
    return 1.0 / (u * u) - 1.0 / (4.0 * sh * sh);
}

double checked_integral(const std::function<double(double)>& f, double a, double b, double floor,
                        const char* what) {
    const QuadratureResult r = integrate_adaptive(f, a, b, kQuadTol, 20, floor);
    if (!r.converged) {
        fail(ErrorKind::Numeric,
             fmt::format("quadrature for {} did not converge (estimated error {:.3g}, value {:.17g})",
                         what, r.error, r.value));
    }
    return r.value;
}

// log-mgf of a density on [lo, hi] by quadrature, with the exponent shifted so
// the integrand never exceeds the density.
LogMgf quad_log_mgf(const PerturbationSpec& spec, double lo, double hi, double s) {
    const double shift = s > 0.0 ? hi : lo;
    auto weight = [&](double x) { return spec.density(x) * std::exp(s * (x - shift)); };
    const double i0 = checked_integral(weight, lo, hi, 1e-300, "log-mgf");
    if (!(i0 > 0.0)) {
        fail(ErrorKind::Numeric, fmt::format("log-mgf underflow at s = {:.17g}", s));
    }
    const double floor = 1e-15 * i0 * (hi - lo);
    const double c0 = 0.5 * (lo + hi);
    const double i1 = checked_integral([&](double x) { return (x - c0) * weight(x); }, lo, hi,
                                       floor, "log-mgf derivative");
    const double m = c0 + i1 / i0;
    const double i2 = checked_integral([&](double x) { return (x - m) * (x - m) * weight(x); }, lo,
                                       hi, floor * (hi - lo), "log-mgf second derivative");
    return {s * shift + std::log(i0), m, i2 / i0};
}

double log_sum_exp(double a, double b) {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::string canonical(const PerturbationSpec::Params& p) {
    return std::visit(
        overloaded{
            [](const UniformParams& u) { return fmt::format("uniform({:g},{:g})", u.a, u.b); },
            [](const TruncatedNormalParams& t) {
                return fmt::format("truncnormal({:g},{:g},{:g},{:g})", t.mu, t.sigma, t.lo, t.hi);
            },
            [](const ScaledBetaParams& b) {
                return fmt::format("beta({:g},{:g},{:g},{:g})", b.alpha, b.beta, b.lo, b.hi);
            },
            [](const TwoPointParams& t) {
                return fmt::format("twopoint({:g},{:g},{:g})", t.x1, t.p1, t.x2);
            },
        },
        p);
}

void validate(const PerturbationSpec::Params& p) {
    auto finite = [](std::initializer_list<double> xs) {
        return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
    };
    std::visit(
        overloaded{
            [&](const UniformParams& u) {
                if (!finite({u.a, u.b}) || u.a > u.b) {
                    fail(ErrorKind::Config, "uniform(a,b) needs finite a <= b");
                }
            },
            [&](const TruncatedNormalParams& t) {
                if (!finite({t.mu, t.sigma, t.lo, t.hi}) || t.sigma <= 0.0 || t.lo >= t.hi) {
                    fail(ErrorKind::Config, "truncnormal(mu,sigma,lo,hi) needs sigma > 0 and lo < hi");
                }
                if (normal_mass((t.lo - t.mu) / t.sigma, (t.hi - t.mu) / t.sigma) < 1e-200) {
                    fail(ErrorKind::Config, "truncnormal interval carries no normal mass");
                }
            },
            [&](const ScaledBetaParams& b) {
                if (!finite({b.alpha, b.beta, b.lo, b.hi}) || b.lo >= b.hi) {
                    fail(ErrorKind::Config, "beta(alpha,beta,lo,hi) needs finite lo < hi");
                }
                if (b.alpha < 1.0 || b.beta < 1.0) {
                    fail(ErrorKind::Config, "beta shape parameters must be >= 1 (bounded density)");
                }
            },
            [&](const TwoPointParams& t) {
                if (!finite({t.x1, t.p1, t.x2}) || t.p1 < 0.0 || t.p1 > 1.0) {
                    fail(ErrorKind::Config, "twopoint(x1,p1,x2) needs p1 in [0,1]");
                }
            },
        },
        p);
}

}  // namespace

PerturbationSpec::PerturbationSpec(Params params, std::string text)
    : params_(std::move(params)), text_(std::move(text)) {
    validate(params_);
    if (text_.empty()) {
        text_ = canonical(params_);
    }
}

PerturbationSpec PerturbationSpec::uniform(double a, double b) {
    return PerturbationSpec(UniformParams{a, b});
}
PerturbationSpec PerturbationSpec::truncated_normal(double mu, double sigma, double lo, double hi) {
    return PerturbationSpec(TruncatedNormalParams{mu, sigma, lo, hi});
}
PerturbationSpec PerturbationSpec::scaled_beta(double alpha, double beta, double lo, double hi) {
    return PerturbationSpec(ScaledBetaParams{alpha, beta, lo, hi});
}
PerturbationSpec PerturbationSpec::two_point(double x1, double p1, double x2) {
    return PerturbationSpec(TwoPointParams{x1, p1, x2});
}

PerturbationSpec PerturbationSpec::parse(std::string_view text) {
    auto trim = [](std::string_view s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
        return s;
    };
    const std::string_view t = trim(text);
    const auto open = t.find('(');
    if (open == std::string_view::npos || t.back() != ')') {
        fail(ErrorKind::Config, fmt::format("bad distribution '{}': expected name(args)", t));
    }
    std::string name(trim(t.substr(0, open)));
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::vector<double> args;
    std::string_view rest = t.substr(open + 1, t.size() - open - 2);
    while (true) {
        const auto comma = rest.find(',');
        const std::string item(trim(rest.substr(0, comma)));
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (item.empty() || end != item.c_str() + item.size()) {
            fail(ErrorKind::Config, fmt::format("bad number '{}' in distribution '{}'", item, t));
        }
        args.push_back(v);
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    auto want = [&](std::size_t n) {
        if (args.size() != n) {
            fail(ErrorKind::Config,
                 fmt::format("distribution '{}' takes {} arguments, got {}", name, n, args.size()));
        }
    };
    const std::string verbatim(t);
    if (name == "uniform") {
        want(2);
        return PerturbationSpec(UniformParams{args[0], args[1]}, verbatim);
    }
    if (name == "truncnormal" || name == "truncated-normal") {
        want(4);
        return PerturbationSpec(TruncatedNormalParams{args[0], args[1], args[2], args[3]}, verbatim);
    }
    if (name == "beta" || name == "scaled-beta") {
        want(4);
        return PerturbationSpec(ScaledBetaParams{args[0], args[1], args[2], args[3]}, verbatim);
    }
    if (name == "twopoint" || name == "two-point") {
        want(3);
        return PerturbationSpec(TwoPointParams{args[0], args[1], args[2]}, verbatim);
    }
    fail(ErrorKind::Config, fmt::format("unknown distribution family '{}'", name));
}

Family PerturbationSpec::family() const noexcept {
    return static_cast<Family>(params_.index());
}

double PerturbationSpec::lower() const noexcept {
    return std::visit(overloaded{
                          [](const UniformParams& u) { return u.a; },
                          [](const TruncatedNormalParams& t) { return t.lo; },
                          [](const ScaledBetaParams& b) { return b.lo; },
                          [](const TwoPointParams& t) {
                              if (t.p1 == 0.0) return t.x2;
                              if (t.p1 == 1.0) return t.x1;
                              return std::min(t.x1, t.x2);
                          },
                      },
                      params_);
}

double PerturbationSpec::upper() const noexcept {
    return std::visit(overloaded{
                          [](const UniformParams& u) { return u.b; },
                          [](const TruncatedNormalParams& t) { return t.hi; },
                          [](const ScaledBetaParams& b) { return b.hi; },
                          [](const TwoPointParams& t) {
                              if (t.p1 == 0.0) return t.x2;
                              if (t.p1 == 1.0) return t.x1;
                              return std::max(t.x1, t.x2);
                          },
                      },
                      params_);
}

double PerturbationSpec::bound() const noexcept {
    return std::max(std::abs(lower()), std::abs(upper()));
}

bool PerturbationSpec::samplable() const noexcept { return family() != Family::TwoPoint; }

bool PerturbationSpec::has_density() const noexcept {
    if (family() == Family::TwoPoint) return false;
    if (const auto* u = std::get_if<UniformParams>(&params_)) return u->b > u->a;
    return true;
}

double PerturbationSpec::atom_at_lower() const noexcept {
    if (const auto* u = std::get_if<UniformParams>(&params_)) return u->a == u->b ? 1.0 : 0.0;
    if (const auto* t = std::get_if<TwoPointParams>(&params_)) {
        if (t->x1 == t->x2) return 1.0;
        const double lo = lower();
        return (t->x1 == lo ? t->p1 : 0.0) + (t->x2 == lo ? 1.0 - t->p1 : 0.0);
    }
    return 0.0;
}

double PerturbationSpec::atom_at_upper() const noexcept {
    if (const auto* u = std::get_if<UniformParams>(&params_)) return u->a == u->b ? 1.0 : 0.0;
    if (const auto* t = std::get_if<TwoPointParams>(&params_)) {
        if (t->x1 == t->x2) return 1.0;
        const double hi = upper();
        return (t->x1 == hi ? t->p1 : 0.0) + (t->x2 == hi ? 1.0 - t->p1 : 0.0);
    }
    return 0.0;
}

double PerturbationSpec::mean() const {
    return std::visit(
        overloaded{
            [](const UniformParams& u) { return 0.5 * (u.a + u.b); },
            [](const TruncatedNormalParams& t) {
                const double a = (t.lo - t.mu) / t.sigma;
                const double b = (t.hi - t.mu) / t.sigma;
                return t.mu + t.sigma * (phi(a) - phi(b)) / normal_mass(a, b);
            },
            [](const ScaledBetaParams& b) {
                return b.lo + (b.hi - b.lo) * b.alpha / (b.alpha + b.beta);
            },
            [](const TwoPointParams& t) { return t.p1 * t.x1 + (1.0 - t.p1) * t.x2; },
        },
        params_);
}

double PerturbationSpec::variance() const {
    return std::visit(
        overloaded{
            [](const UniformParams& u) { return (u.b - u.a) * (u.b - u.a) / 12.0; },
            [](const TruncatedNormalParams& t) {
                const double a = (t.lo - t.mu) / t.sigma;
                const double b = (t.hi - t.mu) / t.sigma;
                const double z = normal_mass(a, b);
                const double r = (phi(a) - phi(b)) / z;
                return t.sigma * t.sigma * (1.0 + (a * phi(a) - b * phi(b)) / z - r * r);
            },
            [](const ScaledBetaParams& b) {
                const double w = b.hi - b.lo;
                const double s = b.alpha + b.beta;
                return w * w * b.alpha * b.beta / (s * s * (s + 1.0));
            },
            [](const TwoPointParams& t) {
                const double d = t.x1 - t.x2;
                return t.p1 * (1.0 - t.p1) * d * d;
            },
        },
        params_);
}

double PerturbationSpec::density(double x) const {
    return std::visit(
        overloaded{
            [&](const UniformParams& u) -> double {
                if (u.b == u.a) fail(ErrorKind::Hypothesis, "uniform(a,a) has no density");
                return (x >= u.a && x <= u.b) ? 1.0 / (u.b - u.a) : 0.0;
            },
            [&](const TruncatedNormalParams& t) -> double {
                if (x < t.lo || x > t.hi) return 0.0;
                const double a = (t.lo - t.mu) / t.sigma;
                const double b = (t.hi - t.mu) / t.sigma;
                return phi((x - t.mu) / t.sigma) / (t.sigma * normal_mass(a, b));
            },
            [&](const ScaledBetaParams& b) -> double {
                if (x < b.lo || x > b.hi) return 0.0;
                const double w = b.hi - b.lo;
                const double y = std::clamp((x - b.lo) / w, 0.0, 1.0);
                return boost::math::pdf(boost::math::beta_distribution<double>(b.alpha, b.beta), y) / w;
            },
            [&](const TwoPointParams&) -> double {
                fail(ErrorKind::Hypothesis, "two-point kicks have no density");
            },
        },
        params_);
}

double PerturbationSpec::cdf(double x) const {
    return std::visit(
        overloaded{
            [&](const UniformParams& u) -> double {
                if (x < u.a) return 0.0;
                if (x >= u.b) return 1.0;
                return (x - u.a) / (u.b - u.a);
            },
            [&](const TruncatedNormalParams& t) -> double {
                if (x <= t.lo) return 0.0;
                if (x >= t.hi) return 1.0;
                const double a = (t.lo - t.mu) / t.sigma;
                const double b = (t.hi - t.mu) / t.sigma;
                const double z = (x - t.mu) / t.sigma;
                return std::clamp(normal_mass(a, z) / normal_mass(a, b), 0.0, 1.0);
            },
            [&](const ScaledBetaParams& b) -> double {
                if (x <= b.lo) return 0.0;
                if (x >= b.hi) return 1.0;
                return boost::math::cdf(boost::math::beta_distribution<double>(b.alpha, b.beta),
                                        (x - b.lo) / (b.hi - b.lo));
            },
            [&](const TwoPointParams& t) -> double {
                return (x >= t.x1 ? t.p1 : 0.0) + (x >= t.x2 ? 1.0 - t.p1 : 0.0);
            },
        },
        params_);
}

double PerturbationSpec::quantile(double u) const {
    return std::visit(
        overloaded{
            [&](const UniformParams& p) { return p.a + (p.b - p.a) * u; },
            [&](const TruncatedNormalParams& t) {
                const double a = (t.lo - t.mu) / t.sigma;
                const double b = (t.hi - t.mu) / t.sigma;
                double z;
                if (a > 0.0) {
                    const double qa = big_q(a);
                    const double q = qa - u * (qa - big_q(b));
                    z = boost::math::quantile(boost::math::complement(std_normal(), q));
                } else {
                    const double pa = big_phi(a);
                    const double p = pa + u * (big_phi(b) - pa);
                    z = boost::math::quantile(std_normal(), p);
                }
                return std::clamp(t.mu + t.sigma * z, t.lo, t.hi);
            },
            [&](const ScaledBetaParams& b) {
                const double y =
                    boost::math::quantile(boost::math::beta_distribution<double>(b.alpha, b.beta), u);
                return b.lo + (b.hi - b.lo) * y;
            },
            [&](const TwoPointParams& t) { return u < t.p1 ? t.x1 : t.x2; },
        },
        params_);
}

double PerturbationSpec::sample(Stream& stream) const {
    if (!samplable()) {
        fail(ErrorKind::Hypothesis,
             fmt::format("sampling unsupported for '{}': two-point kicks are analytic-only", text_));
    }
    return quantile(stream.uniform_open());
}

LogMgf PerturbationSpec::log_mgf(double s) const {
    if (s == 0.0) {
        return {0.0, mean(), variance()};
    }
    return std::visit(
        overloaded{
            [&](const UniformParams& p) -> LogMgf {
                const double w = p.b - p.a;
                if (w == 0.0) return {s * p.a, p.a, 0.0};
                const double u = s * w;
                return {s * p.a + log_phi(u), p.a + w * tilt_mean(u), w * w * tilt_var(u)};
            },
            [&](const TruncatedNormalParams& t) { return quad_log_mgf(*this, t.lo, t.hi, s); },
            [&](const ScaledBetaParams& b) { return quad_log_mgf(*this, b.lo, b.hi, s); },
            [&](const TwoPointParams& t) -> LogMgf {
                const double l1 = t.p1 > 0.0 ? std::log(t.p1) + s * t.x1 : -kInf;
                const double l2 = t.p1 < 1.0 ? std::log1p(-t.p1) + s * t.x2 : -kInf;
                const double v = log_sum_exp(l1, l2);
                const double w1 = std::exp(l1 - v);
                const double w2 = std::exp(l2 - v);
                const double m = w1 * t.x1 + w2 * t.x2;
                const double d = t.x1 - t.x2;
                return {v, m, w1 * w2 * d * d};
            },
        },
        params_);
}

double PerturbationSpec::log_mgf_negative_part(double s) const {
    return std::visit(
        overloaded{
            [&](const UniformParams& p) -> double {
                if (p.a >= 0.0) return -kInf;
                const double w = p.b - p.a;
                if (w == 0.0) return s * p.a;
                const double c = std::min(p.b, 0.0);
                return s * p.a + std::log((c - p.a) / w) + log_phi(s * (c - p.a));
            },
            [&](const TruncatedNormalParams& t) -> double {
                if (t.lo >= 0.0) return -kInf;
                const double hi = std::min(t.hi, 0.0);
                const double shift = s > 0.0 ? hi : t.lo;
                const double i0 = checked_integral(
                    [&](double x) { return density(x) * std::exp(s * (x - shift)); }, t.lo, hi,
                    1e-300, "partial log-mgf");
                return s * shift + std::log(i0);
            },
            [&](const ScaledBetaParams& b) -> double {
                if (b.lo >= 0.0) return -kInf;
                const double hi = std::min(b.hi, 0.0);
                const double shift = s > 0.0 ? hi : b.lo;
                const double i0 = checked_integral(
                    [&](double x) { return density(x) * std::exp(s * (x - shift)); }, b.lo, hi,
                    1e-300, "partial log-mgf");
                return s * shift + std::log(i0);
            },
            [&](const TwoPointParams& t) -> double {
                double v = -kInf;
                if (t.x1 < 0.0 && t.p1 > 0.0) v = log_sum_exp(v, std::log(t.p1) + s * t.x1);
                if (t.x2 < 0.0 && t.p1 < 1.0) v = log_sum_exp(v, std::log1p(-t.p1) + s * t.x2);
                return v;
            },
        },
        params_);
}

double KickPair::bound() const { return std::max(xi.bound(), eta.bound()); }

void validate_kick_pair(const KickPair& pair) {
    if (!(pair.mean_sum() > 0.0)) {
        fail(ErrorKind::Config,
             fmt::format("kick pair xi={} eta={} has E(xi+eta) = {:.6g}, must be > 0", pair.xi.text(),
                         pair.eta.text(), pair.mean_sum()));
    }
}

LogMgf cumulant_all(const KickPair& pair, double beta) {
    const LogMgf a = pair.xi.log_mgf(-beta);
    const LogMgf b = pair.eta.log_mgf(-beta);
    return {a.value + b.value, -(a.d1 + b.d1), a.d2 + b.d2};
}

double cumulant(const KickPair& pair, double beta) {
    if (beta == 0.0) return 0.0;
    return cumulant_all(pair, beta).value;
}

CumulantDerivatives cumulant_derivatives(const KickPair& pair, double beta) {
    const LogMgf k = cumulant_all(pair, beta);
    return {k.d1, k.d2};
}

DensityGrid density_grid(const PerturbationSpec& spec, int n_points) {
    if (!spec.has_density()) {
        fail(ErrorKind::Hypothesis, fmt::format("density grid unsupported for '{}'", spec.text()));
    }
    if (n_points < 64) {
        fail(ErrorKind::Usage, fmt::format("density grid needs at least 64 points, got {}", n_points));
    }
    const double m = spec.bound();
    DensityGrid g;
    g.x0 = -m;
    g.h = 2.0 * m / (n_points - 1);
    const auto n = static_cast<std::size_t>(n_points);
    g.x.resize(n);
    g.density.resize(n);
    g.mass.resize(n);
    g.cell_density.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = i + 1 == n ? m : g.x0 + static_cast<double>(i) * g.h;
        g.x[i] = x;
        g.density[i] = spec.density(x);
        const double lo = i == 0 ? -m : x - 0.5 * g.h;
        const double hi = i + 1 == n ? m : x + 0.5 * g.h;
        g.mass[i] = spec.cdf(hi) - (i == 0 ? 0.0 : spec.cdf(lo));
        if (i + 1 == n) g.mass[i] = 1.0 - spec.cdf(lo);
        const double weight = (i == 0 || i + 1 == n) ? 0.5 * g.h : g.h;
        g.cell_density[i] = g.mass[i] / weight;
    }
    return g;
}

}  // namespace nelastic
