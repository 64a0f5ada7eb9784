#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "chain.hpp"
#include "diffusion.hpp"
#include "quadrature.hpp"
#include "stats.hpp"

namespace lamperti {

// s(x) = (1+x)^alpha/log(e+x): increasing and o(x^alpha), for drifts ~ x^-alpha
inline std::function<double(double)> weibull_truncation(double alpha)
{
    return [alpha](double x) { return std::pow(1.0 + x, alpha) / std::log(M_E + x); };
}

class profile_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Rate profile r with R = int_0^x r and U = int_x^inf e^{-R}.
//   power(c):      r = c/(1+x)
//   iterlog(m, c): r = 1/X + 1/(X L1) + ... + c/(X L1..Lm), X = x + e_(m)
//   general(v, c): r = c v(x), R and U by quadrature
// Everything that would overflow is carried as U e^R or as differences of R.
class RateProfile {
public:
    enum class Kind { power, iterlog, general };
    using Level = std::function<double(double)>;

    static RateProfile power(double c, Level s = default_truncation)
    {
        if (!(c > 1.0)) throw profile_error("power profile needs c > 1, otherwise U diverges");
        RateProfile p;
        p.kind_ = Kind::power;
        p.c_ = c;
        p.s_ = std::move(s);
        return p;
    }

    static RateProfile iterlog(int m, double c, Level s = default_truncation)
    {
        if (m < 1) throw profile_error("iterlog profile needs m >= 1");
        if (!(c > 1.0)) throw profile_error("iterlog profile needs c > 1, otherwise U diverges");
        RateProfile p;
        p.kind_ = Kind::iterlog;
        p.c_ = c;
        p.m_ = m;
        p.e_m_ = detail::iterated_exp(m);
        p.s_ = std::move(s);
        return p;
    }

    static RateProfile general(std::function<double(double)> v, double c, Level s = default_truncation)
    {
        if (!(c > 0.0)) throw profile_error("general profile needs c > 0");
        RateProfile p;
        p.kind_ = Kind::general;
        p.c_ = c;
        p.v_ = v;
        p.s_ = std::move(s);
        DiffusionSpec d;
        d.mu = [v, c](double x) { return 0.5 * c * v(x); };
        d.sigma2 = [](double) { return 1.0; };
        d.breakpoints = {1.0};
        try {
            p.scale_ = std::make_shared<ScaleObjects>(d, true, QuadTolerance{1e-12, 0.0});
        } catch (const diffusion_divergent&) {
            throw profile_error("general profile: U diverges for this v and c");
        }
        p.check_general();
        return p;
    }

    Kind kind() const { return kind_; }
    double c() const { return c_; }
    int m() const { return m_; }
    double e_m() const { return e_m_; }
    double s(double x) const { return s_(x); }
    const std::vector<std::string>& warnings() const { return warnings_; }

    double r(double x) const
    {
        switch (kind_) {
        case Kind::power: return c_ / (1.0 + x);
        case Kind::iterlog: {
            double L = x + e_m_, prod = L, acc = 0.0;
            for (int k = 0; k < m_; ++k) {
                acc += 1.0 / prod;
                L = std::log(L);
                prod *= L;
            }
            return acc + c_ / prod;
        }
        case Kind::general: return c_ * v_(x);
        }
        return 0.0;
    }

    // R(b) - R(a) without cancellation
    double R_between(double a, double b) const
    {
        switch (kind_) {
        case Kind::power: return c_ * std::log1p((b - a) / (1.0 + a));
        case Kind::iterlog: {
            auto d = log_diffs(a, b);
            double acc = 0.0;
            for (int k = 1; k <= m_; ++k) acc += d[k];
            return acc + c_ * d[m_ + 1];
        }
        case Kind::general: return scale_->R_between(a, b);
        }
        return 0.0;
    }
    double R(double x) const { return R_between(0.0, x); }

    // U(x) e^{R(x)} = int_x^inf e^{R(x)-R(z)} dz
    double UeR(double x) const
    {
        switch (kind_) {
        case Kind::power: return (1.0 + x) / (c_ - 1.0);
        case Kind::iterlog: {
            double L = x + e_m_, prod = L;
            for (int k = 1; k <= m_; ++k) {
                L = std::log(L);
                prod *= L;
            }
            return prod / (c_ - 1.0);
        }
        case Kind::general: return scale_->phi(x);
        }
        return 0.0;
    }
    double U(double x) const { return std::exp(-R(x)) * UeR(x); }

    // int_y^{y+z} e^{R(y)-R(u)} du, signed
    double incr(double y, double z) const
    {
        if (z == 0.0) return 0.0;
        switch (kind_) {
        case Kind::power: return UeR(y) * -std::expm1((1.0 - c_) * std::log1p(z / (1.0 + y)));
        case Kind::iterlog: {
            auto d = log_diffs(y, y + z);
            double L = y + e_m_;
            for (int k = 1; k <= m_; ++k) L = std::log(L);
            // L_m(y+z)/L_m(y) = 1 + d_m/L_m(y)
            return UeR(y) * -std::expm1((1.0 - c_) * std::log1p(d[m_] / L));
        }
        case Kind::general: {
            const double scale = std::min(1.0 / r(y), std::max(std::fabs(y), 1.0));
            const int n = 1 + static_cast<int>(std::ceil(4.0 * std::fabs(z) / scale));
            const double step = z / n;
            double acc = 0.0, Racc = 0.0;
            for (int i = 0; i < n; ++i) {
                const double a = y + i * step, b = a + step;
                const double base = Racc;
                acc += integrate_panel([&](double u) { return std::exp(-(base + scale_->R_between(a, u))); }, a, b);
                Racc += scale_->R_between(a, b);
            }
            return acc;
        }
        }
        return 0.0;
    }

private:
    // d[k] = L_k(b) - L_k(a) with L_0 = X, L_k = log L_{k-1}; k = 0..m+1
    std::vector<double> log_diffs(double a, double b) const
    {
        std::vector<double> d(m_ + 2);
        double L = a + e_m_;
        d[0] = b - a;
        for (int k = 1; k <= m_ + 1; ++k) {
            d[k] = std::log1p(d[k - 1] / L);
            L = std::log(L);
        }
        return d;
    }

    // numeric version of: v decreasing, x v(x) -> inf, v' = o(v^2)
    void check_general()
    {
        std::vector<double> grid;
        for (double x = 10.0; x <= 1e6; x *= 1.5) grid.push_back(x);
        double prev_v = std::numeric_limits<double>::infinity(), prev_xv = 0.0;
        double prev_q = std::numeric_limits<double>::infinity();
        bool dec = true, grows = true, ratio = true;
        for (double x : grid) {
            const double v = v_(x);
            if (v > prev_v) dec = false;
            if (x * v < prev_xv) grows = false;
            const double dv = (v_(x * 1.001) - v_(x * 0.999)) / (0.002 * x);
            const double q = std::fabs(dv) / (v * v);
            if (q > prev_q * 1.001 + 1e-12) ratio = false;
            prev_v = v;
            prev_xv = x * v;
            prev_q = q;
        }
        if (!dec) warnings_.push_back("v is not decreasing on [10, 1e6]");
        if (!grows) warnings_.push_back("x v(x) is not increasing on [10, 1e6]");
        if (!ratio) warnings_.push_back("|v'|/v^2 is not decreasing on [10, 1e6]");
        double prev_sr = std::numeric_limits<double>::infinity();
        for (double x : grid) {
            const double sr = s_(x) * r(x);
            if (sr > prev_sr * 1.001) {
                warnings_.push_back("s(x) r(x) is not decreasing on [10, 1e6]");
                break;
            }
            prev_sr = sr;
        }
    }

    Kind kind_ = Kind::power;
    double c_ = 2.0;
    int m_ = 0;
    double e_m_ = 0.0;
    std::function<double(double)> v_;
    Level s_ = default_truncation;
    std::shared_ptr<const ScaleObjects> scale_;
    std::vector<std::string> warnings_;
};


// ---- test functions ----------------------------------------------------------

enum class Side { upper, lower };

// upper: g = 0 | 2(y-x) | 2h on (x+h, k] | 2h e^{R(k)-R(y)} beyond, k = x+h+s(x+h)
// lower: same ramp, then 2h e^{R(x+h)-R(y)} right after x+h
// G = int_0^y g.
class LyapunovPair {
public:
    LyapunovPair(std::shared_ptr<const RateProfile> p, double x, double h, Side side)
        : p_(std::move(p)), x_(x), h_(h), side_(side)
    {
        if (!(h > 0.0)) throw profile_error("build_pair: h must be positive");
        const double sx = p_->s(x);
        if (h > sx * (1.0 + 1e-12))
            throw profile_error("build_pair: h = " + std::to_string(h) + " exceeds s(x) = " + std::to_string(sx));
        if (!(sx < x)) throw profile_error("build_pair: x too small, need s(x) < x");
        knee_ = side == Side::upper ? x + h + p_->s(x + h) : x + h;
    }

    double x() const { return x_; }
    double h() const { return h_; }
    Side side() const { return side_; }
    double knee() const { return knee_; }
    const RateProfile& profile() const { return *p_; }

    double g(double y) const
    {
        if (y <= x_) return 0.0;
        if (y <= x_ + h_) return 2.0 * (y - x_);
        if (y <= knee_) return 2.0 * h_;
        return 2.0 * h_ * std::exp(-p_->R_between(knee_, y));
    }
    // one-sided (right) derivative
    double g_prime(double y) const
    {
        if (y < x_) return 0.0;
        if (y < x_ + h_) return 2.0;
        if (y < knee_) return 0.0;
        return -p_->r(y) * g(y);
    }

    // int_a^b g for a <= b
    double integral(double a, double b) const
    {
        if (b <= a) return 0.0;
        double acc = 0.0;
        const double r0 = std::max(a, x_), r1 = std::min(b, x_ + h_);
        if (r1 > r0) acc += (r1 - r0) * (r1 + r0 - 2.0 * x_);
        const double p0 = std::max(a, x_ + h_), p1 = std::min(b, knee_);
        if (p1 > p0) acc += 2.0 * h_ * (p1 - p0);
        const double e0 = std::max(a, knee_);
        if (b > e0) acc += 2.0 * h_ * std::exp(-p_->R_between(knee_, e0)) * p_->incr(e0, b - e0);
        return acc;
    }
    double G(double y) const { return integral(0.0, y); }
    // G(y+z) - G(y), computed piecewise so small drifts survive
    double G_inc(double y, double z) const { return z >= 0.0 ? integral(y, y + z) : -integral(y + z, y); }

    double G_inf() const
    {
        const double tail = 2.0 * h_ * p_->UeR(knee_);
        if (side_ == Side::upper) return h_ * h_ + 2.0 * h_ * (knee_ - x_ - h_) + tail;
        return h_ * h_ + tail;
    }
    // upper: 2h U(x) e^{R(x+h) + r(x+h) s(x+h)}   (G_inf must not exceed)
    // lower: 2h e^{R(x)} U(x+h)                   (G_inf must not fall below)
    double envelope() const
    {
        if (side_ == Side::upper)
            return 2.0 * h_ * p_->UeR(x_) * std::exp(p_->R_between(x_, x_ + h_) + p_->r(x_ + h_) * p_->s(x_ + h_));
        return 2.0 * h_ * p_->UeR(x_ + h_) * std::exp(-p_->R_between(x_, x_ + h_));
    }

private:
    std::shared_ptr<const RateProfile> p_;
    double x_, h_;
    Side side_;
    double knee_;
};

inline LyapunovPair build_pair(const RateProfile& p, double x, double h, Side side)
{
    return LyapunovPair(std::make_shared<RateProfile>(p), x, h, side);
}

// ---- drift checks --------------------------------------------------------------

enum class DriftCase { below, left_band, ramp, band, right_band, above };

inline const char* case_name(DriftCase c)
{
    switch (c) {
    case DriftCase::below: return "below";
    case DriftCase::left_band: return "left_band";
    case DriftCase::ramp: return "ramp";
    case DriftCase::band: return "band";
    case DriftCase::right_band: return "right_band";
    case DriftCase::above: return "above";
    }
    return "?";
}

struct DriftResult {
    double y = 0.0;
    double drift = 0.0;
    double bound = 0.0;  // the lemma's right-hand side
    double stderr_ = 0.0;  // 0 for exact summation
    DriftCase which = DriftCase::below;
    bool pass = false;
};

namespace detail {

// case and right-hand side at y given E over the jump law
template <class Expect>
DriftResult classify(const LyapunovPair& pair, double y, double t, Expect&& expect)
{
    const double x = pair.x(), h = pair.h();
    const RateProfile& p = pair.profile();
    DriftResult d;
    d.y = y;
    if (pair.side() == Side::upper) {
        if (y <= x) {
            d.which = DriftCase::below;
        } else if (y >= x + t && y <= x + h - t) {
            d.which = DriftCase::band;
            d.bound = expect([&](double z) { return std::fabs(z) <= t ? z * z : 0.0; });
        } else if (y <= x + h) {
            d.which = DriftCase::ramp;
        } else {
            d.which = DriftCase::above;
        }
        return d;
    }
    const double sx = p.s(x), sy = p.s(y);
    if (y <= x - sx) {
        d.which = DriftCase::below;
    } else if (y <= x - t) {
        d.which = DriftCase::left_band;
        d.bound = 2.0 * h * expect([&](double z) { return (z > x - y && z < sy) ? z : 0.0; });
    } else if (y <= x + h + t) {
        d.which = DriftCase::band;
        d.bound = (1.0 + h * p.r(y)) * expect([&](double z) { return std::fabs(z) <= sy ? z * z : 0.0; });
    } else {
        d.which = DriftCase::above;
        d.bound = 3.0 * h * expect([&](double z) { return (z > -sy && z < x + h - y) ? std::fabs(z) : 0.0; });
    }
    return d;
}

} // namespace detail

// E G(y + xi(y)) - G(y) by exact summation over the jump law, with the
// verdict of the matching lemma case (upper: drift >= bound, lower: drift <= bound)
inline DriftResult drift_check(const ChainModel& model, const LyapunovPair& pair, double y, double t)
{
    if (!model.exact_law())
        throw model_error(model.family_name() +
                          " has no closed-form jump law; use drift_check_mc for a stderr-aware verdict");
    const JumpLaw law = model.law(y);
    auto expect = [&](auto&& f) {
        KahanSum s;
        for (auto& a : law.atoms) s.add(a.prob * f(a.value));
        return s.value();
    };
    DriftResult d = detail::classify(pair, y, t, expect);
    KahanSum drift, scale;
    for (auto& a : law.atoms) {
        const double inc = pair.G_inc(y, a.value);
        drift.add(a.prob * inc);
        scale.add(a.prob * std::fabs(inc));
    }
    d.drift = drift.value();
    // terms below the normal range have lost all precision to underflow
    const double tol = 1e-12 * (scale.value() + std::fabs(d.bound)) + std::numeric_limits<double>::min();
    d.pass = pair.side() == Side::upper ? d.drift >= d.bound - tol : d.drift <= d.bound + tol;
    return d;
}

// Monte Carlo drift for sampling-only laws; verdict allows z stderr
inline DriftResult drift_check_mc(const ChainModel& model, const LyapunovPair& pair, double y, double t, std::size_t n,
                                  std::uint64_t seed, double z = 3.0)
{
    const index_t k = model.index_at_or_below(y);
    const double y0 = model.position(k);
    Rng g(seed, static_cast<std::uint64_t>(k));
    std::vector<double> xi(n);
    for (auto& v : xi) v = model.position(model.step(k, g)) - y0;
    auto expect = [&](auto&& f) {
        KahanSum s;
        for (double z : xi) s.add(f(z));
        return s.value() / static_cast<double>(n);
    };
    DriftResult d = detail::classify(pair, y0, t, expect);
    std::vector<double> inc(n);
    for (std::size_t i = 0; i < n; ++i) inc[i] = pair.G_inc(y0, xi[i]);
    auto ms = mean_stderr(inc);
    d.drift = ms.mean;
    d.stderr_ = ms.stderr_;
    d.pass = pair.side() == Side::upper ? d.drift + z * d.stderr_ >= d.bound : d.drift - z * d.stderr_ <= d.bound;
    return d;
}

struct DriftScan {
    std::vector<DriftResult> rows;
    double x_star = 0.0;  // first grid point from which the check held on `run` consecutive points
    bool located = false;
    std::vector<double> failing;  // failures at or beyond x_star
    std::size_t checked_beyond = 0;
};

// lattice grid of states between lo and hi
inline std::vector<double> lattice_grid(const ChainModel& model, double lo, double hi)
{
    std::vector<double> g;
    index_t k = std::max<index_t>(0, model.index_at_or_below(std::max(lo, 0.0)));
    for (double y = model.position(k); y <= hi; y = model.position(++k))
        if (y >= lo) g.push_back(y);
    return g;
}

namespace detail {

// x* = start of the first run of `run` consecutive passes
template <class Check>
DriftScan scan_with(const std::vector<double>& grid, std::size_t run, Check&& check)
{
    DriftScan sc;
    sc.rows.reserve(grid.size());
    std::size_t streak = 0, start = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto d = check(i, grid[i]);
        sc.rows.push_back(d);
        if (!sc.located) {
            if (d.pass) {
                if (streak == 0) start = i;
                if (++streak >= run) {
                    sc.located = true;
                    sc.x_star = grid[start];
                }
            } else {
                streak = 0;
            }
        }
    }
    if (!sc.located) return sc;
    for (auto& d : sc.rows) {
        if (d.y < sc.x_star) continue;
        ++sc.checked_beyond;
        if (!d.pass) sc.failing.push_back(d.y);
    }
    return sc;
}

} // namespace detail

// scan y upward with exact drift sums
inline DriftScan scan_drift(const ChainModel& model, const LyapunovPair& pair, const std::vector<double>& grid, double t,
                            std::size_t run)
{
    return detail::scan_with(grid, run, [&](std::size_t, double y) { return drift_check(model, pair, y, t); });
}

// Sampled version. Each point gets its own stream; the per-point allowance
// is the Bonferroni z for a family-wise false-failure rate `alpha` over the
// whole grid, since 3 stderr at thousands of points fails by chance alone.
inline DriftScan scan_drift_mc(const ChainModel& model, const LyapunovPair& pair, const std::vector<double>& grid,
                               double t, std::size_t run, std::size_t n, std::uint64_t seed, double alpha = 0.01)
{
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("scan_drift_mc: alpha must lie in (0,1)");
    const double z = grid.empty() ? 3.0
                                  : boost::math::quantile(boost::math::complement(
                                        boost::math::normal_distribution<double>(), alpha / double(grid.size())));
    return detail::scan_with(grid, run, [&](std::size_t i, double y) {
        return drift_check_mc(model, pair, y, t, n, seed + i, z);
    });
}

// default grid for a pair: from 0 to far past the knee, where the
// exponential tail of g has decayed
inline std::vector<double> default_drift_grid(const ChainModel& model, const LyapunovPair& pair)
{
    const double k = pair.knee();
    const double far = k + std::max(10.0 * pair.profile().s(k), 20.0 / pair.profile().r(k));
    return lattice_grid(model, 0.0, far);
}

// ---- renewal bounds --------------------------------------------------------------

class certification_error : public std::runtime_error {
public:
    certification_error(const std::string& what, std::vector<double> ys)
        : std::runtime_error(what), failing_y(std::move(ys))
    {
    }
    std::vector<double> failing_y;
};

struct RenewalBound {
    double value = 0.0;
    double x_star = 0.0;
    double G_inf = 0.0;
    double EG0 = 0.0;
    double denominator = 0.0;
    double delta = 0.0;  // lower bound only
    bool vacuous = false;
    std::size_t grid_points = 0;
    double interval_lo = 0.0, interval_hi = 0.0;  // the interval (lo, hi] bounded
};

namespace detail {
inline void certify(const ChainModel& model, const LyapunovPair& pair, double t, RenewalBound& b,
                    std::vector<double> grid)
{
    if (grid.empty()) grid = default_drift_grid(model, pair);
    auto sc = scan_drift(model, pair, grid, t, std::max<std::size_t>(1, std::size_t(10.0 * pair.profile().s(pair.x()))));
    std::vector<double> bad;
    for (auto& d : sc.rows)
        if (!d.pass) bad.push_back(d.y);
    if (!bad.empty())
        throw certification_error("drift check fails at " + std::to_string(bad.size()) + " grid points (first y = " +
                                      std::to_string(bad.front()) + "); bound not certified",
                                  bad);
    b.x_star = sc.x_star;
    b.grid_points = grid.size();
}
} // namespace detail

// H(x+t, x+h-t] <= (G**_inf - G**(x0)) / min over the band of m2^{[t]}
inline RenewalBound renewal_upper_bound(const ChainModel& model, const RateProfile& profile, double x, double h,
                                        double t, double x0 = 0.0, std::vector<double> grid = {})
{
    if (!(t > 0.0 && t < h / 2.0)) throw profile_error("renewal_upper_bound: t must lie in (0, h/2)");
    auto pair = build_pair(profile, x, h, Side::upper);
    RenewalBound b;
    detail::certify(model, pair, t, b, std::move(grid));
    b.G_inf = pair.G_inf();
    b.EG0 = pair.G(x0);
    double mn = std::numeric_limits<double>::infinity();
    for (double y : lattice_grid(model, x + t, x + h - t)) mn = std::min(mn, moments_of(model.law(y), t).m2);
    if (!(mn > 0.0)) throw certification_error("renewal_upper_bound: m2^[t] vanishes on the band", {});
    b.denominator = mn;
    b.value = (b.G_inf - b.EG0) / mn;
    b.interval_lo = x + t;
    b.interval_hi = x + h - t;
    return b;
}

// H(x-t, x+h+t] >= (G*_inf - G*(x0) - delta) / max (1 + h r) m2^{[s]}, with
// delta evaluated against an upper estimate of the visits to each state
inline RenewalBound renewal_lower_bound(const ChainModel& model, const RateProfile& profile, double x, double h,
                                        double t, const std::function<double(double)>& H_upper_state,
                                        double x0 = 0.0, std::vector<double> grid = {})
{
    if (!(t > 0.0 && t < h / 2.0)) throw profile_error("renewal_lower_bound: t must lie in (0, h/2)");
    auto pair = build_pair(profile, x, h, Side::lower);
    RenewalBound b;
    detail::certify(model, pair, t, b, std::move(grid));
    b.G_inf = pair.G_inf();
    b.EG0 = pair.G(x0);
    // delta: only states whose jumps reach the integrand's support contribute
    double jmax = 0.0;
    for (double y : lattice_grid(model, x - profile.s(x), x + h + t))
        for (auto& a : model.law(y).atoms) jmax = std::max(jmax, std::fabs(a.value));
    KahanSum delta;
    const double sx = profile.s(x);
    for (double y : lattice_grid(model, x - sx, x - t)) {
        if (y <= x - sx) continue;
        const double sy = profile.s(y);
        KahanSum e;
        for (auto& a : model.law(y).atoms)
            if (a.value > x - y && a.value < sy) e.add(a.prob * a.value);
        if (e.value() != 0.0) delta.add(2.0 * h * H_upper_state(y) * e.value());
    }
    for (double y : lattice_grid(model, x + h + t, x + h + jmax + 1e-9)) {
        if (y <= x + h + t) continue;
        const double sy = profile.s(y);
        KahanSum e;
        for (auto& a : model.law(y).atoms)
            if (a.value > -sy && a.value < x + h - y) e.add(a.prob * std::fabs(a.value));
        if (e.value() != 0.0) delta.add(3.0 * h * H_upper_state(y) * e.value());
    }
    b.delta = delta.value();
    double mx = 0.0;
    for (double y : lattice_grid(model, x - t, x + h + t))
        mx = std::max(mx, (1.0 + h * profile.r(y)) * moments_of(model.law(y), profile.s(y)).m2);
    b.denominator = mx;
    const double num = b.G_inf - b.EG0 - b.delta;
    b.vacuous = !(num > 0.0);
    b.value = b.vacuous ? 0.0 : num / mx;
    b.interval_lo = x - t;
    b.interval_hi = x + h + t;
    return b;
}

// theta = |2 mu/(b c) - 1|/2, the margin between the drift ratio and the profile
inline double theta_margin(double mu, double b, double c) { return std::fabs(2.0 * mu / (b * c) - 1.0) / 2.0; }

// Profile matched to a builtin family: the drift ratio 2 m1/m2 with its
// leading constant scaled by (1 - margin) for the upper side and (1 + margin)
// for the lower side.
// Weibull-type families default to weibull_truncation unless s is given.
inline RateProfile default_profile(const ChainModel& model, Side side, double margin,
                                   std::optional<RateProfile::Level> level = std::nullopt)
{
    auto s = level.value_or(default_truncation);
    const double f = side == Side::upper ? 1.0 - margin : 1.0 + margin;
    return model.visit([&](const auto& fam) -> RateProfile {
        using T = std::decay_t<decltype(fam)>;
        if constexpr (std::is_same_v<T, NearestNeighbour>) {
            const double k = (fam.mu_plus + fam.mu_minus) / fam.p;
            if (fam.alpha == 1.0) return RateProfile::power(k * f, s);
            const double a = fam.alpha, sh = fam.shift, mp = fam.mu_plus + fam.mu_minus;
            return RateProfile::general([=](double x) { return mp * std::pow(std::max(x + sh, 1.0), -a); },
                                        f / fam.p, level.value_or(weibull_truncation(a)));
        } else if constexpr (std::is_same_v<T, LampertiRegular>) {
            return RateProfile::power(2.0 * fam.mu / fam.b * f, s);
        } else if constexpr (std::is_same_v<T, LampertiCritical>) {
            return RateProfile::iterlog(fam.m, (fam.gamma + 1.0) * f, s);
        } else if constexpr (std::is_same_v<T, LampertiWeibull>) {
            const double a = fam.alpha, mu = fam.mu;
            return RateProfile::general([=](double x) { return mu * std::pow(std::max(x, 1.0), -a); }, 2.0 / fam.b * f,
                                        level.value_or(weibull_truncation(a)));
        } else if constexpr (std::is_same_v<T, ConstantDrift>) {
            const double a = fam.a;
            return RateProfile::general([=](double) { return a; }, 2.0 / fam.b * f, s);
        } else if constexpr (std::is_same_v<T, SqrtBranching>) {
            return RateProfile::power((4.0 * fam.a / fam.sigma2 - 1.0) * f, s);
        } else if constexpr (std::is_same_v<T, Truncated>) {
            return default_profile(*fam.base, side, margin, level);
        } else {
            // conditioned walks: 2 m1/m2 ~ 2/x
            return RateProfile::power(2.0 * f, s);
        }
    });
}

} // namespace lamperti
