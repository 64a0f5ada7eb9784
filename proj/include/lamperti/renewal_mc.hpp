#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "chain.hpp"
#include "green_exact.hpp"
#include "lyapunov.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace lamperti {

// (a, b]
struct Interval {
    double a = 0.0;
    double b = 0.0;
};

inline Interval checkpoint(double x, double h) { return {x, x + h}; }

// plain: simulate until the path passes the escape level.
// exact: skip-free chains only; below the lowest interval the path is moved
//   straight back up (it returns surely), and on leaving the top it comes
//   back with the exact return probability from the series.
// regenerative: as exact, but each interval is its own cycle: the number
//   of returns through its top is averaged out (geometric with known
//   ratio) instead of sampled.
// exact shares trajectories only within groups of touching intervals,
// regenerative never does.
enum class McMode { automatic, plain, exact, regenerative };

inline const char* to_string(McMode m)
{
    switch (m) {
    case McMode::plain: return "plain";
    case McMode::exact: return "exact";
    case McMode::regenerative: return "regenerative";
    default: return "automatic";
    }
}

struct McOptions {
    std::size_t n_paths = 10000;
    std::optional<double> escape_level;
    std::size_t step_budget = 10'000'000;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    McMode mode = McMode::automatic;
    // first path index; lets several runs draw disjoint streams from one seed
    std::uint64_t path_offset = 0;
};

struct RenewalEstimate {
    double a = 0.0;
    double b = 0.0;
    double mean_visits = 0.0;
    double stderr_ = 0.0;
    std::size_t n_paths = 0;
    double budget_hits = 0.0;
    double escape_level = 0.0;
    McMode mode = McMode::plain;

    bool biased_low() const { return budget_hits > 0.01; }
};

// b + max(10 s(b), 10/r(b)) for the default rate profile of the model
inline double default_escape_level(const ChainModel& model, double b)
{
    double s = default_truncation(b), r = 1.0 / (1.0 + std::max(b, 0.0));
    try {
        auto p = default_profile(model, Side::upper, 0.0);
        s = p.s(b);
        r = p.r(b);
    } catch (const std::exception&) {
    }
    return b + std::max(10.0 * s, 10.0 / r);
}

inline McMode resolve_mode(const ChainModel& model, McMode m)
{
    if (m == McMode::automatic) return model.skip_free() ? McMode::exact : McMode::plain;
    if (m != McMode::plain && !model.skip_free())
        throw model_error(std::string("renewal_mc: ") + to_string(m) + " mode needs a skip-free chain");
    return m;
}

namespace detail {

struct PathCounts {
    std::vector<double> y; // per interval
    bool budget_hit = false;
};

inline void check_intervals(const std::vector<Interval>& iv)
{
    for (auto& i : iv)
        if (!(i.b > i.a)) throw std::invalid_argument("renewal_mc: interval needs b > a");
}

inline std::vector<RenewalEstimate> reduce(const std::vector<Interval>& iv, const std::vector<PathCounts>& paths,
                                           double escape, McMode mode)
{
    std::vector<RenewalEstimate> out(iv.size());
    std::size_t hits = 0;
    for (auto& p : paths) hits += p.budget_hit ? 1 : 0;
    std::vector<double> col(paths.size());
    for (std::size_t j = 0; j < iv.size(); ++j) {
        for (std::size_t i = 0; i < paths.size(); ++i) col[i] = paths[i].y[j];
        auto ms = mean_stderr(col);
        auto& e = out[j];
        e.a = iv[j].a;
        e.b = iv[j].b;
        e.mean_visits = ms.mean;
        e.stderr_ = ms.stderr_;
        e.n_paths = paths.size();
        e.budget_hits = paths.empty() ? 0.0 : double(hits) / double(paths.size());
        e.escape_level = escape;
        e.mode = mode;
    }
    return out;
}

inline std::vector<RenewalEstimate> run_plain(const ChainModel& model, double x0, const std::vector<Interval>& iv,
                                              const McOptions& o)
{
    double top = -std::numeric_limits<double>::infinity();
    for (auto& i : iv) top = std::max(top, i.b);
    const double L = o.escape_level.value_or(default_escape_level(model, top));
    if (L < top) throw std::invalid_argument("renewal_mc: escape level below the interval");
    std::vector<PathCounts> paths(o.n_paths);
    const index_t k0 = model.index_of(x0);
    parallel_for(o.n_paths, o.threads, [&](std::size_t i) {
        Rng g(o.seed, o.path_offset + i);
        auto& pc = paths[i];
        std::vector<std::uint64_t> n(iv.size(), 0);
        index_t k = k0;
        std::size_t steps = 0;
        for (;;) {
            const double x = model.position(k);
            for (std::size_t j = 0; j < iv.size(); ++j)
                if (x > iv[j].a && x <= iv[j].b) ++n[j];
            if (x > L) break;
            if (steps >= o.step_budget) {
                pc.budget_hit = true;
                break;
            }
            k = model.step(k, g);
            ++steps;
        }
        pc.y.assign(n.begin(), n.end());
    });
    return reduce(iv, paths, L, McMode::plain);
}

// Interval j covers lattice indices [lo_j, hi_j].
struct IndexRange {
    index_t lo, hi;
};

inline std::vector<RenewalEstimate> run_exact(const ChainModel& model, double x0, const std::vector<Interval>& iv,
                                              const McOptions& o, bool regenerative)
{
    const McMode mode = regenerative ? McMode::regenerative : McMode::exact;
    double top = -std::numeric_limits<double>::infinity();
    for (auto& i : iv) top = std::max(top, i.b);
    // regenerative cycles close at the top of each interval
    const double L = regenerative ? top : std::max(o.escape_level.value_or(top), top);
    std::vector<IndexRange> rg;
    index_t lo = std::numeric_limits<index_t>::max();
    for (auto& i : iv) {
        IndexRange r{std::max<index_t>(model.index_at_or_below(i.a) + 1, 0), model.index_at_or_below(i.b)};
        rg.push_back(r);
        if (r.hi >= r.lo) lo = std::min(lo, r.lo);
    }
    const index_t kL = model.index_at_or_below(L);
    if (lo > kL) {
        // no lattice state inside any interval
        std::vector<PathCounts> zero(o.n_paths, PathCounts{std::vector<double>(iv.size(), 0.0), false});
        return reduce(iv, zero, L, mode);
    }
    const index_t k0 = std::max<index_t>(model.index_of(x0), 0);
    NNGreen green(*model.nn_spec(), std::max(kL + 1, k0));

    const std::size_t n = static_cast<std::size_t>(kL - lo + 1);
    std::vector<double> up(n), updn(n);
    for (std::size_t i = 0; i < n; ++i) {
        const index_t k = lo + static_cast<index_t>(i);
        up[i] = model.up(k);
        updn[i] = up[i] + model.down(k);
    }

    // Walk on [bot, hi] from s. A step below bot lands back on bot (the
    // path returns surely); a step above hi ends the run, unless returns are
    // sampled with probability q. Occupation goes to occ (offset lo).
    auto run = [&](Rng& g, index_t bot, index_t hi, index_t s, double q, std::vector<std::uint64_t>& occ,
                   std::size_t& steps) {
        const std::ptrdiff_t b0 = bot - lo, b1 = hi - lo;
        std::ptrdiff_t i = s - lo;
        const double* pu = up.data();
        const double* pd = updn.data();
        std::uint64_t* oc = occ.data();
        for (;;) {
            ++oc[i];
            if (steps >= o.step_budget) return false;
            ++steps;
            const double u = g.uniform();
            // branch-free move; the boundary branches are rarely taken
            const std::ptrdiff_t j = i + std::ptrdiff_t(u < pu[i]) - std::ptrdiff_t((u >= pu[i]) & (u < pd[i]));
            if (j > b1) {
                if (q <= 0.0 || g.uniform() >= q) return true;
            } else {
                i = j < b0 ? b0 : j;
            }
        }
    };
    auto count = [&](const std::vector<std::uint64_t>& occ, const IndexRange& r) {
        double c = 0.0;
        for (index_t k = std::max(r.lo, lo); k <= std::min(r.hi, kL); ++k) c += double(occ[k - lo]);
        return c;
    };

    std::vector<PathCounts> paths(o.n_paths);
    if (!regenerative) {
        const double q = green.hit_prob(kL + 1, kL);
        const double enter = k0 > kL ? green.hit_prob(k0, kL) : 1.0;
        const index_t start = std::clamp(k0, lo, kL);
        parallel_for(o.n_paths, o.threads, [&](std::size_t p) {
            Rng g(o.seed, o.path_offset + p);
            auto& pc = paths[p];
            pc.y.assign(iv.size(), 0.0);
            if (k0 > kL && g.uniform() >= enter) return;
            std::vector<std::uint64_t> occ(n, 0);
            std::size_t steps = 0;
            pc.budget_hit = !run(g, lo, kL, start, q, occ, steps);
            for (std::size_t j = 0; j < rg.size(); ++j) pc.y[j] = count(occ, rg[j]);
        });
        return reduce(iv, paths, L, mode);
    }

    // Per interval: T = (first passage through the top) + R x (cycle from
    // the top state), R geometric with mean q/(1-q), independent of both.
    struct Cyc {
        double q, enter;
        index_t start;
    };
    std::vector<Cyc> cyc(rg.size());
    for (std::size_t j = 0; j < rg.size(); ++j) {
        if (rg[j].hi < rg[j].lo) continue;
        cyc[j].q = green.hit_prob(rg[j].hi + 1, rg[j].hi);
        cyc[j].enter = k0 > rg[j].hi ? green.hit_prob(k0, rg[j].hi) : 1.0;
        cyc[j].start = std::clamp(k0, rg[j].lo, rg[j].hi);
    }
    parallel_for(o.n_paths, o.threads, [&](std::size_t p) {
        Rng g(o.seed, o.path_offset + p);
        auto& pc = paths[p];
        pc.y.assign(iv.size(), 0.0);
        std::vector<std::uint64_t> occ(n, 0);
        for (std::size_t j = 0; j < rg.size(); ++j) {
            const auto& r = rg[j];
            if (r.hi < r.lo) continue;
            const double ret = cyc[j].q / (1.0 - cyc[j].q);
            std::size_t steps = 0;
            bool ok = true;
            std::fill(occ.begin() + (r.lo - lo), occ.begin() + (r.hi - lo + 1), 0);
            if (k0 > r.hi) {
                ok = run(g, r.lo, r.hi, r.hi, 0.0, occ, steps);
                pc.y[j] = cyc[j].enter / (1.0 - cyc[j].q) * count(occ, r);
            } else {
                ok = run(g, r.lo, r.hi, cyc[j].start, 0.0, occ, steps);
                double y = count(occ, r);
                std::fill(occ.begin() + (r.lo - lo), occ.begin() + (r.hi - lo + 1), 0);
                steps = 0;
                ok = run(g, r.lo, r.hi, r.hi, 0.0, occ, steps) && ok;
                pc.y[j] = y + ret * count(occ, r);
            }
            if (!ok) pc.budget_hit = true;
        }
    });
    return reduce(iv, paths, L, mode);
}

} // namespace detail

// One estimate per interval. Plain and regenerative runs share one trajectory
// set; exact runs share paths only between intervals that overlap or touch.
inline std::vector<RenewalEstimate> estimate_H_profile(const ChainModel& model, double x0,
                                                       const std::vector<Interval>& intervals, const McOptions& o = {})
{
    if (intervals.empty()) return {};
    detail::check_intervals(intervals);
    if (o.n_paths == 0) throw std::invalid_argument("renewal_mc: n_paths must be at least 1");
    const McMode m = resolve_mode(model, o.mode);
    if (m == McMode::plain) return detail::run_plain(model, x0, intervals, o);
    if (m == McMode::exact && intervals.size() > 1) {
        // A shared walk has to cover every gap between intervals. Intervals
        // that overlap or touch share paths, separated groups get their own.
        std::vector<std::size_t> ord(intervals.size());
        for (std::size_t j = 0; j < ord.size(); ++j) ord[j] = j;
        std::stable_sort(ord.begin(), ord.end(), [&](auto i, auto j) { return intervals[i].a < intervals[j].a; });
        std::vector<std::vector<std::size_t>> groups;
        double reach = -std::numeric_limits<double>::infinity();
        for (auto j : ord) {
            if (groups.empty() || intervals[j].a > reach) groups.emplace_back();
            groups.back().push_back(j);
            reach = std::max(reach, intervals[j].b);
        }
        if (groups.size() > 1) {
            std::vector<RenewalEstimate> out(intervals.size());
            McOptions og = o;
            for (std::size_t g = 0; g < groups.size(); ++g) {
                std::vector<Interval> sub;
                for (auto j : groups[g]) sub.push_back(intervals[j]);
                og.path_offset = o.path_offset + g * o.n_paths;
                auto r = detail::run_exact(model, x0, sub, og, false);
                for (std::size_t k = 0; k < sub.size(); ++k) out[groups[g][k]] = r[k];
            }
            return out;
        }
    }
    return detail::run_exact(model, x0, intervals, o, m == McMode::regenerative);
}

inline RenewalEstimate estimate_H(const ChainModel& model, double x0, Interval iv, const McOptions& o = {})
{
    return estimate_H_profile(model, x0, {iv}, o).front();
}

// ---- asymptotes ----------------------------------------------------------------

// Leading-order H(x, x+h] for the builtin families.
//   one_over_x:   2 m1/m2 ~ 2 mu/(b x), H ~ 2 x h/(2 mu - b)
//   iterated_log: 2 m1/m2 = 1/x + ... + (gamma+1)/(x L1..Lm), H ~ 2 h x L1..Lm/(b gamma)
//   weibull:      m1 ~ mu/x^alpha, H ~ h/m1(x)
//   constant:     H ~ h/a
struct Asymptote {
    enum class Regime { one_over_x, iterated_log, weibull, constant };
    Regime regime = Regime::one_over_x;
    // the constant in front of the x-dependence (2/(2 mu - b), 2/(b gamma), 1/mu or 1/a)
    double constant = 0.0;
    std::function<double(double, double)> H;

    double operator()(double x, double h) const { return H(x, h); }
};

inline const char* to_string(Asymptote::Regime r)
{
    switch (r) {
    case Asymptote::Regime::one_over_x: return "one_over_x";
    case Asymptote::Regime::iterated_log: return "iterated_log";
    case Asymptote::Regime::weibull: return "weibull";
    default: return "constant";
    }
}

namespace detail {
// 2 mu <= b is recurrent: no renewal asymptote
inline std::optional<Asymptote> one_over_x(double mu, double b)
{
    if (!(2.0 * mu > b)) return std::nullopt;
    const double c = 2.0 / (2.0 * mu - b);
    return Asymptote{Asymptote::Regime::one_over_x, c, [c](double x, double h) { return c * x * h; }};
}
inline Asymptote weibull(double mu, double alpha)
{
    return {Asymptote::Regime::weibull, 1.0 / mu, [=](double x, double h) { return h * std::pow(x, alpha) / mu; }};
}
} // namespace detail

inline std::optional<Asymptote> renewal_asymptote(const ChainModel& model)
{
    return model.visit([&](const auto& f) -> std::optional<Asymptote> {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, NearestNeighbour>) {
            if (!f.power || !(f.p > 0.0)) return std::nullopt;
            const double mu = f.mu_plus + f.mu_minus;
            if (f.alpha == 1.0) return detail::one_over_x(mu, 2.0 * f.p);
            if (f.alpha > 0.0 && f.alpha < 1.0 && mu > 0.0) return detail::weibull(mu, f.alpha);
            return std::nullopt;
        } else if constexpr (std::is_same_v<T, LampertiRegular>) {
            return detail::one_over_x(f.mu, f.b);
        } else if constexpr (std::is_same_v<T, LampertiCritical>) {
            const int m = f.m;
            const double c = 2.0 / (f.b * f.gamma);
            return Asymptote{Asymptote::Regime::iterated_log, c, [c, m](double x, double h) {
                                 double prod = 1.0, L = x;
                                 for (int k = 0; k < m; ++k) {
                                     L = std::log(L);
                                     prod *= L;
                                 }
                                 return c * h * x * prod;
                             }};
        } else if constexpr (std::is_same_v<T, LampertiWeibull>) {
            return detail::weibull(f.mu, f.alpha);
        } else if constexpr (std::is_same_v<T, ConstantDrift>) {
            const double a = f.a;
            return Asymptote{Asymptote::Regime::constant, 1.0 / a, [a](double, double h) { return h / a; }};
        } else if constexpr (std::is_same_v<T, SqrtBranching>) {
            // sqrt(Z): m1 ~ (4a - sigma2)/(8x), m2 ~ sigma2/4
            return detail::one_over_x((4.0 * f.a - f.sigma2) / 8.0, f.sigma2 / 4.0);
        } else if constexpr (std::is_same_v<T, ConditionedWalk>) {
            // m1 ~ sigma2/x, m2 -> sigma2
            const double s2 = moments_of(f.increment, std::numeric_limits<double>::infinity()).m2;
            return detail::one_over_x(s2, s2);
        } else {
            return renewal_asymptote(*f.base);
        }
    });
}

// ---- renewal equation --------------------------------------------------------

struct RenewalSolution {
    double value = 0.0;
    double stderr_ = 0.0;
    double total_mass = 0.0;
    std::vector<RenewalEstimate> per_source;
    std::vector<std::size_t> allocation;

    // Z(B) / (z(R) g); tends to 1 when g is the renewal asymptote of B
    double ratio_to(double g) const { return value / (total_mass * g); }
};

// Z(B) = sum_i w_i H_{u_i}(B) for z = sum_i w_i delta_{u_i}; paths are
// split across sources in proportion to w_i, each source on its own
// block of stream indices.
inline RenewalSolution solve_renewal_equation(const ChainModel& model, const std::vector<Jump>& z, Interval iv,
                                              const McOptions& o = {})
{
    if (z.empty()) throw std::invalid_argument("solve_renewal_equation: z has no atoms");
    RenewalSolution r;
    KahanSum mass;
    for (auto& a : z) {
        if (!(a.prob >= 0.0) || !std::isfinite(a.prob))
            throw std::invalid_argument("solve_renewal_equation: atom weights must be finite and nonnegative");
        if (a.value < 0.0) throw std::invalid_argument("solve_renewal_equation: atom outside the state space");
        mass.add(a.prob);
    }
    r.total_mass = mass.value();
    if (!(r.total_mass > 0.0)) throw std::invalid_argument("solve_renewal_equation: z has zero mass");
    std::uint64_t offset = o.path_offset;
    KahanSum v, var;
    for (auto& a : z) {
        const auto n = std::max<std::size_t>(1, std::size_t(std::llround(double(o.n_paths) * a.prob / r.total_mass)));
        McOptions oi = o;
        oi.n_paths = n;
        oi.path_offset = offset;
        offset += n;
        auto e = estimate_H(model, a.value, iv, oi);
        v.add(a.prob * e.mean_visits);
        var.add(a.prob * a.prob * e.stderr_ * e.stderr_);
        r.per_source.push_back(e);
        r.allocation.push_back(n);
    }
    r.value = v.value();
    r.stderr_ = std::sqrt(var.value());
    return r;
}

} // namespace lamperti
