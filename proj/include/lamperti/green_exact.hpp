#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "chain.hpp"
#include "quadrature.hpp"

namespace lamperti {

class series_divergent : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class tolerance_unreachable : public std::runtime_error {
public:
    tolerance_unreachable(const std::string& what, double best, double bound)
        : std::runtime_error(what + " (best value " + std::to_string(best) + ", error bound " + std::to_string(bound) +
                             ")"),
          best_value(best), error_bound(bound)
    {
    }
    double best_value;
    double error_bound;
};

struct GreenValue {
    double value = 0.0;
    std::size_t terms_used = 0;
    double truncation_error_bound = 0.0;
};

inline const char* divergence_message()
{
    return "renewal series diverges: the Green function is finite only when sum_u prod_{z<=u} p-(z)/p+(z) "
           "is bounded, and for this chain it is not (recurrent chain)";
}

// ---- transience check ------------------------------------------------------

enum class Verdict { convergent, divergent, inconclusive };

inline const char* to_string(Verdict v)
{
    switch (v) {
    case Verdict::convergent: return "convergent";
    case Verdict::divergent: return "divergent";
    default: return "inconclusive";
    }
}

struct TransienceReport {
    Verdict verdict = Verdict::inconclusive;
    double partial_sum = 0.0;
    std::size_t terms = 0;
    std::string test;
    double statistic = 0.0;
};

// Ratio, Raabe and Bertrand tests on the second half of the first
// max_terms ratios rho(z) = p-(z)/p+(z). Each test needs its statistic to
// stay on one side of the threshold over the whole window, and the window
// is taken as representative of the tail.
inline TransienceReport check_transience(const NNChainSpec& spec, std::size_t max_terms)
{
    if (max_terms < 1) throw std::invalid_argument("check_transience: max_terms must be >= 1");
    TransienceReport r;
    r.terms = max_terms;
    long double t = 1.0L;
    KahanSum sum;
    for (std::size_t u = 1; u <= max_terms; ++u) {
        const double pp = spec.p_plus(double(u)), pm = spec.p_minus(double(u));
        if (pp <= 0.0) {
            r.verdict = Verdict::divergent;
            r.test = "p+ vanishes";
            r.partial_sum = std::numeric_limits<double>::infinity();
            return r;
        }
        t *= static_cast<long double>(pm) / static_cast<long double>(pp);
        sum.add(static_cast<double>(t));
    }
    r.partial_sum = sum.value();
    if (t == 0.0L) {
        r.verdict = Verdict::convergent;
        r.test = "terminating";
        return r;
    }
    const std::size_t lo = std::max<std::size_t>(1, max_terms / 2);
    double rho_max = 0.0, raabe_min = std::numeric_limits<double>::infinity(), raabe_max = -raabe_min;
    double bert_min = raabe_min, bert_max = -raabe_min;
    for (std::size_t z = lo; z <= max_terms; ++z) {
        const double zz = double(z);
        const double lr = spec.log_ratio(zz);
        // 1 - rho = -expm1(-log(p+/p-))
        const double one_minus = -std::expm1(-lr);
        rho_max = std::max(rho_max, 1.0 - one_minus);
        const double ra = zz * one_minus;
        raabe_min = std::min(raabe_min, ra);
        raabe_max = std::max(raabe_max, ra);
        if (zz > 1.0) {
            const double be = (ra - 1.0) * std::log(zz);
            bert_min = std::min(bert_min, be);
            bert_max = std::max(bert_max, be);
        }
    }
    // Raabe's test is subsumed: z(1-rho) >= a > 1 drives the Bertrand statistic to infinity.
    if (rho_max < 1.0 - 1e-3) {
        r.verdict = Verdict::convergent;
        r.test = "ratio";
        r.statistic = rho_max;
    } else if (max_terms > 2 && bert_min > 1.0 + 1e-6) {
        r.verdict = Verdict::convergent;
        r.test = "bertrand";
        r.statistic = bert_min;
    } else if (raabe_max <= 1.0) {
        r.verdict = Verdict::divergent;
        r.test = "raabe";
        r.statistic = raabe_max;
    } else if (max_terms > 2 && bert_max <= 1.0) {
        r.verdict = Verdict::divergent;
        r.test = "bertrand";
        r.statistic = bert_max;
    } else {
        r.verdict = Verdict::inconclusive;
        r.test = "none";
        r.statistic = raabe_min;
    }
    return r;
}

// ---- series tail -----------------------------------------------------------

struct SeriesTail {
    double tau = 0.0;
    double error = 0.0;
};

// tau(N) = sum_{u>N} prod_{z=N+1}^{u} rho(z), from the smooth extension of
// log(p+/p-) by midpoint Euler-Maclaurin. Integrals run in w = log y so that
// slowly converging tails stay within range.
inline SeriesTail series_tail(const NNChainSpec& spec, index_t N)
{
    const double y1 = double(N) + 1.0, yh = double(N) + 0.5;
    const double l1 = spec.log_ratio(y1);
    if (!(l1 < std::numeric_limits<double>::infinity())) return {0.0, 0.0};
    if (!(l1 > 0.0)) throw series_divergent(divergence_message());
    const double wh = std::log(yh), w1 = std::log(y1);
    auto kappa = [&](double w) { return spec.kappa_at(w); };
    const double Kh1 = integrate_panel(kappa, wh, w1);

    // cumulative integral of kappa - 1 on panels w1 + [2^j - 1, 2^(j+1) - 1];
    // it is smooth in w, so one Gauss panel each is enough
    auto excess = [&](double w) { return spec.excess_at(w); };
    std::vector<double> edge{w1}, cum{0.0};
    auto E_from_w1 = [&](double w) {
        while (edge.back() < w) {
            const double a = edge.back();
            const double b = w1 + 2.0 * (a - w1) + 1.0;
            cum.push_back(cum.back() + integrate_panel(excess, a, b));
            edge.push_back(b);
        }
        std::size_t j = std::upper_bound(edge.begin(), edge.end(), w) - edge.begin() - 1;
        return cum[j] + integrate_panel(excess, edge[j], w);
    };
    double qerr = 0.0;
    double I = 0.0;
    try {
        auto q = integrate_to_inf(
            [&](double w) {
                if (!(w < 1e300)) return 0.0;
                const double e = -E_from_w1(w);
                return e < -745.0 ? 0.0 : std::exp(e);
            },
            w1, QuadTolerance{1e-13, 0.0});
        I = q.value;
        qerr = q.error;
    } catch (const quadrature_error& e) {
        throw series_divergent(std::string(divergence_message()) + "; tail integral: " + e.what());
    }
    const double pre = std::exp(w1 - Kh1);
    const double tau_int = pre * I;
    const double phi_h = std::exp(-Kh1);
    const double tau = tau_int - l1 * phi_h / 24.0;
    // dropped terms are of order tau*(|l'| + l^2)/24; doubled for safety
    const double lp = std::fabs(spec.log_ratio(y1 + 1.0) - spec.log_ratio(y1 > 2.0 ? y1 - 1.0 : y1)) / 2.0;
    const double err = tau * (lp + l1 * l1) / 12.0 + pre * qerr + 1e-16 * tau;
    return {tau, err};
}

// ---- exact Green function --------------------------------------------------

// Holds the suffix sums S(u) = sum_{v>=u} prod_{z=u+1}^{v} rho(z) for
// u <= x_max + 1, built by the stable backward recursion
// S(u) = 1 + rho(u+1) S(u+1) from a series tail at a large cutoff.
class NNGreen {
public:
    NNGreen(NNChainSpec spec, index_t x_max, double tol = 1e-12, index_t term_cap = index_t(1) << 30)
        : spec_(std::move(spec)), x_max_(x_max), tol_(tol)
    {
        if (!(tol > 0.0)) throw std::invalid_argument("green_nn: tol must be positive");
        if (x_max < 0) throw std::invalid_argument("green_nn: negative state");
        auto rep = check_transience(spec_, std::size_t(std::max<index_t>(4 * x_max, 100000)));
        if (rep.verdict == Verdict::divergent) throw series_divergent(divergence_message());
        build_prefix();
        index_t N = std::max<index_t>(2 * x_max + 64, x_max + 4096);
        for (;;) {
            build_suffix(N);
            if (rel_err_.back() <= tol_ || N >= term_cap) break;
            N = std::min<index_t>(N * 4, term_cap);
        }
        cutoff_ = N;
        if (rel_err_.back() > tol_) {
            const double v = double(S_.back());
            throw tolerance_unreachable("green_nn: tolerance not reached within term cap", v, v * rel_err_.back());
        }
    }

    const NNChainSpec& spec() const { return spec_; }
    index_t cutoff() const { return cutoff_; }
    index_t x_max() const { return x_max_; }

    // prod_{z=a+1}^{b} rho(z), a <= b <= x_max+1
    long double product(index_t a, index_t b) const
    {
        if (zeros_[b] != zeros_[a]) return 0.0L;
        return std::exp(L_[a] - L_[b]);
    }
    // S(u) with its relative error estimate
    long double suffix(index_t u) const { return S_[u]; }
    double suffix_rel_error(index_t u) const { return rel_err_[u]; }

    GreenValue green(index_t x0, index_t x) const
    {
        check(x0);
        check(x);
        const index_t m = std::max(x, x0);
        const double pp = spec_.p_plus(double(x));
        if (pp <= 0.0) throw series_divergent("green_nn: p+(x) = 0, the chain cannot pass x");
        GreenValue g;
        g.value = double(product(x, m) * S_[m] / pp);
        g.terms_used = std::size_t(cutoff_ - m + 1);
        g.truncation_error_bound = g.value * rel_err_[m];
        return g;
    }
    double operator()(index_t x0, index_t x) const { return green(x0, x).value; }

    // P_y{ever reach k}, k <= y
    double hit_prob(index_t y, index_t k) const
    {
        check(y);
        if (k >= y) return 1.0;
        return double(product(k, y) * S_[y] / S_[k]);
    }

private:
    void check(index_t x) const
    {
        if (x < 0 || x > x_max_ + 1) throw std::out_of_range("green_nn: state outside the prepared range");
    }
    void build_prefix()
    {
        const index_t n = x_max_ + 2;
        L_.assign(n, 0.0L);
        zeros_.assign(n, 0);
        for (index_t z = 1; z < n; ++z) {
            const double pp = spec_.p_plus(double(z)), pm = spec_.p_minus(double(z));
            if (pm <= 0.0) {
                L_[z] = L_[z - 1];
                zeros_[z] = zeros_[z - 1] + 1;
            } else {
                L_[z] = L_[z - 1] + std::log(static_cast<long double>(pp)) - std::log(static_cast<long double>(pm));
                zeros_[z] = zeros_[z - 1];
            }
        }
    }
    void build_suffix(index_t N)
    {
        const index_t n = x_max_ + 2;
        auto tail = series_tail(spec_, N);
        long double S = 1.0L + tail.tau;
        long double E = tail.error;
        S_.assign(n, 0.0L);
        rel_err_.assign(n, 0.0);
        for (index_t u = N - 1; u >= 0; --u) {
            const long double rho =
                static_cast<long double>(spec_.p_minus(double(u + 1))) / static_cast<long double>(spec_.p_plus(double(u + 1)));
            S = 1.0L + rho * S;
            E = rho * E;
            if (u < n) {
                S_[u] = S;
                rel_err_[u] = double(E / S);
            }
        }
        if (N < n) throw std::logic_error("cutoff below prepared range");
    }

    NNChainSpec spec_;
    index_t x_max_;
    double tol_;
    index_t cutoff_ = 0;
    std::vector<long double> L_;
    std::vector<index_t> zeros_;
    std::vector<long double> S_;
    std::vector<double> rel_err_;
};

inline GreenValue green_nn(const NNChainSpec& spec, index_t x0, index_t x, double tol = 1e-12)
{
    NNGreen g(spec, std::max(x0, x), tol);
    return g.green(x0, x);
}

// The same series stopped after u = N, which is the Green function of the
// chain killed on leaving {0..N}.
inline double green_nn_truncated(const NNChainSpec& spec, index_t x0, index_t x, index_t N)
{
    const index_t m = std::max(x, x0);
    if (m > N) return 0.0;
    long double S = 1.0L;
    for (index_t u = N - 1; u >= m; --u)
        S = 1.0L + static_cast<long double>(spec.p_minus(double(u + 1))) / spec.p_plus(double(u + 1)) * S;
    long double logp = 0.0L;
    for (index_t z = x + 1; z <= m; ++z) {
        const double pm = spec.p_minus(double(z));
        if (pm <= 0.0) return 0.0;
        logp += std::log(static_cast<long double>(pm)) - std::log(static_cast<long double>(spec.p_plus(double(z))));
    }
    return double(std::exp(logp) * S / spec.p_plus(double(x)));
}

// The three algebraically equal forms of the series, truncated at N, each
// accumulated in log domain: via prod_{z=x+1}^{u}, via prod_{z=x}^{u} / p-(x),
// and via prod_{z=1}^{u} rescaled by prod_{z=1}^{x}.
inline std::array<double, 3> green_nn_forms(const NNChainSpec& spec, index_t x0, index_t x, index_t N)
{
    auto lr = [&](index_t z) {
        return std::log(static_cast<long double>(spec.p_minus(double(z)))) -
               std::log(static_cast<long double>(spec.p_plus(double(z))));
    };
    const index_t m = std::max(x, x0);
    // log-sum-exp over u = m..N of a running log product
    auto lse = [&](index_t from_z, long double start) {
        long double acc = start;
        for (index_t z = from_z; z <= m; ++z) acc += lr(z);
        long double mx = acc, s = 0.0L;
        std::vector<long double> logs;
        logs.reserve(std::size_t(N - m + 1));
        for (index_t u = m;; ++u) {
            logs.push_back(acc);
            mx = std::max(mx, acc);
            if (u == N) break;
            acc += lr(u + 1);
        }
        for (auto v : logs) s += std::exp(v - mx);
        return mx + std::log(s);
    };
    const long double lpp = std::log(static_cast<long double>(spec.p_plus(double(x))));
    const long double lpm = std::log(static_cast<long double>(spec.p_minus(double(x))));
    std::array<double, 3> f{};
    f[0] = double(std::exp(lse(x + 1, 0.0L) - lpp));
    f[1] = x >= 1 ? double(std::exp(lse(x, 0.0L) - lpm)) : std::numeric_limits<double>::quiet_NaN();
    long double pre = 0.0L;
    for (index_t z = 1; z <= x; ++z) pre -= lr(z);
    f[2] = double(std::exp(pre + lse(1, 0.0L) - lpp));
    return f;
}

// Expected visits of the chain started at x0 and killed above N, from the
// linear system (I - P_N)^T nu = e_{x0} solved by the Thomas algorithm.
inline std::vector<long double> green_oracle(const NNChainSpec& spec, index_t x0, index_t N)
{
    if (x0 < 0 || x0 > N) throw std::invalid_argument("green_oracle: x0 outside 0..N");
    const std::size_t n = std::size_t(N + 1);
    // row y: nu(y)(1 - p0(y)) - nu(y-1) p+(y-1) - nu(y+1) p-(y+1) = [y == x0]
    std::vector<long double> a(n), b(n), c(n), d(n, 0.0L);
    for (std::size_t y = 0; y < n; ++y) {
        const long double pp = spec.p_plus(double(y)), pm = spec.p_minus(double(y));
        b[y] = pp + pm;
        a[y] = y > 0 ? -static_cast<long double>(spec.p_plus(double(y - 1))) : 0.0L;
        c[y] = y + 1 < n ? -static_cast<long double>(spec.p_minus(double(y + 1))) : 0.0L;
    }
    d[std::size_t(x0)] = 1.0L;
    for (std::size_t i = 1; i < n; ++i) {
        const long double w = a[i] / b[i - 1];
        b[i] -= w * c[i - 1];
        d[i] -= w * d[i - 1];
    }
    std::vector<long double> nu(n);
    nu[n - 1] = d[n - 1] / b[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) nu[i] = (d[i] - c[i] * nu[i + 1]) / b[i];
    return nu;
}

// ---- asymptotics -----------------------------------------------------------

struct NNRegime {
    enum class Kind { one_over_x, weibull } kind = Kind::one_over_x;
    double p = 0.5;
    double mu = 1.0;
    double alpha = 1.0;

    static NNRegime one_over_x(double p, double mu) { return {Kind::one_over_x, p, mu, 1.0}; }
    static NNRegime weibull(double p, double mu, double alpha) { return {Kind::weibull, p, mu, alpha}; }
};

// x/(mu - p) or x^alpha/mu
inline double asymptotic_nn(double x, const NNRegime& r)
{
    if (r.kind == NNRegime::Kind::one_over_x) {
        if (!(r.mu > r.p)) throw std::invalid_argument("asymptotic_nn: one_over_x needs mu > p for transience");
        return x / (r.mu - r.p);
    }
    if (!(r.mu > 0.0)) throw std::invalid_argument("asymptotic_nn: weibull needs mu > 0");
    if (!(r.alpha > 0.0 && r.alpha < 1.0)) throw std::invalid_argument("asymptotic_nn: weibull needs alpha in (0,1)");
    return std::pow(x, r.alpha) / r.mu;
}

} // namespace lamperti
