#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rng.hpp"
#include "stats.hpp"

namespace lamperti {

using index_t = std::int64_t;

class model_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// s(x) = (1+x)/log(e+x)
inline double default_truncation(double x) { return (1.0 + x) / std::log(M_E + x); }

struct Jump {
    double value;
    double prob;
};

// Finite discrete law, atoms sorted by value.
struct JumpLaw {
    std::vector<Jump> atoms;

    double total() const
    {
        KahanSum s;
        for (auto& a : atoms) s.add(a.prob);
        return s.value();
    }
    double cdf(double v) const
    {
        double c = 0.0;
        for (auto& a : atoms)
            if (a.value <= v) c += a.prob;
        return c;
    }
    double pmf(double v) const
    {
        for (auto& a : atoms)
            if (a.value == v) return a.prob;
        return 0.0;
    }
    // inverse cdf at u in [0,1)
    double quantile(double u) const
    {
        double c = 0.0;
        for (auto& a : atoms) {
            c += a.prob;
            if (u < c) return a.value;
        }
        for (auto it = atoms.rbegin(); it != atoms.rend(); ++it)
            if (it->prob > 0.0) return it->value;
        return 0.0;
    }
    double sample(Rng& g) const { return quantile(g.uniform()); }

    void normalize_order()
    {
        std::sort(atoms.begin(), atoms.end(), [](const Jump& a, const Jump& b) { return a.value < b.value; });
        std::vector<Jump> merged;
        for (auto& a : atoms) {
            if (!merged.empty() && merged.back().value == a.value)
                merged.back().prob += a.prob;
            else
                merged.push_back(a);
        }
        atoms = std::move(merged);
    }
};

struct TruncatedMoments {
    enum class Method { exact, monte_carlo };
    double m1 = 0.0;
    double m2 = 0.0;
    double m3_abs = 0.0;
    double tail_mass = 0.0;
    double s = 0.0;
    Method method = Method::exact;
    std::size_t n = 0;
    double m1_stderr = 0.0;
    double m2_stderr = 0.0;
};

enum class Termination { escaped, step_budget };

struct Trajectory {
    std::vector<double> states;
    std::size_t steps = 0;
    Termination termination = Termination::step_budget;
    double escape_level = 0.0;
};

// Skip-free lattice chain on indices 0,1,2,... with position span*k.
// Probabilities take a real argument so series tails can use a smooth
// extension; kappa(w) = e^w * log(p+/p-)(e^w) is an overflow-safe form
// for far tails (optional).
struct NNChainSpec {
    std::function<double(double)> p_plus;
    std::function<double(double)> p_minus;
    std::function<double(double)> kappa;
    // kappa(w) - 1 without cancellation, for chains whose kappa tends to 1
    std::function<double(double)> kappa_excess;
    double span = 1.0;

    struct Regime {
        enum class Kind { one_over_x, weibull, none } kind = Kind::none;
        double p = 0.5;
        double mu = 0.0;
        double alpha = 1.0;
    } regime;

    double p_zero(double k) const { return 1.0 - p_plus(k) - p_minus(k); }
    // log(p+/p-), +inf when p- = 0
    double log_ratio(double k) const
    {
        const double a = p_plus(k), b = p_minus(k);
        if (b <= 0.0) return std::numeric_limits<double>::infinity();
        if (a <= 0.0) return -std::numeric_limits<double>::infinity();
        return std::log(a) - std::log(b);
    }
    double kappa_at(double w) const
    {
        if (kappa) return kappa(w);
        const double wc = std::min(w, 700.0);
        const double k = std::exp(wc);
        return k * log_ratio(k);
    }
    double excess_at(double w) const { return kappa_excess ? kappa_excess(w) : kappa_at(w) - 1.0; }
};

namespace detail {

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// log1p(t)/t, stable near 0
inline double log1p_ratio(double t) { return std::fabs(t) < 1e-8 ? 1.0 - 0.5 * t : std::log1p(t) / t; }
inline double atanh_ratio(double u) { return std::fabs(u) < 1e-8 ? 1.0 + u * u / 3.0 : std::atanh(u) / u; }
// atanh(u)/u - 1
inline double atanh_ratio_m1(double u)
{
    const double u2 = u * u;
    return std::fabs(u) < 1e-3 ? u2 * (1.0 / 3.0 + u2 * (1.0 / 5.0 + u2 / 7.0)) : std::atanh(u) / u - 1.0;
}

inline double iterated_exp(int m)
{
    double e = 1.0;
    for (int i = 0; i < m; ++i) e = std::exp(e);
    return e;
}

} // namespace detail

// ---- builtin families ------------------------------------------------------

// p+(k) = p + eps+(k), p-(k) = p - eps-(k), p-(0) = 0
struct NearestNeighbour {
    double p = 0.5;
    std::function<double(double)> eps_plus;
    std::function<double(double)> eps_minus;
    // power form eps(k) = mu/(max(k+shift,1))^alpha when built from parameters
    bool power = false;
    double mu_plus = 0.0, mu_minus = 0.0, alpha = 1.0, shift = 0.0;

    static NearestNeighbour power_form(double p, double mu_plus, double mu_minus, double alpha, double shift)
    {
        NearestNeighbour n;
        n.p = p;
        n.power = true;
        n.mu_plus = mu_plus;
        n.mu_minus = mu_minus;
        n.alpha = alpha;
        n.shift = shift;
        n.eps_plus = [=](double k) { return mu_plus * std::pow(std::max(k + shift, 1.0), -alpha); };
        n.eps_minus = [=](double k) { return mu_minus * std::pow(std::max(k + shift, 1.0), -alpha); };
        return n;
    }
    // p_+-(x) = (1 +- lambda/(x+lambda))/2
    static NearestNeighbour lambda_chain(double lambda)
    {
        return power_form(0.5, 0.5 * lambda, 0.5 * lambda, 1.0, lambda);
    }

    double up_real(double k) const { return detail::clamp01(p + eps_plus(k)); }
    double down_real(double k) const
    {
        if (k <= 0.0) return 0.0;
        return std::clamp(p - eps_minus(k), 0.0, 1.0 - up_real(k));
    }
    double up(index_t k) const { return up_real(static_cast<double>(k)); }
    double down(index_t k) const { return down_real(static_cast<double>(k)); }
    double span() const { return 1.0; }
    double position(index_t k) const { return static_cast<double>(k); }

    NNChainSpec nn() const
    {
        NNChainSpec s;
        s.p_plus = [f = *this](double k) { return f.up_real(k); };
        s.p_minus = [f = *this](double k) { return f.down_real(k); };
        if (power && p > 0.0 && p < 1.0) {
            const double pp = p, mp = mu_plus, mm = mu_minus, al = alpha, sh = shift;
            // k*log((p+e+)/(p-e-)) at k = e^w, with e^w*eps evaluated in log space
            s.kappa = [=](double w) {
                const double lk = w + std::log1p(sh * std::exp(-w));
                const double ep = mp * std::exp(-al * lk), em = mm * std::exp(-al * lk);
                const double kep = mp * std::exp(w - al * lk), kem = mm * std::exp(w - al * lk);
                if (pp - em <= 0.0) return std::numeric_limits<double>::infinity();
                return kep / pp * detail::log1p_ratio(ep / pp) + kem / pp * detail::log1p_ratio(-em / pp);
            };
            // regime constants: p and mu = lim x^alpha * m1(x)
            if (alpha == 1.0) {
                s.regime.kind = NNChainSpec::Regime::Kind::one_over_x;
                s.regime.p = p;
                s.regime.mu = mu_plus + mu_minus;
            } else if (alpha > 0.0 && alpha < 1.0) {
                s.regime.kind = NNChainSpec::Regime::Kind::weibull;
                s.regime.p = p;
                s.regime.mu = mu_plus + mu_minus;
                s.regime.alpha = alpha;
            }
        }
        return s;
    }
};

namespace detail {

// Shared machinery for the two-point +-sqrt(b) Lamperti families.
template <class Derived>
struct TwoPoint {
    double c_ = 1.0;
    double span() const { return c_; }
    double position(index_t k) const { return c_ * static_cast<double>(k); }
    double up_real(double k) const
    {
        if (k <= 0.0) return 1.0;
        const double m = static_cast<const Derived&>(*this).m1(c_ * k);
        return clamp01(0.5 * (1.0 + m / c_));
    }
    double down_real(double k) const
    {
        if (k <= 0.0) return 0.0;
        return 1.0 - up_real(k);
    }
    double up(index_t k) const { return up_real(static_cast<double>(k)); }
    double down(index_t k) const { return down_real(static_cast<double>(k)); }
    // 2 x m1(x)/b - 1 at x = e^lx
    double drift_excess_log(double lx) const
    {
        return 2.0 * static_cast<const Derived&>(*this).x_m1_log(lx) / (c_ * c_) - 1.0;
    }

    NNChainSpec nn() const
    {
        const Derived& d = static_cast<const Derived&>(*this);
        NNChainSpec s;
        s.span = c_;
        s.p_plus = [d](double k) { return d.up_real(k); };
        s.p_minus = [d](double k) { return d.down_real(k); };
        // k*log(p+/p-) = 2k*atanh(m1/c); x*m1 supplied as a function of log x
        s.kappa = [d](double w) {
            const double c = d.c_;
            const double lx = w + std::log(c);
            const double xm = d.x_m1_log(lx);
            const double u = xm * std::exp(-lx) / c;
            if (!(u < 1.0)) return std::numeric_limits<double>::infinity();
            return 2.0 * xm / (c * c) * atanh_ratio(u);
        };
        s.kappa_excess = [d](double w) {
            const double c = d.c_;
            const double lx = w + std::log(c);
            const double xm = d.x_m1_log(lx);
            const double u = xm * std::exp(-lx) / c;
            if (!(u < 1.0)) return std::numeric_limits<double>::infinity();
            return d.drift_excess_log(lx) + 2.0 * xm / (c * c) * atanh_ratio_m1(u);
        };
        return s;
    }
};

} // namespace detail

// m1(x) = mu/(1+x), m2 = b
struct LampertiRegular : detail::TwoPoint<LampertiRegular> {
    double mu = 1.0, b = 1.0;
    LampertiRegular() = default;
    LampertiRegular(double mu_, double b_) : mu(mu_), b(b_)
    {
        if (!(b > 0.0)) throw model_error("lamperti_regular: b must be positive");
        if (!(mu > b / 2.0))
            throw model_error("lamperti_regular: transience needs drift constant mu > b/2 (got mu=" + std::to_string(mu) +
                              ", b=" + std::to_string(b) + ")");
        c_ = std::sqrt(b);
    }
    double m1(double x) const { return mu / (1.0 + x); }
    double x_m1_log(double lx) const { return mu / (1.0 + std::exp(-lx)); }
};

// 2 m1/b = sum_{k<m} 1/(x L1..Lk) + (gamma+1)/(x L1..Lm), Lk = log of L(k-1)
struct LampertiCritical : detail::TwoPoint<LampertiCritical> {
    int m = 1;
    double gamma = 1.0, b = 1.0;
    double x_floor = M_E;
    LampertiCritical() = default;
    LampertiCritical(int m_, double gamma_, double b_) : m(m_), gamma(gamma_), b(b_)
    {
        if (m < 1) throw model_error("lamperti_critical: m must be >= 1");
        if (!(b > 0.0)) throw model_error("lamperti_critical: b must be positive");
        if (!(gamma > 0.0)) throw model_error("lamperti_critical: transience needs gamma > 0");
        c_ = std::sqrt(b);
        x_floor = detail::iterated_exp(m);
    }
    // x*m1 as function of log x, for x >= x_floor
    double x_m1_log(double lx) const
    {
        lx = std::max(lx, std::log(x_floor));
        double prod = 1.0, acc = 0.0, L = lx;
        for (int k = 0; k < m; ++k) {
            acc += 1.0 / prod;
            prod *= L;
            L = std::log(L);
        }
        acc += (gamma + 1.0) / prod;
        return 0.5 * b * acc;
    }
    double m1(double x) const
    {
        const double xe = std::max(x, x_floor);
        return x_m1_log(std::log(xe)) / xe;
    }
    // 2 x m1/b - 1 with the leading 1 removed analytically
    double drift_excess_log(double lx) const
    {
        lx = std::max(lx, std::log(x_floor));
        double prod = lx, acc = 0.0, L = lx;
        for (int k = 1; k < m; ++k) {
            acc += 1.0 / prod;
            L = std::log(L);
            prod *= L;
        }
        return acc + (gamma + 1.0) / prod;
    }
};

// m1(x) = mu/max(x,1)^alpha
struct LampertiWeibull : detail::TwoPoint<LampertiWeibull> {
    double alpha = 0.5, mu = 1.0, b = 1.0;
    LampertiWeibull() = default;
    LampertiWeibull(double alpha_, double mu_, double b_) : alpha(alpha_), mu(mu_), b(b_)
    {
        if (!(alpha > 0.0 && alpha < 1.0)) throw model_error("lamperti_weibull: alpha must lie in (0,1)");
        if (!(mu > 0.0)) throw model_error("lamperti_weibull: mu must be positive");
        if (!(b > 0.0)) throw model_error("lamperti_weibull: b must be positive");
        c_ = std::sqrt(b);
    }
    double m1(double x) const { return mu * std::pow(std::max(x, 1.0), -alpha); }
    double x_m1_log(double lx) const { return lx <= 0.0 ? mu * std::exp(lx) : mu * std::exp((1.0 - alpha) * lx); }
};

// m1 = a, m2 = b
struct ConstantDrift : detail::TwoPoint<ConstantDrift> {
    double a = 0.1, b = 1.0;
    ConstantDrift() = default;
    ConstantDrift(double a_, double b_) : a(a_), b(b_)
    {
        if (!(b > 0.0)) throw model_error("constant_drift: b must be positive");
        if (!(a > 0.0)) throw model_error("constant_drift: transience needs a > 0");
        if (!(a < std::sqrt(b))) throw model_error("constant_drift: need a < sqrt(b) for a two-point law");
        c_ = std::sqrt(b);
    }
    double m1(double) const { return a; }
    double x_m1_log(double lx) const { return a * std::exp(lx); }
};

// X = sqrt(Z), Z a Galton-Watson process with offspring in {0,1,2}
// (P0 = P2 = sigma2/2) and Poisson(a) immigration. Index is Z.
struct SqrtBranching {
    double sigma2 = 0.5, a = 1.0;
    SqrtBranching() = default;
    SqrtBranching(double s2, double a_) : sigma2(s2), a(a_)
    {
        if (!(sigma2 > 0.0 && sigma2 <= 1.0)) throw model_error("sqrt_branching: sigma2 must lie in (0,1]");
        if (!(a > sigma2 / 2.0))
            throw model_error("sqrt_branching: transience of sqrt(Z) needs immigration mean a > sigma2/2");
    }
    double span() const { return 0.0; }
    double position(index_t k) const { return std::sqrt(static_cast<double>(k)); }
    index_t step(index_t z, Rng& g) const
    {
        index_t next = 0;
        if (z > 0) {
            std::binomial_distribution<index_t> extreme(z, sigma2);
            const index_t n02 = extreme(g);
            std::binomial_distribution<index_t> twos(n02, 0.5);
            const index_t n2 = n02 > 0 ? twos(g) : 0;
            next = z + 2 * n2 - n02;
        }
        std::poisson_distribution<index_t> imm(a);
        return next + imm(g);
    }
};

// Table V(0..n) with a linear continuation of the given slope past n.
struct HarmonicTable {
    std::vector<double> v;
    double slope = 1.0;
    // set once a lookup lands past the table
    mutable std::atomic<bool> extrapolated{false};

    double last() const { return static_cast<double>(v.size() - 1); }
    double operator()(double x) const
    {
        if (x <= 0.0) return v.front();
        const double n = last();
        if (x >= n) {
            if (x > n) extrapolated.store(true, std::memory_order_relaxed);
            return v.back() + slope * (x - n);
        }
        const auto i = static_cast<std::size_t>(x);
        const double f = x - static_cast<double>(i);
        return f == 0.0 ? v[i] : v[i] + f * (v[i + 1] - v[i]);
    }
    double at(index_t k) const { return (*this)(static_cast<double>(k)); }
};

// Walk on {1,2,...}: kernel V(y)/V(x) P{x+xi = y}, y > 0, for a centred
// integer increment law xi. Weights are renormalised when V is only
// approximately harmonic.
struct ConditionedWalk {
    JumpLaw increment;
    std::shared_ptr<const HarmonicTable> V;

    double span() const { return 1.0; }
    double position(index_t k) const { return static_cast<double>(k); }
    bool skip_free() const { return increment.atoms.front().value >= -1.0 && increment.atoms.back().value <= 1.0; }

    // sum_y V(y)/V(x) P{x+xi=y, y>0}; 1 for exactly harmonic V
    double raw_mass(index_t k) const
    {
        const double vk = V->at(k);
        KahanSum s;
        for (auto& a : increment.atoms) {
            const index_t y = k + static_cast<index_t>(a.value);
            if (y > 0) s.add(V->at(y) / vk * a.prob);
        }
        return s.value();
    }
    JumpLaw law_at(index_t k) const
    {
        const double vk = V->at(k), tot = raw_mass(k);
        JumpLaw law;
        for (auto& a : increment.atoms) {
            const index_t y = k + static_cast<index_t>(a.value);
            if (y > 0) law.atoms.push_back({a.value, V->at(y) / vk * a.prob / tot});
        }
        return law;
    }
    index_t step(index_t k, Rng& g) const
    {
        const double u = g.uniform() * raw_mass(k);
        const double vk = V->at(k);
        double c = 0.0;
        index_t last = k;
        for (auto& a : increment.atoms) {
            const index_t y = k + static_cast<index_t>(a.value);
            if (y <= 0) continue;
            c += V->at(y) / vk * a.prob;
            last = y;
            if (u < c) return y;
        }
        return last;
    }
    double up_real(double k) const { return kernel_real(k, 1.0); }
    double down_real(double k) const { return k <= 1.0 ? 0.0 : kernel_real(k, -1.0); }

    NNChainSpec nn() const
    {
        NNChainSpec s;
        s.p_plus = [w = *this](double k) { return w.up_real(k); };
        s.p_minus = [w = *this](double k) { return w.down_real(k); };
        // past the table V = A + Bx, so log(p+/p-) = 2 atanh(B/(A+Bx)) when
        // the law is centred (P{xi=1} = P{xi=-1})
        const double B = V->slope, A = V->v.back() - B * V->last(), n = V->last();
        const bool sym = std::fabs(increment.pmf(1.0) - increment.pmf(-1.0)) < 1e-15;
        if (sym && A > -B * n) {
            s.kappa = [w = *this, A, B, n](double lw) {
                const double x = std::exp(std::min(lw, 700.0));
                if (x <= n + 1.0) return x * w.nn_log_ratio(x);
                const double u = B / (A + B * x);
                return 2.0 * x * u * detail::atanh_ratio(u);
            };
            s.kappa_excess = [w = *this, A, B, n](double lw) {
                const double x = std::exp(std::min(lw, 700.0));
                if (x <= n + 1.0) return x * w.nn_log_ratio(x) - 1.0;
                const double u = B / (A + B * x);
                return (B * x - A) / (A + B * x) + 2.0 * x * u * detail::atanh_ratio_m1(u);
            };
        }
        return s;
    }

private:
    double kernel_real(double k, double j) const
    {
        const double p = increment.pmf(j);
        if (p == 0.0) return 0.0;
        const double vk = (*V)(k);
        double tot = 0.0;
        for (auto& a : increment.atoms)
            if (k + a.value > 0.0) tot += (*V)(k + a.value) / vk * a.prob;
        return (*V)(k + j) / vk * p / tot;
    }
    double nn_log_ratio(double x) const { return std::log(up_real(x)) - std::log(down_real(x)); }
};

class ChainModel;

// The base chain with every jump longer than s(x) replaced by a zero jump.
// Sampling reuses the base draw, so it works for sampling-only bases too.
struct Truncated {
    std::shared_ptr<const ChainModel> base;
    std::function<double(double)> s;

    double span() const;
    double position(index_t k) const;
    bool skip_free() const;
    bool exact_law() const;
    JumpLaw law_at(index_t k) const;
    index_t step(index_t k, Rng& g) const;
    double up_real(double k) const;
    double down_real(double k) const;
    std::optional<NNChainSpec> nn_opt() const;
};

// ---- model -----------------------------------------------------------------

class ChainModel {
public:
    using Family = std::variant<NearestNeighbour, LampertiRegular, LampertiCritical, LampertiWeibull, ConstantDrift,
                                SqrtBranching, ConditionedWalk, Truncated>;

    ChainModel(std::string name, std::map<std::string, double> params, Family f)
        : name_(std::move(name)), params_(std::move(params)), family_(std::move(f))
    {
    }

    const std::string& family_name() const { return name_; }
    const std::map<std::string, double>& params() const { return params_; }
    const Family& family() const { return family_; }

    template <class F>
    decltype(auto) visit(F&& f) const
    {
        return std::visit(std::forward<F>(f), family_);
    }

    // jumps in {-span, 0, span}
    bool skip_free() const
    {
        if (auto* w = std::get_if<ConditionedWalk>(&family_)) return w->skip_free();
        if (auto* t = std::get_if<Truncated>(&family_)) return t->skip_free();
        return !std::holds_alternative<SqrtBranching>(family_);
    }
    // jump law available in closed form
    bool exact_law() const
    {
        if (auto* t = std::get_if<Truncated>(&family_)) return t->exact_law();
        return !std::holds_alternative<SqrtBranching>(family_);
    }

    // lattice spacing; 0 for the sqrt-transformed family
    double span() const
    {
        return visit([](const auto& f) { return f.span(); });
    }
    double position(index_t k) const
    {
        return visit([k](const auto& f) { return f.position(k); });
    }
    // largest index whose position is <= x (x >= 0)
    index_t index_at_or_below(double x) const
    {
        if (x < 0.0) return -1;
        if (span() == 0.0) {
            index_t z = static_cast<index_t>(std::floor(x * x));
            while (z > 0 && position(z) > x) --z;
            while (position(z + 1) <= x) ++z;
            return z;
        }
        const double c = span();
        index_t k = static_cast<index_t>(std::floor(x / c + 1e-9));
        while (k > 0 && position(k) > x) --k;
        while (position(k + 1) <= x) ++k;
        return k;
    }
    // nearest lattice index to x
    index_t index_of(double x) const
    {
        const index_t k = index_at_or_below(x);
        return (std::fabs(position(k + 1) - x) < std::fabs(position(k) - x)) ? k + 1 : k;
    }

    std::optional<NNChainSpec> nn_spec() const
    {
        if (!skip_free()) return std::nullopt;
        return visit([](const auto& f) -> std::optional<NNChainSpec> {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, SqrtBranching>)
                return std::nullopt;
            else if constexpr (std::is_same_v<T, Truncated>)
                return f.nn_opt();
            else
                return f.nn();
        });
    }

    double up(index_t k) const
    {
        if (!skip_free()) throw model_error(name_ + " is not nearest-neighbour");
        return visit([k](const auto& f) -> double {
            if constexpr (std::is_same_v<std::decay_t<decltype(f)>, SqrtBranching>)
                return 0.0;
            else
                return f.up_real(static_cast<double>(k));
        });
    }
    double down(index_t k) const
    {
        if (!skip_free()) throw model_error(name_ + " is not nearest-neighbour");
        return visit([k](const auto& f) -> double {
            if constexpr (std::is_same_v<std::decay_t<decltype(f)>, SqrtBranching>)
                return 0.0;
            else
                return f.down_real(static_cast<double>(k));
        });
    }

    // Law of the jump in state units at lattice index k.
    JumpLaw law_at_index(index_t k) const
    {
        return visit([k](const auto& f) -> JumpLaw {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, SqrtBranching>) {
                throw model_error("sqrt_branching has no closed-form jump law; pass a sample count to use Monte Carlo");
            } else if constexpr (std::is_same_v<T, ConditionedWalk> || std::is_same_v<T, Truncated>) {
                return f.law_at(k);
            } else {
                const double c = f.span();
                const double pu = f.up(k), pd = f.down(k);
                JumpLaw law;
                if (pd > 0.0) law.atoms.push_back({-c, pd});
                const double p0 = 1.0 - pu - pd;
                if (p0 > 0.0) law.atoms.push_back({0.0, p0});
                if (pu > 0.0) law.atoms.push_back({c, pu});
                return law;
            }
        });
    }
    JumpLaw law(double x) const { return law_at_index(index_of(x)); }

    index_t step(index_t k, Rng& g) const
    {
        return visit([k, &g](const auto& f) -> index_t {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, SqrtBranching> || std::is_same_v<T, ConditionedWalk> ||
                          std::is_same_v<T, Truncated>) {
                return f.step(k, g);
            } else {
                const double u = g.uniform();
                const double pu = f.up(k);
                if (u < pu) return k + 1;
                if (u < pu + f.down(k)) return k - 1;
                return k;
            }
        });
    }

private:
    std::string name_;
    std::map<std::string, double> params_;
    Family family_;
};

inline double Truncated::span() const { return base->span(); }
inline double Truncated::position(index_t k) const { return base->position(k); }
inline bool Truncated::skip_free() const { return base->skip_free(); }
inline bool Truncated::exact_law() const { return base->exact_law(); }
inline JumpLaw Truncated::law_at(index_t k) const
{
    const double sx = s(base->position(k));
    JumpLaw law;
    double stay = 0.0;
    for (auto& a : base->law_at_index(k).atoms) {
        if (std::fabs(a.value) > sx || a.value == 0.0)
            stay += a.prob;
        else
            law.atoms.push_back(a);
    }
    if (stay > 0.0) law.atoms.push_back({0.0, stay});
    law.normalize_order();
    return law;
}
inline index_t Truncated::step(index_t k, Rng& g) const
{
    const index_t n = base->step(k, g);
    return std::fabs(base->position(n) - base->position(k)) > s(base->position(k)) ? k : n;
}
inline double Truncated::up_real(double k) const
{
    const double c = base->span();
    return c > s(c * k) ? 0.0 : base->visit([k](const auto& f) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(f)>, SqrtBranching>)
            return 0.0;
        else
            return f.up_real(k);
    });
}
inline double Truncated::down_real(double k) const
{
    const double c = base->span();
    return c > s(c * k) ? 0.0 : base->visit([k](const auto& f) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(f)>, SqrtBranching>)
            return 0.0;
        else
            return f.down_real(k);
    });
}
// tail constants are the base ones, which assumes s(x) >= span far out
inline std::optional<NNChainSpec> Truncated::nn_opt() const
{
    auto b = base->nn_spec();
    if (!b) return std::nullopt;
    b->p_plus = [t = *this](double k) { return t.up_real(k); };
    b->p_minus = [t = *this](double k) { return t.down_real(k); };
    return b;
}

inline ChainModel truncate_jumps(const ChainModel& base, std::function<double(double)> s)
{
    if (!s) throw model_error("truncate_jumps: missing truncation level");
    return ChainModel(base.family_name() + "_truncated", base.params(),
                      Truncated{std::make_shared<const ChainModel>(base), std::move(s)});
}

namespace detail {
inline double need(const std::map<std::string, double>& p, const std::string& k, const std::string& fam)
{
    auto it = p.find(k);
    if (it == p.end()) throw model_error(fam + ": missing parameter '" + k + "'");
    return it->second;
}
inline double opt(const std::map<std::string, double>& p, const std::string& k, double d)
{
    auto it = p.find(k);
    return it == p.end() ? d : it->second;
}
} // namespace detail

inline std::vector<std::string> builtin_families()
{
    return {"nearest_neighbour", "lambda_chain", "lamperti_regular", "lamperti_critical",
            "lamperti_weibull",  "sqrt_branching", "constant_drift"};
}

inline ChainModel make_builtin(const std::string& family, const std::map<std::string, double>& p)
{
    using detail::need;
    using detail::opt;
    if (family == "nearest_neighbour") {
        const double pp = opt(p, "p", 0.5);
        const double mp = opt(p, "mu_plus", 0.0), mm = opt(p, "mu_minus", 0.0);
        const double al = opt(p, "alpha", 1.0), sh = opt(p, "shift", 0.0);
        if (!(pp >= 0.0 && pp <= 1.0)) throw model_error("nearest_neighbour: p must lie in [0,1]");
        if (2.0 * pp > 1.0 + 1e-12) throw model_error("nearest_neighbour: need p+ + p- <= 1, i.e. p <= 1/2");
        return ChainModel(family, p, NearestNeighbour::power_form(pp, mp, mm, al, sh));
    }
    if (family == "lambda_chain") {
        const double l = need(p, "lambda", family);
        if (!(l > 0.0)) throw model_error("lambda_chain: lambda must be positive");
        return ChainModel(family, p, NearestNeighbour::lambda_chain(l));
    }
    if (family == "lamperti_regular")
        return ChainModel(family, p, LampertiRegular(need(p, "mu", family), opt(p, "b", 1.0)));
    if (family == "lamperti_critical") {
        const double m = opt(p, "m", 1.0);
        if (m != std::floor(m)) throw model_error("lamperti_critical: m must be an integer");
        return ChainModel(family, p, LampertiCritical(static_cast<int>(m), need(p, "gamma", family), opt(p, "b", 1.0)));
    }
    if (family == "lamperti_weibull")
        return ChainModel(family, p,
                          LampertiWeibull(need(p, "alpha", family), need(p, "mu", family), opt(p, "b", 1.0)));
    if (family == "sqrt_branching")
        return ChainModel(family, p, SqrtBranching(need(p, "sigma2", family), need(p, "a", family)));
    if (family == "constant_drift")
        return ChainModel(family, p, ConstantDrift(need(p, "a", family), opt(p, "b", 1.0)));
    throw model_error("unknown chain family '" + family + "'");
}

// ---- simulation and moments --------------------------------------------------

inline Trajectory simulate_path(const ChainModel& model, double x0, double escape_level, std::size_t step_budget,
                                std::uint64_t seed, std::uint64_t path_index = 0)
{
    Rng g(seed, path_index);
    Trajectory t;
    t.escape_level = escape_level;
    index_t k = model.index_of(x0);
    double x = model.position(k);
    t.states.push_back(x);
    for (;;) {
        if (x > escape_level) {
            t.termination = Termination::escaped;
            return t;
        }
        if (t.steps >= step_budget) {
            t.termination = Termination::step_budget;
            return t;
        }
        k = model.step(k, g);
        x = model.position(k);
        t.states.push_back(x);
        ++t.steps;
    }
}

inline TruncatedMoments moments_of(const JumpLaw& law, double s)
{
    TruncatedMoments r;
    r.s = s;
    KahanSum m1, m2, m3, tail;
    for (auto& a : law.atoms) {
        if (std::fabs(a.value) <= s) {
            m1.add(a.value * a.prob);
            m2.add(a.value * a.value * a.prob);
            m3.add(std::fabs(a.value * a.value * a.value) * a.prob);
        } else {
            tail.add(a.prob);
        }
    }
    r.m1 = m1.value();
    r.m2 = m2.value();
    r.m3_abs = m3.value();
    r.tail_mass = tail.value();
    return r;
}

// E{xi^k; |xi| <= s} at state x. Sampling-only laws need n.
inline TruncatedMoments truncated_moments(const ChainModel& model, double x, double s,
                                          std::optional<std::size_t> n = std::nullopt, std::uint64_t seed = 1)
{
    if (!(s > 0.0)) throw model_error("truncated_moments: s must be positive");
    if (model.exact_law()) return moments_of(model.law(x), s);
    if (!n || *n == 0)
        throw model_error(model.family_name() + " is sampling-only; truncated_moments needs a sample count n");
    const index_t k = model.index_of(x);
    const double x_at = model.position(k);
    Rng g(seed, 0);
    std::vector<double> v1(*n), v2(*n), v3(*n);
    std::size_t tail = 0;
    for (std::size_t i = 0; i < *n; ++i) {
        const double xi = model.position(model.step(k, g)) - x_at;
        if (std::fabs(xi) <= s) {
            v1[i] = xi;
            v2[i] = xi * xi;
            v3[i] = std::fabs(xi * xi * xi);
        } else {
            v1[i] = v2[i] = v3[i] = 0.0;
            ++tail;
        }
    }
    TruncatedMoments r;
    r.s = s;
    r.method = TruncatedMoments::Method::monte_carlo;
    r.n = *n;
    auto a = mean_stderr(v1), b = mean_stderr(v2), c = mean_stderr(v3);
    r.m1 = a.mean;
    r.m1_stderr = a.stderr_;
    r.m2 = b.mean;
    r.m2_stderr = b.stderr_;
    r.m3_abs = c.mean;
    r.tail_mass = static_cast<double>(tail) / static_cast<double>(*n);
    return r;
}

} // namespace lamperti
