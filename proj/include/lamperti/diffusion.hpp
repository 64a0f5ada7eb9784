#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "quadrature.hpp"

namespace lamperti {

class diffusion_divergent : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

inline const char* diffusion_divergence_message()
{
    return "diffusion is not transient: the scale integral U(x) = int_x^inf exp(-R) diverges; "
           "transience needs 2 mu/sigma^2 large enough that exp(-R) is integrable at infinity";
}

// Generator mu(x) d/dx + sigma2(x)/2 d^2/dx^2 on [floor, inf).
struct DiffusionSpec {
    std::function<double(double)> mu;
    std::function<double(double)> sigma2;
    double floor = 0.0;
    // points where mu or sigma2 has a kink; quadrature panels split there
    std::vector<double> breakpoints;

    struct Regime {
        enum class Kind { none, constant, one_over_x, weibull } kind = Kind::none;
        double mu = 0.0, alpha = 0.0, sigma2 = 1.0;
    } regime;

    double rate(double x) const { return 2.0 * mu(x) / sigma2(x); }

    static DiffusionSpec constant(double mu, double sigma2 = 1.0)
    {
        if (!(sigma2 > 0.0)) throw std::invalid_argument("diffusion: sigma2 must be positive");
        DiffusionSpec s;
        s.mu = [mu](double) { return mu; };
        s.sigma2 = [sigma2](double) { return sigma2; };
        s.regime = {Regime::Kind::constant, mu, 0.0, sigma2};
        return s;
    }
    // mu/x^alpha for x >= 1, held at mu on [0, 1]
    static DiffusionSpec power(double mu, double alpha, double sigma2 = 1.0)
    {
        if (!(sigma2 > 0.0)) throw std::invalid_argument("diffusion: sigma2 must be positive");
        if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("diffusion: alpha must lie in (0, 1]");
        DiffusionSpec s;
        s.mu = [mu, alpha](double x) { return x <= 1.0 ? mu : mu * std::pow(x, -alpha); };
        s.sigma2 = [sigma2](double) { return sigma2; };
        s.breakpoints = {1.0};
        s.regime = {alpha == 1.0 ? Regime::Kind::one_over_x : Regime::Kind::weibull, mu, alpha, sigma2};
        return s;
    }
    static DiffusionSpec one_over_x(double mu, double sigma2 = 1.0) { return power(mu, 1.0, sigma2); }
    static DiffusionSpec weibull(double mu, double alpha, double sigma2 = 1.0) { return power(mu, alpha, sigma2); }
};

// Scale function, speed measure and the occupation density W(v) = 2 U/(-U' sigma2).
// Everything is carried through phi(v) = U(v) e^{R(v)} = int_v^inf e^{R(v)-R(z)} dz,
// which stays O(1/rate) where U and e^R themselves over/underflow.
class ScaleObjects {
public:
    enum class Evaluation { closed_form, quadrature };

    explicit ScaleObjects(DiffusionSpec spec, bool force_quadrature = false, QuadTolerance tol = {})
        : spec_(std::move(spec)), tol_(tol)
    {
        using K = DiffusionSpec::Regime::Kind;
        const auto& g = spec_.regime;
        if (g.kind != K::none) {
            beta_ = 2.0 * g.mu / g.sigma2;
            bool ok = g.mu > 0.0;
            if (g.kind == K::one_over_x) ok = beta_ > 1.0;
            if (!ok) throw diffusion_divergent(diffusion_divergence_message());
        } else {
            check_tail();
        }
        eval_ = (g.kind != K::none && !force_quadrature) ? Evaluation::closed_form : Evaluation::quadrature;
        // finiteness at the left edge
        const double p = phi(spec_.floor);
        if (!(p > 0.0) || !std::isfinite(p)) throw diffusion_divergent(diffusion_divergence_message());
    }

    Evaluation evaluation() const { return eval_; }
    const DiffusionSpec& spec() const { return spec_; }
    QuadTolerance tolerance() const { return tol_; }

    // R(x) = int_floor^x 2 mu/sigma2
    double R(double x) const
    {
        if (eval_ == Evaluation::closed_form) return R_closed(x);
        return R_between(spec_.floor, x);
    }
    double R_between(double a, double b) const
    {
        if (eval_ == Evaluation::closed_form) return R_closed(b) - R_closed(a);
        if (b < a) return -R_between(b, a);
        double acc = 0.0;
        auto r = [&](double z) { return spec_.rate(z); };
        for (double lo = a; lo < b;) {
            const double hi = std::min(next_edge(lo), b);
            acc += integrate_panel(r, lo, hi);
            lo = hi;
        }
        return acc;
    }

    double phi(double v) const
    {
        if (eval_ == Evaluation::closed_form) {
            const double c = phi_closed(v);
            if (!std::isnan(c)) return c;
        }
        return phi_quadrature(v);
    }

    double U(double x) const { return std::exp(-R(x)) * phi(x); }
    double log_U(double x) const { return -R(x) + std::log(phi(x)); }
    double U_prime(double x) const { return -std::exp(-R(x)); }
    // speed measure distribution function m(x) = int_floor^x 2 e^R / sigma2
    double m(double x) const
    {
        auto f = [&](double z) { return 2.0 * std::exp(R(z)) / spec_.sigma2(z); };
        double acc = 0.0, lo = spec_.floor;
        for (double bp : spec_.breakpoints) {
            if (bp > lo && bp < x) {
                acc += integrate_finite(f, lo, bp, tol_).value;
                lo = bp;
            }
        }
        return acc + integrate_finite(f, lo, x, tol_).value;
    }
    // occupation density: H_y(dv) = W(v) dv for y < v
    double W(double v) const { return 2.0 * phi(v) / spec_.sigma2(v); }

    // |A U(x)| / |mu(x) U'(x)| by five-point differences, with U scaled by
    // e^{R(x)} so nothing overflows. dx <= 0 picks a step from the local
    // length scale min(x, 1/rate).
    double harmonicity_residual(double x, double dx = 0.0) const
    {
        if (!(dx > 0.0)) dx = 0.02 * std::min(std::max(x - spec_.floor, 1e-3), 1.0 / std::fabs(spec_.rate(x)));
        auto u = [&](double z) { return std::exp(-R_between(x, z)) * phi(z); };
        const double f2 = u(x + 2 * dx), f1 = u(x + dx), f0 = u(x), g1 = u(x - dx), g2 = u(x - 2 * dx);
        const double d1 = (-f2 + 8 * f1 - 8 * g1 + g2) / (12 * dx);
        const double d2 = (-f2 + 16 * f1 - 30 * f0 + 16 * g1 - g2) / (12 * dx * dx);
        const double au = spec_.mu(x) * d1 + 0.5 * spec_.sigma2(x) * d2;
        return std::fabs(au) / std::fabs(spec_.mu(x));
    }

private:
    void check_tail() const
    {
        // x rate(x) must exceed 1 far out, else exp(-R) is not integrable
        for (double z : {1e6, 1e8}) {
            const double r = spec_.rate(z);
            if (!(z * r > 1.0)) throw diffusion_divergent(diffusion_divergence_message());
        }
    }

    double R_closed(double x) const
    {
        using K = DiffusionSpec::Regime::Kind;
        const auto& g = spec_.regime;
        const double f = spec_.floor;
        if (g.kind == K::constant) return beta_ * (x - f);
        auto prim = [&](double z) {
            if (z <= 1.0) return beta_ * z;
            if (g.kind == K::one_over_x) return beta_ * (1.0 + std::log(z));
            return beta_ * (1.0 + (std::pow(z, 1.0 - g.alpha) - 1.0) / (1.0 - g.alpha));
        };
        return prim(x) - prim(f);
    }

    // NaN when the closed form would overflow
    double phi_closed(double v) const
    {
        using K = DiffusionSpec::Regime::Kind;
        const auto& g = spec_.regime;
        if (g.kind == K::constant) return 1.0 / beta_;
        auto above_one = [&](double y) {
            if (g.kind == K::one_over_x) return y / (beta_ - 1.0);
            const double a = 1.0 / (1.0 - g.alpha);
            const double t = beta_ * std::pow(y, 1.0 - g.alpha) / (1.0 - g.alpha);
            if (t > 650.0) return std::numeric_limits<double>::quiet_NaN();
            return a * std::pow(1.0 / (beta_ * a), a) * std::exp(t) * boost::math::tgamma(a, t);
        };
        if (v >= 1.0) return above_one(v);
        const double e = std::exp(-beta_ * (1.0 - v));
        return -std::expm1(-beta_ * (1.0 - v)) / beta_ + e * above_one(1.0);
    }

    // panels grow geometrically and stop at kinks
    double next_edge(double a) const
    {
        double b = std::max(2.0 * a, a + 1.0);
        for (double bp : spec_.breakpoints)
            if (bp > a && bp < b) b = bp;
        return b;
    }

    double phi_quadrature(double v) const
    {
        // cumulative R(z) - R(v) on panels [v, max(2v, v+1), ...] split at breakpoints
        std::vector<double> edge{v}, cum{0.0};
        auto r = [&](double z) { return spec_.rate(z); };
        auto dR = [&](double z) {
            while (edge.back() < z) {
                const double a = edge.back(), b = next_edge(a);
                cum.push_back(cum.back() + integrate_panel(r, a, b));
                edge.push_back(b);
            }
            std::size_t j = std::upper_bound(edge.begin(), edge.end(), z) - edge.begin() - 1;
            return cum[j] + integrate_panel(r, edge[j], z);
        };
        try {
            auto q = integrate_to_inf(
                [&](double z) {
                    if (!(z < 1e300)) return 0.0;
                    const double e = -dR(z);
                    return e < -745.0 ? 0.0 : std::exp(e);
                },
                v, tol_);
            return q.value;
        } catch (const quadrature_error& e) {
            throw diffusion_divergent(std::string(diffusion_divergence_message()) + "; " + e.what());
        }
    }

    DiffusionSpec spec_;
    QuadTolerance tol_;
    Evaluation eval_ = Evaluation::quadrature;
    double beta_ = 0.0;
};

inline ScaleObjects build_scale(const DiffusionSpec& spec, bool force_quadrature = false, QuadTolerance tol = {})
{
    return ScaleObjects(spec, force_quadrature, tol);
}

// H_y(x, x+h] = int_x^{x+h} W(v) dv for y < x (the value does not depend on y)
inline QuadResult green_diffusion(const ScaleObjects& s, double y, double x, double h)
{
    if (!(y < x)) throw std::invalid_argument("green_diffusion: start y must lie below x");
    if (!(h > 0.0)) throw std::invalid_argument("green_diffusion: h must be positive");
    auto w = [&](double v) { return s.W(v); };
    const auto tol = s.tolerance();
    QuadResult acc;
    double lo = x;
    for (double bp : s.spec().breakpoints) {
        if (bp > lo && bp < x + h) {
            auto q = integrate_finite(w, lo, bp, tol);
            acc.value += q.value;
            acc.error += q.error;
            lo = bp;
        }
    }
    auto q = integrate_finite(w, lo, x + h, tol);
    return {acc.value + q.value, acc.error + q.error};
}

// exact antiderivative where one exists (x >= 1 for the power drift), NaN otherwise
inline double green_diffusion_closed(const DiffusionSpec& spec, double x, double h)
{
    using K = DiffusionSpec::Regime::Kind;
    const auto& g = spec.regime;
    if (g.kind == K::constant) return h / g.mu;
    if (g.kind == K::one_over_x && x >= 1.0) return (2.0 * x * h + h * h) / (2.0 * g.mu - g.sigma2);
    return std::numeric_limits<double>::quiet_NaN();
}

struct DiffusionRegime {
    enum class Kind { one_over_x, weibull } kind;
    double mu = 0.0, sigma2 = 1.0, alpha = 0.0;
    static DiffusionRegime one_over_x(double mu, double sigma2) { return {Kind::one_over_x, mu, sigma2, 1.0}; }
    static DiffusionRegime weibull(double mu, double alpha) { return {Kind::weibull, mu, 1.0, alpha}; }
};

inline double asymptotic_diffusion(double x, double h, const DiffusionRegime& g)
{
    if (g.kind == DiffusionRegime::Kind::one_over_x) {
        if (!(2.0 * g.mu > g.sigma2)) throw diffusion_divergent("asymptotic_diffusion: one_over_x needs 2 mu > sigma2");
        return 2.0 * h * x / (2.0 * g.mu - g.sigma2);
    }
    if (!(g.mu > 0.0) || !(g.alpha > 0.0 && g.alpha < 1.0))
        throw std::invalid_argument("asymptotic_diffusion: weibull needs mu > 0 and alpha in (0,1)");
    return h * std::pow(x, g.alpha) / g.mu;
}

} // namespace lamperti
