#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <boost/math/policies/error_handling.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace lamperti {

struct QuadResult {
    double value = 0.0;
    double error = 0.0;
};

class quadrature_error : public std::runtime_error {
public:
    quadrature_error(const std::string& what, double best, double residual)
        : std::runtime_error(what + " (best value " + std::to_string(best) + ", residual bound " +
                             std::to_string(residual) + ")"),
          best_value(best), residual_bound(residual)
    {
    }
    double best_value;
    double residual_bound;
};

struct QuadTolerance {
    double rel = 1e-9;
    double abs = 1e-12;
};

// Adaptive Gauss-Kronrod on a finite interval, bisecting until the
// Kronrod error estimate meets max(abs, rel*|I|).
template <class F>
QuadResult integrate_finite(F&& f, double a, double b, QuadTolerance tol = {}, unsigned max_depth = 12)
{
    if (a == b) return {};
    double err = 0.0, l1 = 0.0;
    const double v =
        boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, max_depth, tol.rel, &err, &l1);
    if (!std::isfinite(v)) throw quadrature_error("integrand not finite on [" + std::to_string(a) + "," + std::to_string(b) + "]", v, err);
    if (err > std::max(tol.abs, tol.rel * std::fabs(v)) && err > 1e4 * std::numeric_limits<double>::epsilon() * l1)
        throw quadrature_error("adaptive Gauss-Kronrod did not converge", v, err);
    return {v, err};
}

// 30-point Gauss-Legendre on one panel, for analytic integrands on panels
// short relative to their variation.
template <class F>
double integrate_panel(F&& f, double a, double b)
{
    if (a == b) return 0.0;
    return boost::math::quadrature::gauss<double, 30>::integrate(f, a, b);
}

// Integral over [a, inf) for integrands decaying at least algebraically.
template <class F>
QuadResult integrate_to_inf(F&& f, double a, QuadTolerance tol = {})
{
    boost::math::quadrature::exp_sinh<double> es(12);
    double err = 0.0, l1 = 0.0, v = 0.0;
    try {
        v = es.integrate([&](double s) { return f(a + s); }, tol.rel, &err, &l1);
    } catch (const std::domain_error& e) {
        throw quadrature_error(std::string("improper integral failed: ") + e.what(), v, err);
    } catch (const boost::math::evaluation_error& e) {
        throw quadrature_error(std::string("improper integral failed: ") + e.what(), v, err);
    }
    if (!std::isfinite(v)) throw quadrature_error("improper integral not finite", v, err);
    if (err > std::max(tol.abs, tol.rel * std::fabs(v)) * 10.0 && err > 1e4 * std::numeric_limits<double>::epsilon() * l1)
        throw quadrature_error("improper integral did not converge", v, err);
    return {v, err};
}

} // namespace lamperti
