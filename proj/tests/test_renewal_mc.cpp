#include <catch_amalgamated.hpp>

#include <lamperti/renewal_mc.hpp>

#include <cmath>

using namespace lamperti;
using Catch::Approx;

namespace {

ChainModel lambda1() { return make_builtin("lambda_chain", {{"lambda", 1.0}}); }

// p+ = 1 everywhere
ChainModel pure_right()
{
    return ChainModel("pure_right", {}, NearestNeighbour::power_form(0.5, 0.5, 0.5, 0.0, 0.0));
}

double exact_H(const ChainModel& m, index_t x0, index_t a, index_t b)
{
    NNGreen g(*m.nn_spec(), std::max(b, x0));
    double s = 0.0;
    for (index_t y = a + 1; y <= b; ++y) s += g(x0, y);
    return s;
}

McOptions opts(std::size_t n, McMode mode, std::uint64_t seed = 7)
{
    McOptions o;
    o.n_paths = n;
    o.mode = mode;
    o.seed = seed;
    return o;
}

} // namespace

TEST_CASE("pure-right chain visits an interval deterministically")
{
    for (auto mode : {McMode::plain, McMode::exact, McMode::regenerative}) {
        auto e = estimate_H(pure_right(), 0.0, {5.5, 7.5}, opts(50, mode));
        CHECK(e.mean_visits == 2.0);
        CHECK(e.stderr_ == 0.0);
        CHECK(e.budget_hits == 0.0);
        CHECK(e.n_paths == 50);
    }
}

TEST_CASE("lambda chain matches the exact green function")
{
    auto m = lambda1();
    const double want = exact_H(m, 0, 500, 510);
    for (auto mode : {McMode::exact, McMode::regenerative}) {
        auto e = estimate_H(m, 0.0, {500, 510}, opts(4000, mode));
        CHECK(std::fabs(e.mean_visits - want) <= 3 * e.stderr_);
        CHECK(e.stderr_ < 0.05 * want);
    }
}

TEST_CASE("plain simulation matches the exact green function")
{
    auto m = make_builtin("lamperti_regular", {{"mu", 3.0}, {"b", 1.0}});
    const double c = m.span();
    const index_t a = 20, b = 30;
    const double want = exact_H(m, 0, a, b);
    auto e = estimate_H(m, 0.0, {a * c, b * c}, opts(3000, McMode::plain));
    CHECK(e.mode == McMode::plain);
    CHECK(e.escape_level > b * c);
    CHECK(std::fabs(e.mean_visits - want) <= 3 * e.stderr_);
}

TEST_CASE("automatic mode picks exact sampling for skip-free chains")
{
    CHECK(resolve_mode(lambda1(), McMode::automatic) == McMode::exact);
    auto sq = make_builtin("sqrt_branching", {{"sigma2", 0.5}, {"a", 1.0}});
    CHECK(resolve_mode(sq, McMode::automatic) == McMode::plain);
    CHECK_THROWS_AS(resolve_mode(sq, McMode::exact), model_error);
}

TEST_CASE("additivity over adjacent intervals is exact path by path")
{
    auto m = lambda1();
    auto r = estimate_H_profile(m, 0.0, {{100, 130}, {130, 150}, {100, 150}}, opts(300, McMode::exact));
    CHECK(r[0].mean_visits + r[1].mean_visits == Approx(r[2].mean_visits).epsilon(1e-14));
    // plain mode: same seed and escape level give the same trajectories
    auto reg = make_builtin("lamperti_regular", {{"mu", 2.0}});
    auto o = opts(500, McMode::plain);
    o.escape_level = 80.0;
    auto a = estimate_H(reg, 0.0, {10, 20}, o), b = estimate_H(reg, 0.0, {20, 35}, o), c = estimate_H(reg, 0.0, {10, 35}, o);
    CHECK(a.mean_visits + b.mean_visits == Approx(c.mean_visits).epsilon(1e-14));
}

TEST_CASE("source far below the interval does not matter")
{
    auto m = make_builtin("lamperti_regular", {{"mu", 2.0}});
    auto o = opts(3000, McMode::plain);
    o.escape_level = 120.0;
    auto e0 = estimate_H(m, 0.0, {40, 50}, o);
    o.seed = 99;
    auto e1 = estimate_H(m, 6.0, {40, 50}, o);
    CHECK(std::fabs(e0.mean_visits - e1.mean_visits) <= 3 * std::hypot(e0.stderr_, e1.stderr_));
    // exact mode starts both at the bottom of the interval
    auto x0 = estimate_H(m, 0.0, {40, 50}, opts(100, McMode::exact));
    auto x1 = estimate_H(m, 6.0, {40, 50}, opts(100, McMode::exact));
    CHECK(x0.mean_visits == x1.mean_visits);
}

TEST_CASE("seed and thread count determinism")
{
    auto m = lambda1();
    auto sq = make_builtin("sqrt_branching", {{"sigma2", 0.5}, {"a", 1.0}});
    for (auto mode : {McMode::exact, McMode::regenerative}) {
        auto o = opts(200, mode);
        auto a = estimate_H(m, 0.0, {50, 70}, o);
        o.threads = 3;
        auto b = estimate_H(m, 0.0, {50, 70}, o);
        CHECK(a.mean_visits == b.mean_visits);
        CHECK(a.stderr_ == b.stderr_);
        o.seed = 8;
        auto c = estimate_H(m, 0.0, {50, 70}, o);
        CHECK(a.mean_visits != c.mean_visits);
    }
    auto o = opts(200, McMode::plain);
    auto a = estimate_H(sq, 0.0, {5, 6}, o);
    o.threads = 4;
    auto b = estimate_H(sq, 0.0, {5, 6}, o);
    CHECK(a.mean_visits == b.mean_visits);
    CHECK(a.stderr_ == b.stderr_);
}

TEST_CASE("doubling the escape level does not move the estimate")
{
    // plain mode: paths agree until the first passage of the lower level
    auto sq = make_builtin("sqrt_branching", {{"sigma2", 0.5}, {"a", 1.0}});
    auto o = opts(600, McMode::plain);
    auto e1 = estimate_H(sq, 0.0, {5, 7}, o);
    o.escape_level = 2 * e1.escape_level;
    auto e2 = estimate_H(sq, 0.0, {5, 7}, o);
    CHECK(std::fabs(e1.mean_visits - e2.mean_visits) < e1.stderr_);

    auto reg = make_builtin("lamperti_regular", {{"mu", 3.0}});
    auto p = opts(2000, McMode::plain);
    auto r1 = estimate_H(reg, 0.0, {20, 30}, p);
    p.escape_level = 2 * r1.escape_level;
    auto r2 = estimate_H(reg, 0.0, {20, 30}, p);
    CHECK(std::fabs(r1.mean_visits - r2.mean_visits) < r1.stderr_);

    // exact sampling: the top boundary is exact at any level, so the two
    // runs are independent estimates of one number
    for (const std::string fam : {"lambda_chain", "lamperti_critical", "lamperti_weibull", "constant_drift"}) {
        std::map<std::string, double> prm;
        if (fam == "lambda_chain") prm = {{"lambda", 1.0}};
        if (fam == "lamperti_critical") prm = {{"gamma", 1.0}};
        if (fam == "lamperti_weibull") prm = {{"alpha", 0.5}, {"mu", 1.0}};
        if (fam == "constant_drift") prm = {{"a", 0.3}};
        auto m = make_builtin(fam, prm);
        const double c = m.span();
        auto q = opts(1500, McMode::exact, 3);
        auto x1 = estimate_H(m, 0.0, {40 * c, 50 * c}, q);
        q.escape_level = 100 * c;
        q.seed = 4;
        auto x2 = estimate_H(m, 0.0, {40 * c, 50 * c}, q);
        INFO(fam);
        CHECK(std::fabs(x1.mean_visits - x2.mean_visits) <= 3 * std::hypot(x1.stderr_, x2.stderr_));
        CHECK(std::fabs(x1.mean_visits - exact_H(m, 0, 40, 50)) <= 3 * x1.stderr_);
    }
}

TEST_CASE("step budget hits are reported")
{
    auto o = opts(20, McMode::exact);
    o.step_budget = 10;
    auto e = estimate_H(lambda1(), 0.0, {100, 200}, o);
    CHECK(e.budget_hits == 1.0);
    CHECK(e.biased_low());
    CHECK(e.mean_visits <= 11.0);
    auto ok = estimate_H(lambda1(), 0.0, {100, 110}, opts(20, McMode::exact));
    CHECK(ok.budget_hits == 0.0);
    CHECK_FALSE(ok.biased_low());
}

TEST_CASE("profile: empty list and invalid intervals")
{
    CHECK(estimate_H_profile(lambda1(), 0.0, {}, {}).empty());
    CHECK_THROWS(estimate_H(lambda1(), 0.0, {5, 5}, {}));
    CHECK_THROWS(estimate_H(lambda1(), 0.0, {5, 6}, opts(0, McMode::exact)));
}

TEST_CASE("profile ratios approach the limiting constant")
{
    // H(x, x+h]/(2xh) = 1 + (h+3)/(2x) for lambda = 1: monotone toward 1.
    // The gaps between checkpoints are about 1%, below what a few thousand
    // paths resolve, so each ratio is held to its exact value instead.
    auto m = lambda1();
    std::vector<Interval> iv;
    for (double x : {250.0, 500.0, 1000.0, 2000.0}) iv.push_back(checkpoint(x, std::floor(std::pow(x, 0.6))));
    auto r = estimate_H_profile(m, 0.0, iv, opts(3000, McMode::regenerative));
    double prev = 1e9;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double h = iv[i].b - iv[i].a, x = iv[i].a;
        const double want = 1 + (h + 3) / (2 * x);
        CHECK(want - 1 < prev);
        prev = want - 1;
        const double ratio = r[i].mean_visits / (2 * x * h), se = r[i].stderr_ / (2 * x * h);
        INFO(x << " " << ratio << " +- " << se);
        CHECK(std::fabs(ratio - want) <= 3 * se);
        CHECK(se < 0.2);
    }
}

TEST_CASE("weibull family: H v / h tends to one")
{
    auto m = make_builtin("lamperti_weibull", {{"alpha", 0.5}, {"mu", 1.0}, {"b", 1.0}});
    const double h = 20;
    double prev = 1e9;
    for (double x : {100.0, 1000.0, 10000.0}) {
        auto e = estimate_H(m, 0.0, {x, x + h}, opts(2000, McMode::exact));
        const double v = 1.0 / std::sqrt(x);
        const double want = exact_H(m, 0, m.index_at_or_below(x), m.index_at_or_below(x + h)) * v / h;
        CHECK(std::fabs(want - 1) < prev);
        prev = std::fabs(want - 1);
        const double ratio = e.mean_visits * v / h, se = e.stderr_ * v / h;
        INFO(x << " " << ratio << " +- " << se << " exact " << want);
        CHECK(std::fabs(ratio - want) <= 3 * se);
    }
    CHECK(prev < 0.01);
}

TEST_CASE("renewal equation: single source, linearity, mass")
{
    auto m = lambda1();
    const Interval iv{300, 320};
    auto o = opts(2000, McMode::exact);
    auto one = estimate_H(m, 0.0, iv, o);
    auto z1 = solve_renewal_equation(m, {{0.0, 1.0}}, iv, o);
    CHECK(z1.value == one.mean_visits);
    CHECK(z1.stderr_ == one.stderr_);
    auto z2 = solve_renewal_equation(m, {{0.0, 2.0}}, iv, o);
    CHECK(z2.value == 2 * one.mean_visits);
    CHECK(z2.total_mass == 2.0);

    auto mix = solve_renewal_equation(m, {{0.0, 0.5}, {10.0, 0.5}}, iv, opts(4000, McMode::regenerative));
    REQUIRE(mix.per_source.size() == 2);
    CHECK(mix.allocation[0] == 2000);
    const double avg = 0.5 * (mix.per_source[0].mean_visits + mix.per_source[1].mean_visits);
    CHECK(mix.value == Approx(avg).epsilon(1e-14));
    const double want = exact_H(m, 0, 300, 320);
    CHECK(std::fabs(mix.value - want) <= 3 * mix.stderr_);
    CHECK(mix.ratio_to(want) == Approx(1.0).epsilon(5 * mix.stderr_ / want));

    CHECK_THROWS(solve_renewal_equation(m, {}, iv, o));
    CHECK_THROWS(solve_renewal_equation(m, {{0.0, 0.0}}, iv, o));
    CHECK_THROWS(solve_renewal_equation(m, {{0.0, -1.0}, {1.0, 2.0}}, iv, o));
}
