#include <catch_amalgamated.hpp>

#include <lamperti/green_exact.hpp>

#include <cmath>

using namespace lamperti;
using Catch::Approx;

namespace {

NNChainSpec lambda_spec(double lambda) { return NearestNeighbour::lambda_chain(lambda).nn(); }

NNChainSpec constant_spec(double pp, double pm)
{
    NNChainSpec s;
    s.p_plus = [pp](double) { return pp; };
    s.p_minus = [pm](double k) { return k <= 0.0 ? 0.0 : pm; };
    return s;
}

// Random power-form specs with a transient tail.
std::vector<NNChainSpec> random_specs(std::uint64_t seed, int n)
{
    Rng g(seed);
    std::vector<NNChainSpec> out;
    while (int(out.size()) < n) {
        const double p = 0.3 + 0.2 * g.uniform();
        const double alpha = 0.4 + 0.6 * g.uniform();
        const double mp = 0.1 + 0.9 * g.uniform() * p, mm = 0.1 + 0.9 * g.uniform() * p;
        if (alpha == 1.0 && mp + mm <= p * 1.2) continue;
        out.push_back(NearestNeighbour::power_form(p, mp, mm, alpha, 1.0 + 3.0 * g.uniform()).nn());
    }
    return out;
}

} // namespace

TEST_CASE("deterministic right drift has a single visit per state")
{
    NNChainSpec s = constant_spec(1.0, 0.0);
    for (index_t x : {0, 3, 50}) {
        auto g = green_nn(s, 0, x, 1e-12);
        CHECK(g.value == 1.0);
        CHECK(g.truncation_error_bound == 0.0);
    }
}

TEST_CASE("lambda chain closed form")
{
    // lambda = 1: rho(z) = z/(z+2), h_{x0}(x) = 2(x+1) for x0 <= x
    NNGreen g(lambda_spec(1.0), 3000, 1e-13);
    for (index_t x : {0, 1, 10, 500, 2000, 3000}) {
        auto v = g.green(0, x);
        CHECK(v.value == Approx(2.0 * (x + 1)).epsilon(1e-11));
        CHECK(v.truncation_error_bound <= 1e-13 * v.value);
        CHECK(v.truncation_error_bound >= 0.0);
    }
    // x0 above x: P_{x0}(hit x) = (x+1)/(x0+1)
    CHECK(g(1000, 10) == Approx(2.0 * 11.0 * 11.0 / 1001.0).epsilon(1e-11));
    CHECK(g.hit_prob(1000, 10) == Approx(11.0 / 1001.0).epsilon(1e-11));
    const double r = g(0, 2000) / 2000.0;
    CHECK(r >= 1.9);
    CHECK(r <= 2.1);
    const double a = g(0, 2000) / asymptotic_nn(2000.0, NNRegime::one_over_x(0.5, 1.0));
    CHECK(a >= 0.95);
    CHECK(a <= 1.05);
}

TEST_CASE("series tail against the lambda chain closed form")
{
    auto s = lambda_spec(1.0);
    for (index_t N : {100, 1000, 100000}) {
        auto t = series_tail(s, N);
        CHECK(t.tau == Approx(double(N + 1)).epsilon(std::max(1e-12, 4.0 / (double(N) * N))));
        CHECK(std::fabs(t.tau - double(N + 1)) <= t.error);
    }
}

TEST_CASE("series tail for a slowly converging critical chain")
{
    auto spec = LampertiCritical(1, 1.0, 1.0).nn();
    // compare tail(N) with explicit summation to M plus tail(M)
    const index_t N = 20000, M = 2000000;
    auto tN = series_tail(spec, N);
    auto tM = series_tail(spec, M);
    long double S = 1.0L + tM.tau;
    for (index_t u = M - 1; u >= N; --u) S = 1.0L + spec.p_minus(double(u + 1)) / spec.p_plus(double(u + 1)) * S;
    const double direct = double(S) - 1.0;
    CHECK(tN.tau == Approx(direct).epsilon(1e-9));
    CHECK(std::fabs(tN.tau - direct) <= tN.error + 1e-9 * direct);
}

TEST_CASE("matched-truncation oracle agreement")
{
    auto specs = random_specs(2024, 5);
    specs.insert(specs.begin(), lambda_spec(1.0));
    for (auto& s : specs) {
        const index_t N = 4000;
        for (index_t x0 : {0, 17, 400}) {
            auto nu = green_oracle(s, x0, N);
            for (index_t x : {0, 1, 5, 99, 400, 731, 1000}) {
                const double ser = green_nn_truncated(s, x0, x, N);
                CHECK(ser == Approx(double(nu[std::size_t(x)])).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("full series against a converged oracle")
{
    // Weibull-type tails die fast, so the oracle stabilizes at moderate N.
    auto specs = random_specs(77, 8);
    int used = 0;
    for (auto& s : specs) {
        if (s.regime.kind != NNChainSpec::Regime::Kind::weibull) continue;
        NNGreen g(s, 1000, 1e-12);
        index_t N = 4096;
        std::vector<long double> prev = green_oracle(s, 0, N);
        bool stable = false;
        for (int it = 0; it < 8 && !stable; ++it) {
            N *= 2;
            auto cur = green_oracle(s, 0, N);
            double change = 0.0;
            for (index_t x = 0; x <= 1000; ++x)
                change = std::max(change, double(std::fabs(cur[x] - prev[x]) / cur[x]));
            stable = change < 1e-10;
            prev = std::move(cur);
        }
        if (!stable) continue;
        ++used;
        for (index_t x : {0, 10, 100, 500, 1000}) CHECK(g(0, x) == Approx(double(prev[std::size_t(x)])).epsilon(1e-8));
    }
    CHECK(used >= 1);
}

TEST_CASE("three algebraic forms agree")
{
    auto specs = random_specs(5, 3);
    specs.push_back(lambda_spec(2.0));
    for (auto& s : specs) {
        for (index_t x : {1, 10, 300}) {
            auto f = green_nn_forms(s, 0, x, 5000);
            CHECK(f[1] == Approx(f[0]).epsilon(1e-10));
            CHECK(f[2] == Approx(f[0]).epsilon(1e-10));
            CHECK(f[0] == Approx(green_nn_truncated(s, 0, x, 5000)).epsilon(1e-12));
        }
    }
}

TEST_CASE("partial sums are nondecreasing")
{
    auto s = lambda_spec(1.5);
    double prev = 0.0;
    for (index_t N = 60; N < 100000; N *= 3) {
        const double v = green_nn_truncated(s, 0, 50, N);
        CHECK(v >= prev);
        prev = v;
    }
    CHECK(prev <= green_nn(s, 0, 50).value);
}

TEST_CASE("transience verdicts")
{
    auto geo = check_transience(constant_spec(0.6, 0.4), 200);
    CHECK(geo.verdict == Verdict::convergent);
    CHECK(geo.partial_sum == Approx(2.0).epsilon(1e-12));

    CHECK(check_transience(lambda_spec(1.0), 10000).verdict == Verdict::convergent);
    CHECK(check_transience(LampertiCritical(1, 1.0, 1.0).nn(), 100000).verdict == Verdict::convergent);

    auto sym = check_transience(constant_spec(0.5, 0.5), 1000);
    CHECK(sym.verdict != Verdict::convergent);
    // borderline recurrent: lambda = 1/2 gives z(1 - rho) = 1
    CHECK(check_transience(lambda_spec(0.5), 10000).verdict != Verdict::convergent);
    // 2 m1/b = 1/x + 0.5/(x log x) is recurrent
    NNChainSpec weak;
    auto m1 = [](double x) {
        x = std::max(x, M_E);
        return 0.5 * (1.0 / x + 0.5 / (x * std::log(x)));
    };
    weak.p_plus = [m1](double k) { return 0.5 * (1.0 + m1(k)); };
    weak.p_minus = [m1](double k) { return k <= 0.0 ? 0.0 : 0.5 * (1.0 - m1(k)); };
    CHECK(check_transience(weak, 100000).verdict != Verdict::convergent);
}

TEST_CASE("recurrent chains are rejected with the convergence condition")
{
    try {
        green_nn(constant_spec(0.5, 0.5), 0, 10);
        FAIL("expected divergence");
    } catch (const series_divergent& e) {
        CHECK(std::string(e.what()).find("bounded") != std::string::npos);
    }
    CHECK_THROWS_AS(green_nn(lambda_spec(0.4), 0, 10), series_divergent);
}

TEST_CASE("unreachable tolerance reports best value and bound")
{
    try {
        NNGreen g(lambda_spec(1.0), 100, 1e-30, 5000);
        FAIL("expected tolerance failure");
    } catch (const tolerance_unreachable& e) {
        CHECK(e.best_value > 0.0);
        CHECK(e.error_bound > 0.0);
    }
}

TEST_CASE("asymptotic regimes")
{
    CHECK(asymptotic_nn(1000.0, NNRegime::one_over_x(0.5, 1.0)) == Approx(2000.0));
    CHECK(asymptotic_nn(10000.0, NNRegime::weibull(0.5, 1.0, 0.5)) == Approx(100.0));
    CHECK(asymptotic_nn(0.0, NNRegime::one_over_x(0.5, 1.5)) == 0.0);
    CHECK_THROWS(asymptotic_nn(10.0, NNRegime::one_over_x(0.5, 0.5)));
    CHECK_THROWS(asymptotic_nn(10.0, NNRegime::weibull(0.5, 1.0, 1.0)));
}

TEST_CASE("weibull nearest-neighbour chain approaches x^alpha/mu")
{
    auto s = NearestNeighbour::power_form(0.5, 0.25, 0.25, 0.5, 0.0).nn();
    NNGreen g(s, 100000, 1e-10);
    const double r4 = g(0, 10000) / asymptotic_nn(1e4, NNRegime::weibull(0.5, 0.5, 0.5));
    const double r5 = g(0, 100000) / asymptotic_nn(1e5, NNRegime::weibull(0.5, 0.5, 0.5));
    CHECK(std::fabs(r5 - 1.0) < std::fabs(r4 - 1.0));
    CHECK(r5 == Approx(1.0).margin(0.05));
}
