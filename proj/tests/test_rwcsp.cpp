#include <catch_amalgamated.hpp>

#include <lamperti/green_exact.hpp>
#include <lamperti/renewal_mc.hpp>
#include <lamperti/rwcsp.hpp>

#include <cmath>

using namespace lamperti;
using Catch::Approx;

namespace {

// 1 + sum_k P{Bin(k,1/2) < x}, summed until the terms vanish
double ssrw_V_oracle(int x)
{
    double V = 1.0;
    std::vector<double> pmf{1.0};
    for (int k = 1; k < 5000; ++k) {
        std::vector<double> nx(k + 1, 0.0);
        for (int j = 0; j < k; ++j) {
            nx[j] += 0.5 * pmf[j];
            nx[j + 1] += 0.5 * pmf[j];
        }
        pmf.swap(nx);
        double c = 0.0;
        for (int j = 0; j < x && j <= k; ++j) c += pmf[j];
        V += c;
        if (c < 1e-18) break;
    }
    return V;
}

JumpLaw uniform5() { return make_increment_law({-2, -1, 0, 1, 2}, {0.2, 0.2, 0.2, 0.2, 0.2}); }

LadderOptions mc_opts()
{
    LadderOptions o;
    o.epochs = 200000;
    o.step_cap = 20000;
    o.seed = 11;
    return o;
}

} // namespace

TEST_CASE("SSRW ladder renewal function is 2x")
{
    auto L = ladder_renewal(ssrw_law(), 100);
    CHECK(L.method == LadderRenewal::Method::exact_recursion);
    CHECK(L.V(0) == 1.0);
    CHECK(L.V(1) == 2.0);
    CHECK(L.V(2) == 4.0);
    for (int x = 1; x <= 100; ++x) CHECK(L.V(x) == Approx(2.0 * x).epsilon(1e-14));
    for (int x : {1, 2, 3, 7, 20}) CHECK(L.V(x) == Approx(ssrw_V_oracle(x)).epsilon(1e-12));
    CHECK(L.mean_ladder == 0.5);
    CHECK(L.table->slope == 2.0);
}

TEST_CASE("lazy walk: chi is Bernoulli(P{xi=-1})")
{
    auto L = ladder_renewal(make_increment_law({-1, 0, 1}, {0.25, 0.5, 0.25}), 50);
    for (int x = 1; x <= 50; ++x) CHECK(L.V(x) == Approx(4.0 * x).epsilon(1e-13));
    for (index_t x = 1; x <= 60; ++x) CHECK(L.kernel_mass(x).mean == Approx(1.0).margin(1e-9));
}

TEST_CASE("increment law validation")
{
    CHECK_THROWS_AS(make_increment_law({-1, 1}, {0.4, 0.6}), model_error);
    CHECK_THROWS_AS(make_increment_law({-0.5, 0.5}, {0.5, 0.5}), model_error);
    CHECK_THROWS_AS(make_increment_law({-1, 1}, {0.5, 0.6}), model_error);
    CHECK_THROWS_AS(make_increment_law({0}, {1.0}), model_error);
    try {
        make_increment_law({-1, 2}, {0.5, 0.5});
        FAIL("expected rejection");
    } catch (const model_error& e) {
        CHECK(std::string(e.what()).find("centred") != std::string::npos);
    }
}

TEST_CASE("conditioned SSRW kernel")
{
    auto L = ladder_renewal(ssrw_law(), 1000);
    auto w = conditioned_walk(L);
    CHECK(w.skip_free());
    // x = 1 can only move up
    Rng g(5);
    for (int i = 0; i < 1000; ++i) CHECK(conditioned_step(w, 1, g) == 2);
    CHECK(w.up(1) == 1.0);
    CHECK(w.up(10) == Approx(11.0 / 20.0).epsilon(1e-15));
    CHECK(w.down(10) == Approx(9.0 / 20.0).epsilon(1e-15));
    std::size_t ups = 0;
    const std::size_t n = 200000;
    for (std::size_t i = 0; i < n; ++i) ups += conditioned_step(w, 10, g) == 11 ? 1 : 0;
    const double ph = double(ups) / double(n);
    CHECK(std::fabs(ph - 0.55) < 3 * std::sqrt(0.55 * 0.45 / double(n)));
    for (index_t x = 1; x <= 1000; ++x) CHECK(L.kernel_mass(x).mean == Approx(1.0).margin(1e-9));
    CHECK_THROWS_AS(conditioned_step(w, 0, g), model_error);
}

TEST_CASE("conditioned SSRW moments: x m1 = m2 = sigma^2 = 1")
{
    auto L = ladder_renewal(ssrw_law(), 2000);
    auto w = conditioned_walk(L);
    std::vector<double> grid;
    for (int x = 2; x <= 1000; x += 7) grid.push_back(x);
    grid.push_back(100);
    for (auto& r : verify_moment_asymptotics(w, L, grid, rwcsp_truncation)) {
        CHECK(r.x_m1 == Approx(1.0).epsilon(1e-13));
        CHECK(r.m2 == Approx(1.0).epsilon(1e-13));
        CHECK(r.kernel_mass == Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("Monte Carlo ladder heights for a five-point law")
{
    auto L = ladder_renewal(uniform5(), 12000, mc_opts());
    CHECK(L.method == LadderRenewal::Method::mc);
    CHECK(L.V(0) == 1.0);
    CHECK(L.capped < L.epochs / 100);
    double prev = 0.0;
    for (int x = 0; x <= 12000; ++x) {
        CHECK(L.V(x) >= prev);
        prev = L.V(x);
    }
    CHECK(L.V(12000) / 12000 == Approx(1.0 / L.mean_ladder).epsilon(1e-3));
    // kernel normalisation up to Monte Carlo error
    for (index_t x : {1, 2, 3, 5, 10, 50, 400}) {
        auto km = L.kernel_mass(x);
        INFO(x << " " << km.mean << " +- " << km.stderr_);
        CHECK(std::fabs(km.mean - 1.0) <= 3 * km.stderr_ + 1e-12);
    }
    // increments stabilise at the slope 1/E chi
    CHECK(L.max_unit_increment(6000) == Approx(1.0 / L.mean_ladder).epsilon(1e-6));
    CHECK(L.fitted_cV(4) < 2.0 / L.mean_ladder);

    auto w = conditioned_walk(L);
    CHECK_FALSE(w.skip_free());
    auto rows = verify_moment_asymptotics(w, L, {1000}, rwcsp_truncation);
    CHECK(rows[0].x_m1_ratio == Approx(1.0).epsilon(0.1));
    CHECK(rows[0].m2_ratio == Approx(1.0).epsilon(0.01));
}

TEST_CASE("MC ladder renewal is deterministic in seed and threads")
{
    auto o = mc_opts();
    o.epochs = 20000;
    auto a = ladder_renewal(uniform5(), 100, o);
    o.threads = 3;
    auto b = ladder_renewal(uniform5(), 100, o);
    CHECK(a.table->v == b.table->v);
    CHECK(a.stderr_ == b.stderr_);
}

TEST_CASE("conditioned walks stay positive")
{
    auto L = ladder_renewal(uniform5(), 3000, mc_opts());
    auto w = conditioned_walk(L);
    auto t = simulate_path(w, 1.0, 1e18, 1'000'000, 3);
    CHECK(t.steps == 1'000'000);
    double lo = 1e300;
    for (double x : t.states) lo = std::min(lo, x);
    CHECK(lo >= 1.0);
    // a step from k looks up V(k+2); lookups past the table are reported
    const double hi = *std::max_element(t.states.begin(), t.states.end() - 1);
    CHECK(L.extrapolated() == (hi + 2 > 3000));
}

TEST_CASE("renewal measure of the conditioned SSRW is 2k")
{
    auto L = ladder_renewal(ssrw_law(), 20000);
    auto w = conditioned_walk(L);
    NNGreen g(*w.nn_spec(), 900);
    for (index_t k : {1, 10, 200, 400, 800}) CHECK(g(1, k) == Approx(2.0 * double(k)).epsilon(1e-10));
    McOptions o;
    o.n_paths = 4000;
    o.seed = 17;
    for (double k : {200.0, 400.0, 800.0}) {
        auto e = estimate_H(w, 1.0, {k - 1, k}, o);
        INFO(k << " " << e.mean_visits << " +- " << e.stderr_);
        CHECK(e.mean_visits == Approx(2 * k).epsilon(0.1));
        CHECK(std::fabs(e.mean_visits - 2 * k) <= 3 * e.stderr_);
    }
}

TEST_CASE("extrapolation past the grid is flagged")
{
    auto L = ladder_renewal(ssrw_law(), 10);
    CHECK_FALSE(L.extrapolated());
    CHECK(L.V(10) == 20.0);
    CHECK_FALSE(L.extrapolated());
    CHECK(L.V(15) == 30.0);
    CHECK(L.extrapolated());
}
