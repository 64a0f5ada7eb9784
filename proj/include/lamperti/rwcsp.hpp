#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "chain.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace lamperti {

// Integer-valued law with mean 0 and positive finite variance.
inline void check_increment_law(const JumpLaw& law)
{
    if (law.atoms.empty()) throw model_error("increment law has no atoms");
    KahanSum tot, m1, m2;
    for (auto& a : law.atoms) {
        if (a.value != std::floor(a.value)) throw model_error("increment law must live on the integers");
        if (!(a.prob >= 0.0)) throw model_error("increment law has a negative probability");
        tot.add(a.prob);
        m1.add(a.value * a.prob);
        m2.add(a.value * a.value * a.prob);
    }
    if (std::fabs(tot.value() - 1.0) > 1e-12) throw model_error("increment law probabilities must sum to 1");
    if (std::fabs(m1.value()) > 1e-12)
        throw model_error("increment law must be centred: a walk with nonzero mean drifts to one side instead of "
                          "oscillating, and the conditioned walk is not defined (mean " +
                          std::to_string(m1.value()) + ")");
    if (!(m2.value() > 0.0)) throw model_error("increment law is degenerate (zero variance)");
}

inline double law_variance(const JumpLaw& law)
{
    KahanSum m2;
    for (auto& a : law.atoms) m2.add(a.value * a.value * a.prob);
    return m2.value();
}

inline JumpLaw make_increment_law(std::vector<double> values, std::vector<double> probs)
{
    if (values.size() != probs.size()) throw model_error("increment law: values and probs differ in length");
    JumpLaw law;
    for (std::size_t i = 0; i < values.size(); ++i) law.atoms.push_back({values[i], probs[i]});
    law.normalize_order();
    check_increment_law(law);
    return law;
}

inline JumpLaw ssrw_law() { return make_increment_law({-1.0, 1.0}, {0.5, 0.5}); }

struct LadderOptions {
    std::size_t epochs = 1'000'000;
    std::size_t step_cap = 100'000; // per epoch
    std::size_t batches = 20;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

struct LadderRenewal {
    enum class Method { exact_recursion, mc };
    Method method = Method::exact_recursion;
    JumpLaw increment;
    std::vector<double> ladder_law; // P{chi = j}, j = 0..d
    double mean_ladder = 0.0;
    double mean_ladder_stderr = 0.0;
    std::shared_ptr<const HarmonicTable> table;
    std::vector<double> stderr_; // per grid point, 0 when exact
    std::size_t epochs = 0;
    // epochs that hit the step cap; their heights were redrawn from
    // completed epochs that climbed as high
    std::size_t capped = 0;
    std::vector<std::shared_ptr<const HarmonicTable>> batch_tables;

    double V(double x) const { return (*table)(x); }
    double grid_max() const { return table->last(); }
    bool extrapolated() const { return table->extrapolated.load(); }

    // sum_y V(y)/V(x) P{x+xi=y, y>0} with a batch stderr (0 when exact)
    MeanStderr kernel_mass(index_t x) const
    {
        ConditionedWalk w{increment, table};
        MeanStderr r;
        r.mean = w.raw_mass(x);
        if (!batch_tables.empty()) {
            std::vector<double> v;
            for (auto& t : batch_tables) v.push_back(ConditionedWalk{increment, t}.raw_mass(x));
            r.stderr_ = mean_stderr(v).stderr_;
            r.n = v.size();
        }
        return r;
    }
    // max_x (V(x+1) - V(x)) over the grid
    double max_unit_increment(index_t from = 0) const
    {
        double m = 0.0;
        for (std::size_t x = std::size_t(std::max<index_t>(from, 0)); x + 1 < table->v.size(); ++x)
            m = std::max(m, table->v[x + 1] - table->v[x]);
        return m;
    }
    // smallest c with |V(x+y) - V(x)| <= c (|y|+1) over grid pairs, |y| <= ymax
    double fitted_cV(index_t ymax) const
    {
        double c = 0.0;
        const auto& v = table->v;
        for (std::size_t x = 0; x < v.size(); ++x)
            for (index_t y = -ymax; y <= ymax; ++y) {
                const index_t z = index_t(x) + y;
                if (z < 0 || z >= index_t(v.size())) continue;
                c = std::max(c, std::fabs(v[std::size_t(z)] - v[x]) / (std::fabs(double(y)) + 1.0));
            }
        return c;
    }
};

namespace detail {

// V(0) = 1, V(x) = sum_{n<x} u(n) with u the renewal density of the
// ladder law a (a[0] < 1).
inline std::vector<double> renewal_V(const std::vector<double>& a, std::size_t n)
{
    if (!(a[0] < 1.0)) throw model_error("ladder law puts all mass at 0");
    std::vector<double> u(n + 1, 0.0), V(n + 1, 0.0);
    for (std::size_t k = 0; k <= n; ++k) {
        double s = k == 0 ? 1.0 : 0.0;
        for (std::size_t j = 1; j < a.size() && j <= k; ++j) s += a[j] * u[k - j];
        u[k] = s / (1.0 - a[0]);
    }
    V[0] = 1.0;
    double c = 0.0;
    for (std::size_t x = 1; x <= n; ++x) {
        c += u[x - 1];
        V[x] = c;
    }
    return V;
}

inline double ladder_mean(const std::vector<double>& a)
{
    double m = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) m += double(j) * a[j];
    return m;
}

inline std::shared_ptr<const HarmonicTable> make_table(const std::vector<double>& a, std::size_t n)
{
    auto t = std::make_shared<HarmonicTable>();
    t->v = renewal_V(a, n);
    t->slope = 1.0 / ladder_mean(a);
    return t;
}

} // namespace detail

// V on the lattice 0..grid_max. Left-continuous laws (jumps >= -1) have
// chi in {0,1} with P{chi=1} = P{xi=-1}, so V comes from the renewal
// recursion exactly. Otherwise the ladder law is estimated from
// weak-descending ladder epochs and pushed through the same recursion.
inline LadderRenewal ladder_renewal(const JumpLaw& law, std::size_t grid_max, const LadderOptions& o = {})
{
    check_increment_law(law);
    if (grid_max < 2) throw std::invalid_argument("ladder_renewal: grid_max must be at least 2");
    LadderRenewal L;
    L.increment = law;
    const double dmin = law.atoms.front().value;
    const std::size_t d = std::size_t(-dmin);
    if (dmin >= -1.0) {
        L.method = LadderRenewal::Method::exact_recursion;
        L.ladder_law = {1.0 - law.pmf(-1.0), law.pmf(-1.0)};
        L.mean_ladder = detail::ladder_mean(L.ladder_law);
        L.table = detail::make_table(L.ladder_law, grid_max);
        L.stderr_.assign(grid_max + 1, 0.0);
        return L;
    }

    L.method = LadderRenewal::Method::mc;
    if (o.epochs < o.batches || o.batches < 2) throw std::invalid_argument("ladder_renewal: need epochs >= batches >= 2");
    const double climb = 10.0 * double(d);
    struct Epoch {
        int chi = -1; // -1 when capped
        bool high = false;
    };
    std::vector<Epoch> ep(o.epochs);
    parallel_for(o.epochs, o.threads, [&](std::size_t i) {
        Rng g(o.seed, i);
        double s = 0.0, top = 0.0;
        for (std::size_t n = 0; n < o.step_cap; ++n) {
            s += law.sample(g);
            if (s <= 0.0) {
                ep[i].chi = int(-s);
                ep[i].high = top >= climb;
                return;
            }
            top = std::max(top, s);
        }
        ep[i].high = true;
    });
    // capped epochs climbed far; their height law is that of completed
    // epochs which also climbed high
    std::vector<int> high;
    for (auto& e : ep)
        if (e.chi >= 0 && e.high) high.push_back(e.chi);
    for (std::size_t i = 0; i < ep.size(); ++i) {
        if (ep[i].chi >= 0) continue;
        ++L.capped;
        if (high.empty()) throw std::runtime_error("ladder_renewal: every epoch hit the step cap; raise step_cap");
        Rng g(o.seed ^ 0x5bd1e995ULL, i);
        ep[i].chi = high[std::size_t(g.uniform() * double(high.size()))];
    }
    L.epochs = o.epochs;
    auto law_of = [&](std::size_t b0, std::size_t b1) {
        std::vector<double> a(d + 1, 0.0);
        for (std::size_t i = b0; i < b1; ++i) a[std::size_t(ep[i].chi)] += 1.0;
        for (auto& v : a) v /= double(b1 - b0);
        return a;
    };
    L.ladder_law = law_of(0, ep.size());
    L.mean_ladder = detail::ladder_mean(L.ladder_law);
    L.table = detail::make_table(L.ladder_law, grid_max);
    std::vector<double> means;
    const std::size_t B = o.batches, per = o.epochs / B;
    for (std::size_t b = 0; b < B; ++b) {
        auto a = law_of(b * per, (b + 1) * per);
        means.push_back(detail::ladder_mean(a));
        L.batch_tables.push_back(detail::make_table(a, grid_max));
    }
    L.mean_ladder_stderr = mean_stderr(means).stderr_;
    L.stderr_.assign(grid_max + 1, 0.0);
    std::vector<double> col(B);
    for (std::size_t x = 0; x <= grid_max; ++x) {
        for (std::size_t b = 0; b < B; ++b) col[b] = L.batch_tables[b]->v[x];
        L.stderr_[x] = mean_stderr(col).stderr_;
    }
    return L;
}

inline ChainModel conditioned_walk(const LadderRenewal& V)
{
    std::map<std::string, double> p{{"sigma2", law_variance(V.increment)}};
    return ChainModel("conditioned_walk", p, ConditionedWalk{V.increment, V.table});
}

inline index_t conditioned_step(const ChainModel& walk, index_t x, Rng& g)
{
    if (!std::holds_alternative<ConditionedWalk>(walk.family()))
        throw model_error("conditioned_step: model is not a conditioned walk");
    if (x <= 0) throw model_error("conditioned_step: state must be positive");
    return walk.step(x, g);
}

struct MomentRow {
    double x = 0.0;
    double s = 0.0;
    double m1 = 0.0;
    double m2 = 0.0;
    double x_m1 = 0.0;
    double x_m1_ratio = 0.0; // x m1 / sigma^2
    double m2_ratio = 0.0;   // m2 / sigma^2
    double kernel_mass = 0.0;
    double kernel_mass_stderr = 0.0;
};

// Truncated moments of the conditioned kernel by exact summation.
inline std::vector<MomentRow> verify_moment_asymptotics(const ChainModel& walk, const LadderRenewal& V,
                                                        const std::vector<double>& x_grid,
                                                        const std::function<double(double)>& s)
{
    const double s2 = law_variance(V.increment);
    std::vector<MomentRow> out;
    for (double x : x_grid) {
        if (!(x >= 1.0) || x != std::floor(x)) throw std::invalid_argument("verify_moment_asymptotics: grid must be positive integers");
        MomentRow r;
        r.x = x;
        r.s = s(x);
        auto tm = moments_of(walk.law(x), r.s);
        r.m1 = tm.m1;
        r.m2 = tm.m2;
        r.x_m1 = x * tm.m1;
        r.x_m1_ratio = r.x_m1 / s2;
        r.m2_ratio = tm.m2 / s2;
        auto km = V.kernel_mass(index_t(x));
        r.kernel_mass = km.mean;
        r.kernel_mass_stderr = km.stderr_;
        out.push_back(r);
    }
    return out;
}

// default truncation for the conditioned-walk runs
inline double rwcsp_truncation(double x) { return x / std::log(M_E + x); }

} // namespace lamperti
