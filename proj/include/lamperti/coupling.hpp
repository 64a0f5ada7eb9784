#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "chain.hpp"
#include "green_exact.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "renewal_mc.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace lamperti {

// inverse_cdf: one uniform per step through both jump cdfs.
// common_draws: used when a law is only available by sampling; both
//   coordinates are stepped from copies of one per-step generator.
enum class CouplingScheme { inverse_cdf, common_draws };

inline const char* to_string(CouplingScheme s) { return s == CouplingScheme::inverse_cdf ? "inverse_cdf" : "common_draws"; }

// Lebesgue measure of {u : F^-1(u) != G^-1(u)}
inline double quantile_mismatch(const JumpLaw& a, const JumpLaw& b)
{
    std::size_t i = 0, j = 0;
    double lo = 0.0, ca = 0.0, cb = 0.0, miss = 0.0;
    while (i < a.atoms.size() && j < b.atoms.size()) {
        const double ea = ca + a.atoms[i].prob, eb = cb + b.atoms[j].prob;
        const double hi = std::min(ea, eb);
        if (hi > lo && a.atoms[i].value != b.atoms[j].value) miss += hi - lo;
        lo = std::max(lo, hi);
        if (ea <= hi) {
            ca = ea;
            ++i;
        }
        if (eb <= hi) {
            cb = eb;
            ++j;
        }
    }
    return std::clamp(miss, 0.0, 1.0);
}

struct CoupledPair {
    ChainModel base;
    ChainModel modified;
    // mismatch_prob(x) <= p(x) v(x); p decreasing and integrable, v
    // decreasing and positive
    std::function<double(double)> p;
    std::function<double(double)> v;

    CoupledPair(ChainModel b, ChainModel m, std::function<double(double)> p_, std::function<double(double)> v_)
        : base(std::move(b)), modified(std::move(m)), p(std::move(p_)), v(std::move(v_))
    {
        if (!p || !v) throw std::invalid_argument("coupled pair: p and v are required");
        if (base.span() != modified.span()) throw model_error("coupled pair: the two chains live on different lattices");
        for (index_t k = 0; k < 64; ++k)
            if (base.position(k) != modified.position(k))
                throw model_error("coupled pair: the two chains live on different lattices");
    }

    CouplingScheme scheme() const
    {
        return base.exact_law() && modified.exact_law() ? CouplingScheme::inverse_cdf : CouplingScheme::common_draws;
    }
    double pv(double x) const { return p(x) * v(x); }

    // exact under inverse_cdf (stderr 0), Monte Carlo otherwise
    MeanStderr mismatch_prob(double x, std::size_t samples = 100000, std::uint64_t seed = 1) const
    {
        const index_t k = base.index_of(x);
        MeanStderr r;
        if (scheme() == CouplingScheme::inverse_cdf) {
            r.mean = quantile_mismatch(base.law_at_index(k), modified.law_at_index(k));
            return r;
        }
        if (samples == 0) throw std::invalid_argument("mismatch_prob: need at least one sample");
        std::size_t miss = 0;
        for (std::size_t i = 0; i < samples; ++i) {
            Rng g(seed, i);
            const std::uint64_t key = g();
            Rng gy(key, 1), gz(key, 1);
            miss += base.step(k, gy) != modified.step(k, gz) ? 1 : 0;
        }
        r.n = samples;
        r.mean = double(miss) / double(samples);
        r.sd = std::sqrt(r.mean * (1.0 - r.mean));
        r.stderr_ = r.sd / std::sqrt(double(samples));
        return r;
    }
};

namespace detail {

// Steps both coordinates with shared randomness. Laws for indices up to
// kmax are cached.
class CoupledStepper {
public:
    CoupledStepper(const CoupledPair& pair, index_t kmax) : pair_(pair), scheme_(pair.scheme())
    {
        if (scheme_ == CouplingScheme::inverse_cdf) {
            span_ = pair.base.span();
            kmax = std::max<index_t>(kmax, 0);
            ly_.reserve(std::size_t(kmax + 1));
            lz_.reserve(std::size_t(kmax + 1));
            for (index_t k = 0; k <= kmax; ++k) {
                ly_.push_back(pair.base.law_at_index(k));
                lz_.push_back(pair.modified.law_at_index(k));
            }
        }
    }

    std::pair<index_t, index_t> step(index_t ky, index_t kz, Rng& g) const
    {
        if (scheme_ == CouplingScheme::inverse_cdf) {
            const double u = g.uniform();
            return {move(ly_, pair_.base, ky, u), move(lz_, pair_.modified, kz, u)};
        }
        const std::uint64_t key = g();
        Rng gy(key, 1), gz(key, 1);
        return {pair_.base.step(ky, gy), pair_.modified.step(kz, gz)};
    }

private:
    index_t move(const std::vector<JumpLaw>& cache, const ChainModel& m, index_t k, double u) const
    {
        const double j = std::size_t(k) < cache.size() ? cache[std::size_t(k)].quantile(u) : m.law_at_index(k).quantile(u);
        return k + index_t(std::lround(j / span_));
    }

    const CoupledPair& pair_;
    CouplingScheme scheme_;
    double span_ = 1.0;
    std::vector<JumpLaw> ly_, lz_;
};

} // namespace detail

struct CouplingOptions {
    std::size_t n_paths = 10000;
    // step horizon per path
    std::size_t horizon = 10'000'000;
    // paths stop once coupled above this level; default from tail_mass
    std::optional<double> stop_level;
    double tail_mass = 1e-4;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

// smallest z (to bisection accuracy) with int_z^inf p < mass
inline double tail_level(const std::function<double(double)>& p, double mass)
{
    if (!(mass > 0.0)) throw std::invalid_argument("tail_level: mass must be positive");
    auto tail = [&](double z) {
        try {
            return integrate_to_inf([&](double x) { return p(x); }, z, {1e-6, 1e-15}).value;
        } catch (const quadrature_error& e) {
            return e.best_value;
        }
    };
    if (tail(0.0) < mass) return 0.0;
    double hi = 1.0;
    while (!(tail(hi) < mass)) {
        hi *= 2.0;
        if (hi > 1e12) throw std::invalid_argument("tail_level: p has too heavy a tail; give a stop level");
    }
    double lo = hi / 2.0;
    if (hi == 1.0) lo = 0.0;
    for (int it = 0; it < 60 && hi - lo > 1e-9 * hi; ++it) {
        const double m = 0.5 * (lo + hi);
        (tail(m) < mass ? hi : lo) = m;
    }
    return hi;
}

struct CouplingEstimate {
    double prob = 1.0;
    double stderr_ = 0.0;
    std::size_t n_paths = 0;
    std::size_t horizon = 0;
    double stop_level = 0.0;
    // above the stop level the chains cannot split and returns to it are
    // drawn exactly, so prob covers all times up to the horizon
    bool exact_returns = false;
    // paths still coupled below the stop level at the horizon
    std::size_t horizon_hits = 0;
    CouplingScheme scheme = CouplingScheme::inverse_cdf;

    double decoupling_freq() const { return 1.0 - prob; }
};

// P{Y_n = Z_n for n <= horizon} with both chains started at y0. A path
// ends coupled once above the stop level; when p v vanishes past that level
// and the base chain is skip-free, returns below it are drawn from the exact
// hitting probabilities instead.
inline CouplingEstimate couple_paths(const CoupledPair& pair, double y0, const CouplingOptions& o = {})
{
    if (o.n_paths == 0) throw std::invalid_argument("couple_paths: n_paths must be at least 1");
    if (!(y0 >= 0.0)) throw std::invalid_argument("couple_paths: y0 must be a state");
    CouplingEstimate r;
    r.n_paths = o.n_paths;
    r.horizon = o.horizon;
    r.scheme = pair.scheme();
    const double L = o.stop_level ? *o.stop_level : tail_level(pair.p, o.tail_mass);
    r.stop_level = L;
    const index_t k0 = pair.base.index_of(y0);
    const index_t kL = pair.base.index_at_or_below(L);
    r.exact_returns = kL >= 0 && pair.base.skip_free() && pair.pv(pair.base.position(kL + 1)) == 0.0;

    double enter = 1.0, q = 0.0;
    if (r.exact_returns) {
        NNGreen green(*pair.base.nn_spec(), std::max(kL + 1, k0));
        q = green.hit_prob(kL + 1, kL);
        if (k0 > kL) enter = green.hit_prob(k0, kL);
    }
    const detail::CoupledStepper st(pair, std::max<index_t>(kL + 4, 0));

    // 1 coupled, 0 split; 2 coupled at the horizon
    std::vector<int> out(o.n_paths, 1);
    parallel_for(o.n_paths, o.threads, [&](std::size_t i) {
        Rng g(o.seed, i);
        index_t k = k0;
        if (k0 > kL) {
            if (!r.exact_returns || g.uniform() >= enter) return;
            k = kL;
        }
        for (std::size_t n = 0;; ++n) {
            if (n >= o.horizon) {
                out[i] = 2;
                return;
            }
            auto [y, z] = st.step(k, k, g);
            if (y != z) {
                out[i] = 0;
                return;
            }
            k = y;
            if (k > kL) {
                if (!r.exact_returns || g.uniform() >= q) return;
                k = kL;
            }
        }
    });
    std::size_t ok = 0;
    for (int v : out) {
        ok += v != 0 ? 1 : 0;
        r.horizon_hits += v == 2 ? 1 : 0;
    }
    r.prob = double(ok) / double(o.n_paths);
    r.stderr_ = std::sqrt(r.prob * (1.0 - r.prob) / double(o.n_paths));
    return r;
}

// Renewal-measure cell: mean visits of (a, b] with its stderr.
struct HCell {
    double a = 0.0;
    double b = 0.0;
    double H = 0.0;
    double stderr_ = 0.0;
};

// Per lattice state from the series Green function; skip-free chains only.
inline std::vector<HCell> h_cells_exact(const ChainModel& model, double y0, double upto, double tol = 1e-10)
{
    auto spec = model.nn_spec();
    if (!spec) throw model_error("h_cells_exact: " + model.family_name() + " is not skip-free");
    const index_t k0 = model.index_of(y0), kU = model.index_at_or_below(upto) + 1;
    NNGreen green(*spec, std::max(k0, kU), tol);
    const double h = 0.5 * model.span();
    std::vector<HCell> out;
    for (index_t k = 0; k <= kU; ++k) {
        const double x = model.position(k);
        out.push_back({x - h, x + h, green(k0, k), 0.0});
    }
    return out;
}

// Cells (-w,0], (0,w], ... up to upto from one Monte Carlo trajectory set.
inline std::vector<HCell> h_cells_mc(const ChainModel& model, double y0, double upto, double width, const McOptions& o)
{
    if (!(width > 0.0)) throw std::invalid_argument("h_cells_mc: width must be positive");
    std::vector<Interval> iv{{-width, 0.0}};
    while (iv.back().b < upto) iv.push_back({iv.back().b, iv.back().b + width});
    std::vector<HCell> out;
    for (auto& e : estimate_H_profile(model, y0, iv, o)) out.push_back({e.a, e.b, e.mean_visits, e.stderr_});
    return out;
}

struct DecouplingBound {
    double value = 0.0;
    // cell errors added linearly, since cells share paths
    double stderr_ = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    // true when p v vanishes past hi, so nothing beyond the grid can split
    bool complete = false;
};

// sum over cells of sup_{cell} p v * H(cell), with the sup taken at the
// lowest lattice state in the cell (p and v are decreasing). The grid must
// be contiguous and cover every state in [0, upto].
inline DecouplingBound decoupling_bound(const CoupledPair& pair, double y0, const std::vector<HCell>& H, double upto)
{
    if (!(y0 >= 0.0)) throw std::invalid_argument("decoupling_bound: y0 must be a state");
    if (H.empty()) throw std::invalid_argument("decoupling_bound: H grid is empty, it must cover [0, " + std::to_string(upto) + "]");
    for (std::size_t i = 1; i < H.size(); ++i)
        if (H[i].a != H[i - 1].b) throw std::invalid_argument("decoupling_bound: H grid has a gap or overlap at " + std::to_string(H[i].a));
    if (!(H.front().a < 0.0) || H.back().b < upto)
        throw std::invalid_argument("decoupling_bound: H grid (" + std::to_string(H.front().a) + ", " +
                                    std::to_string(H.back().b) + "] does not cover [0, " + std::to_string(upto) + "]");
    DecouplingBound r;
    r.lo = H.front().a;
    r.hi = H.back().b;
    KahanSum val, err;
    const ChainModel& m = pair.base;
    for (auto& c : H) {
        const index_t k = c.a < 0.0 ? 0 : m.index_at_or_below(c.a) + 1;
        const double x = m.position(k);
        if (x > c.b) continue;
        const double w = pair.pv(x);
        val.add(w * c.H);
        err.add(w * c.stderr_);
    }
    r.value = val.value();
    r.stderr_ = err.value();
    r.complete = pair.pv(m.position(m.index_at_or_below(r.hi) + 1)) == 0.0;
    return r;
}

struct TransferEstimate {
    MeanStderr base;
    MeanStderr modified;
    MeanStderr diff; // modified - base, per path
    double split_fraction = 0.0;
    double escape_level = 0.0;
    std::size_t horizon_hits = 0;

    double rel_diff() const { return base.mean == 0.0 ? 0.0 : diff.mean / base.mean; }
};

// Visits of (a, b] by both coordinates of one coupled trajectory set, each
// counted up to its first passage above the escape level.
inline TransferEstimate coupled_renewal(const CoupledPair& pair, double y0, Interval iv, double escape_level,
                                        const CouplingOptions& o = {})
{
    if (o.n_paths < 2) throw std::invalid_argument("coupled_renewal: need at least two paths");
    if (!(iv.b > iv.a)) throw std::invalid_argument("coupled_renewal: interval needs b > a");
    if (escape_level < iv.b) throw std::invalid_argument("coupled_renewal: escape level below the interval");
    const ChainModel& m = pair.base;
    const index_t kE = m.index_at_or_below(escape_level);
    const detail::CoupledStepper st(pair, kE + 4);
    std::vector<double> yb(o.n_paths), ym(o.n_paths), dd(o.n_paths);
    std::vector<char> split(o.n_paths, 0), hit(o.n_paths, 0);
    parallel_for(o.n_paths, o.threads, [&](std::size_t i) {
        Rng g(o.seed, i);
        index_t ky = m.index_of(y0), kz = ky;
        std::uint64_t cy = 0, cz = 0;
        // each coordinate counts until its own first passage
        bool dy = false, dz = false;
        for (std::size_t n = 0;; ++n) {
            const double xy = m.position(ky), xz = m.position(kz);
            dy = dy || ky > kE;
            dz = dz || kz > kE;
            cy += (!dy && xy > iv.a && xy <= iv.b) ? 1 : 0;
            cz += (!dz && xz > iv.a && xz <= iv.b) ? 1 : 0;
            if (dy && dz) break;
            if (n >= o.horizon) {
                hit[i] = 1;
                break;
            }
            std::tie(ky, kz) = st.step(ky, kz, g);
            if (ky != kz) split[i] = 1;
        }
        yb[i] = double(cy);
        ym[i] = double(cz);
        dd[i] = double(cz) - double(cy);
    });
    TransferEstimate r;
    r.base = mean_stderr(yb);
    r.modified = mean_stderr(ym);
    r.diff = mean_stderr(dd);
    r.escape_level = escape_level;
    std::size_t s = 0;
    for (std::size_t i = 0; i < o.n_paths; ++i) {
        s += split[i] ? 1 : 0;
        r.horizon_hits += hit[i] ? 1 : 0;
    }
    r.split_fraction = double(s) / double(o.n_paths);
    return r;
}

// Both coordinates for n steps, for checking marginals.
inline std::pair<std::vector<double>, std::vector<double>> coupled_trajectory(const CoupledPair& pair, double y0,
                                                                              std::size_t n, std::uint64_t seed,
                                                                              std::uint64_t path = 0)
{
    const detail::CoupledStepper st(pair, 0);
    Rng g(seed, path);
    index_t ky = pair.base.index_of(y0), kz = ky;
    std::pair<std::vector<double>, std::vector<double>> out;
    out.first.push_back(pair.base.position(ky));
    out.second.push_back(pair.modified.position(kz));
    for (std::size_t i = 0; i < n; ++i) {
        std::tie(ky, kz) = st.step(ky, kz, g);
        out.first.push_back(pair.base.position(ky));
        out.second.push_back(pair.modified.position(kz));
    }
    return out;
}

} // namespace lamperti
