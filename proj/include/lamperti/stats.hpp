#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace lamperti {

// Neumaier summation
class KahanSum {
public:
    void add(double v)
    {
        const double t = sum_ + v;
        if (std::fabs(sum_) >= std::fabs(v))
            c_ += (sum_ - t) + v;
        else
            c_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + c_; }

private:
    double sum_ = 0.0;
    double c_ = 0.0;
};

struct MeanStderr {
    double mean = 0.0;
    double stderr_ = 0.0;
    double sd = 0.0;
    std::size_t n = 0;
};

// Two-pass over values kept in path order; same input order gives the same bits.
inline MeanStderr mean_stderr(const std::vector<double>& v)
{
    MeanStderr r;
    r.n = v.size();
    if (v.empty()) return r;
    KahanSum s;
    for (double x : v) s.add(x);
    r.mean = s.value() / static_cast<double>(v.size());
    if (v.size() > 1) {
        KahanSum q;
        for (double x : v) q.add((x - r.mean) * (x - r.mean));
        r.sd = std::sqrt(q.value() / static_cast<double>(v.size() - 1));
        r.stderr_ = r.sd / std::sqrt(static_cast<double>(v.size()));
    }
    return r;
}

} // namespace lamperti
