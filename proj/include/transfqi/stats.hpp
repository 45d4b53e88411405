#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "transfqi/errors.hpp"

namespace transfqi {

// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double p) {
    if (v.empty()) throw ValidationError("quantile: empty sample");
    std::sort(v.begin(), v.end());
    if (p <= 0.0) return v.front();
    if (p >= 1.0) return v.back();
    const double idx = p * (v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const double frac = idx - lo;
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }

struct BoxStats {
    double median = 0.0, q1 = 0.0, q3 = 0.0;
    double lo_whisker = 0.0, hi_whisker = 0.0; // 1.5*IQR rule
    int n = 0;
};

inline BoxStats box_stats(const std::vector<double>& v) {
    BoxStats b;
    b.n = static_cast<int>(v.size());
    b.median = quantile(v, 0.5);
    b.q1 = quantile(v, 0.25);
    b.q3 = quantile(v, 0.75);
    const double iqr = b.q3 - b.q1;
    const double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
    b.lo_whisker = b.q3;
    b.hi_whisker = b.q1;
    bool any = false;
    for (double x : v)
        if (x >= lo_fence && x <= hi_fence) {
            if (!any) {
                b.lo_whisker = b.hi_whisker = x;
                any = true;
            } else {
                b.lo_whisker = std::min(b.lo_whisker, x);
                b.hi_whisker = std::max(b.hi_whisker, x);
            }
        }
    return b;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// One-sided Wilcoxon signed-rank test (normal approximation with tie
// correction and continuity correction). Small p supports the alternative
// that x tends to be below y. Zero differences are dropped.
inline double wilcoxon_signed_rank_less(const std::vector<double>& x,
                                        const std::vector<double>& y) {
    if (x.size() != y.size()) throw ValidationError("wilcoxon: length mismatch");
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] != y[i]) d.push_back(x[i] - y[i]);
    const std::size_t n = d.size();
    if (n == 0) return 1.0;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });

    std::vector<double> rank(n);
    double tie_term = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const double avg_rank = 0.5 * (i + j) + 1.0;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg_rank;
        i = j + 1;
    }

    double w_plus = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        if (d[k] > 0.0) w_plus += rank[k];

    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) return w_plus < mean ? 0.0 : 1.0;
    const double z = (w_plus - mean + 0.5) / std::sqrt(var);
    return normal_cdf(z);
}

} // namespace transfqi
