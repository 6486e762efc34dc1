#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "facespace/error.hpp"

namespace facespace {

// Pearson product-moment correlation. Throws DegenerateError when either input
// has zero variance.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ConfigError("pearson: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw DegenerateError("pearson: need at least 2 observations");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateError("pearson: zero-variance input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int max_iter = 100000;
    constexpr double eps = 1e-16;
    constexpr double tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

} // namespace detail

// Regularized incomplete beta I_x(a, b). `y` must equal 1 - x; passing it
// separately keeps full precision when x is close to 1.
inline double regularized_beta(double a, double b, double x, double y) {
    if (x <= 0.0) return 0.0;
    if (y <= 0.0) return 1.0;
    const double log_front =
        a * std::log(x) + b * std::log(y) - (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * detail::beta_continued_fraction(b, a, y) / b;
}

inline double regularized_beta(double a, double b, double x) { return regularized_beta(a, b, x, 1.0 - x); }

// Upper tail P(F > f) of the F distribution with (d1, d2) degrees of freedom.
inline double f_sf(double f, double d1, double d2) {
    if (!(d1 > 0.0) || !(d2 > 0.0)) throw ConfigError("f_sf: degrees of freedom must be positive");
    if (std::isnan(f)) throw ConfigError("f_sf: NaN statistic");
    if (f <= 0.0) return 1.0;
    if (std::isinf(f)) return 0.0;
    const double denom = d2 + d1 * f;
    return std::clamp(regularized_beta(0.5 * d2, 0.5 * d1, d2 / denom, d1 * f / denom), 0.0, 1.0);
}

// Error term used by one_way_anova.
enum class ErrorTerm {
    pooled, // classical within-group pooled sums of squares
    welch   // Welch's heteroscedastic F; every group needs >= 2 non-constant observations
};

struct FTest {
    double f_ratio = 0.0;
    double df_between = 0.0;
    double df_within = 0.0;
    double p_value = 1.0;
    double r_squared = 0.0;
    double ss_between = 0.0;
    double ss_within = 0.0;
};

// One-way ANOVA of `values` grouped by non-negative integer codes. Singleton
// groups contribute to the between-group sum of squares only.
inline FTest one_way_anova(std::span<const double> values, std::span<const std::int32_t> groups,
                           ErrorTerm error_term = ErrorTerm::pooled) {
    if (values.size() != groups.size()) throw ConfigError("one_way_anova: values/groups length mismatch");
    const std::size_t n = values.size();
    std::int32_t max_code = -1;
    for (auto g : groups) {
        if (g < 0) throw ConfigError("one_way_anova: negative group code");
        max_code = std::max(max_code, g);
    }
    const auto n_codes = static_cast<std::size_t>(max_code + 1);
    std::vector<double> sum(n_codes, 0.0);
    std::vector<std::size_t> count(n_codes, 0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sum[groups[i]] += values[i];
        ++count[groups[i]];
        total += values[i];
    }
    std::size_t k = 0;
    for (auto c : count) k += c > 0;
    if (k < 2) throw DegenerateError("one_way_anova: need at least 2 non-empty groups");
    if (n <= k) throw DegenerateError("one_way_anova: need a group with at least 2 observations");

    const double grand = total / static_cast<double>(n);
    std::vector<double> mean(n_codes, 0.0);
    for (std::size_t g = 0; g < n_codes; ++g)
        if (count[g] > 0) mean[g] = sum[g] / static_cast<double>(count[g]);

    FTest t;
    std::vector<double> ss_group(n_codes, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = values[i] - mean[groups[i]];
        ss_group[groups[i]] += d * d;
    }
    for (std::size_t g = 0; g < n_codes; ++g) {
        if (count[g] == 0) continue;
        const double d = mean[g] - grand;
        t.ss_between += static_cast<double>(count[g]) * d * d;
        t.ss_within += ss_group[g];
    }
    const double ss_total = t.ss_between + t.ss_within;
    if (!(ss_total > 0.0)) throw DegenerateError("one_way_anova: all observations identical");
    t.r_squared = std::clamp(t.ss_between / ss_total, 0.0, 1.0);
    t.df_between = static_cast<double>(k - 1);

    if (error_term == ErrorTerm::pooled) {
        t.df_within = static_cast<double>(n - k);
        if (t.ss_within == 0.0) {
            t.f_ratio = std::numeric_limits<double>::infinity();
            t.p_value = 0.0;
        } else {
            t.f_ratio = (t.ss_between / t.df_between) / (t.ss_within / t.df_within);
            t.p_value = f_sf(t.f_ratio, t.df_between, t.df_within);
        }
        return t;
    }

    // Welch
    std::vector<double> w(n_codes, 0.0);
    double w_sum = 0.0, wm_sum = 0.0;
    for (std::size_t g = 0; g < n_codes; ++g) {
        if (count[g] == 0) continue;
        if (count[g] < 2 || ss_group[g] == 0.0)
            throw DegenerateError("one_way_anova: Welch error term needs >= 2 varying observations per group");
        const double var = ss_group[g] / static_cast<double>(count[g] - 1);
        w[g] = static_cast<double>(count[g]) / var;
        w_sum += w[g];
        wm_sum += w[g] * mean[g];
    }
    const double mw = wm_sum / w_sum;
    double num = 0.0, lambda = 0.0;
    for (std::size_t g = 0; g < n_codes; ++g) {
        if (count[g] == 0) continue;
        num += w[g] * (mean[g] - mw) * (mean[g] - mw);
        const double r = 1.0 - w[g] / w_sum;
        lambda += r * r / static_cast<double>(count[g] - 1);
    }
    const double kd = static_cast<double>(k);
    num /= (kd - 1.0);
    const double den = 1.0 + 2.0 * (kd - 2.0) / (kd * kd - 1.0) * lambda;
    t.f_ratio = num / den;
    t.df_within = lambda > 0.0 ? (kd * kd - 1.0) / (3.0 * lambda) : std::numeric_limits<double>::infinity();
    t.p_value = std::isinf(t.df_within) ? 0.0 : f_sf(t.f_ratio, t.df_between, t.df_within);
    return t;
}

// Kolmogorov limiting distribution Q(lambda) = P(K > lambda).
inline double kolmogorov_sf(double lambda) {
    if (lambda < 0.2) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int j = 1; j <= 200; ++j) {
        const double term = sign * std::exp(-2.0 * j * j * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-18) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov test (asymptotic p-value with the
// Stephens small-sample correction).
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw DegenerateError("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double en = std::sqrt(na * nb / (na + nb));
    return {d, kolmogorov_sf((en + 0.12 + 0.11 / en) * d)};
}

// One-sample KS test against Uniform(0, 1).
inline KsResult ks_uniform(std::vector<double> x) {
    if (x.empty()) throw DegenerateError("ks_uniform: empty sample");
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = std::clamp(x[i], 0.0, 1.0);
        d = std::max({d, static_cast<double>(i + 1) / n - u, u - static_cast<double>(i) / n});
    }
    const double en = std::sqrt(n);
    return {d, kolmogorov_sf((en + 0.12 + 0.11 / en) * d)};
}

// Quantile with linear interpolation between order statistics; `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw DegenerateError("quantile: empty input");
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

// Sample standard deviation (divisor n - 1); 0 for fewer than 2 values.
inline double stddev(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(x.size() - 1));
}

} // namespace facespace

namespace facespace {

// Fixed-width histogram over [lo, hi]; values outside are clamped into the end bins.
struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::uint64_t> counts;

    Histogram() = default;
    Histogram(double lo_, double hi_, std::size_t bins) : lo(lo_), hi(hi_), counts(bins, 0) {}

    std::size_t bin_of(double v) const noexcept {
        const double t = (v - lo) / (hi - lo) * static_cast<double>(counts.size());
        if (!(t > 0.0)) return 0;
        return std::min(static_cast<std::size_t>(t), counts.size() - 1);
    }
    void add(double v) noexcept { ++counts[bin_of(v)]; }
    void merge(const Histogram& other) noexcept {
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    }
    std::uint64_t total() const noexcept {
        std::uint64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }
    double bin_width() const noexcept { return (hi - lo) / static_cast<double>(counts.size()); }
    double bin_center(std::size_t i) const noexcept { return lo + (static_cast<double>(i) + 0.5) * bin_width(); }

    // Quantile by linear interpolation inside the bin holding the target rank.
    double quantile(double q) const {
        const auto n = total();
        if (n == 0) throw DegenerateError("histogram quantile: empty histogram");
        const double target = std::clamp(q, 0.0, 1.0) * static_cast<double>(n);
        double cum = 0.0;
        for (std::size_t i = 0; i < counts.size(); ++i) {
            const double next = cum + static_cast<double>(counts[i]);
            if (next >= target && counts[i] > 0) {
                const double frac = (target - cum) / static_cast<double>(counts[i]);
                return lo + (static_cast<double>(i) + frac) * bin_width();
            }
            cum = next;
        }
        return hi;
    }
};

inline Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
    Histogram h(lo, hi, bins);
    for (double v : values) h.add(v);
    return h;
}

} // namespace facespace
