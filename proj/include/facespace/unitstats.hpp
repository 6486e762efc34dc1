#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "facespace/dataset.hpp"
#include "facespace/parallel.hpp"
#include "facespace/stats.hpp"

namespace facespace {

inline constexpr double default_alpha = 0.05;

// Per-column one-way ANOVA. A column whose values are all identical yields nullopt.
inline std::vector<std::optional<FTest>> column_anova(const Matrix& x, std::span<const std::int32_t> groups,
                                                      ErrorTerm error_term = ErrorTerm::pooled) {
    if (x.rows() != groups.size()) throw ConfigError("column_anova: row/group count mismatch");
    std::vector<std::optional<FTest>> out(x.cols());
    parallel_for(x.cols(), [&](std::size_t j) {
        const auto col = x.col(j);
        try {
            out[j] = one_way_anova(col, groups, error_term);
        } catch (const DegenerateError&) {
            bool constant = std::all_of(col.begin(), col.end(), [&](double v) { return v == col.front(); });
            if (!constant) throw;
            out[j] = std::nullopt;
        }
    });
    return out;
}

// One FTest per unit for the given attribute; viewpoint groups are the five yaw bins.
inline std::vector<std::optional<FTest>> unit_anova(const EmbeddingSet& emb, const AttributeTable& attrs,
                                                    Attribute attribute, ErrorTerm error_term = ErrorTerm::pooled) {
    require_aligned(emb, attrs);
    return column_anova(emb.descriptors(), attrs.codes(attribute), error_term);
}

struct UnitProfile {
    std::size_t unit_index = 0;
    std::array<std::optional<FTest>, 3> tests; // indexed by Attribute

    const std::optional<FTest>& operator[](Attribute a) const noexcept { return tests[static_cast<std::size_t>(a)]; }
};

inline std::vector<UnitProfile> unit_profiles(const EmbeddingSet& emb, const AttributeTable& attrs) {
    std::vector<UnitProfile> out(emb.dimension());
    for (std::size_t u = 0; u < out.size(); ++u) out[u].unit_index = u;
    for (auto a : {Attribute::identity, Attribute::gender, Attribute::viewpoint}) {
        const auto tests = unit_anova(emb, attrs, a);
        for (std::size_t u = 0; u < out.size(); ++u) out[u].tests[static_cast<std::size_t>(a)] = tests[u];
    }
    return out;
}

enum class Correction { bonferroni, none };

// p-value threshold for `tests` comparisons at family-wise level alpha.
inline double significance_threshold(std::size_t tests, double alpha = default_alpha,
                                     Correction correction = Correction::bonferroni) {
    if (tests == 0) throw ConfigError("significance_threshold: no tests");
    return correction == Correction::bonferroni ? alpha / static_cast<double>(tests) : alpha;
}

// Fraction of non-degenerate tests with p below the threshold. The Bonferroni
// divisor counts every test, degenerate ones included.
inline double significant_fraction(const std::vector<std::optional<FTest>>& tests, double alpha = default_alpha,
                                   Correction correction = Correction::bonferroni) {
    if (tests.empty()) return 0.0;
    const double threshold = significance_threshold(tests.size(), alpha, correction);
    std::size_t valid = 0, hits = 0;
    for (const auto& t : tests) {
        if (!t) continue;
        ++valid;
        hits += t->p_value < threshold;
    }
    return valid == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(valid);
}

inline double significant_fraction(const std::vector<UnitProfile>& profiles, Attribute attribute,
                                   double alpha = default_alpha, Correction correction = Correction::bonferroni) {
    std::vector<std::optional<FTest>> tests;
    tests.reserve(profiles.size());
    for (const auto& p : profiles) tests.push_back(p[attribute]);
    return significant_fraction(tests, alpha, correction);
}

inline double mean_r_squared(const std::vector<std::optional<FTest>>& tests) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& t : tests)
        if (t) {
            s += t->r_squared;
            ++n;
        }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

// Pairwise unit correlations across images.
struct CorrelationProfile {
    std::size_t dimension = 0;
    std::vector<std::size_t> constant_units;
    std::size_t pair_count = 0;   // pairs among non-constant units
    bool stored = false;          // values holds every pair (i < j, row-major)
    std::vector<double> values;
    Histogram histogram{-1.0, 1.0, 200}; // signed r
    double mean = 0.0;
    double median = 0.0;     // signed
    double median_abs = 0.0;
    double p95_abs = 0.0;
    double max_abs = 0.0;
};

// All D(D-1)/2 correlations between non-constant units. Pairs are stored when
// D <= store_limit; otherwise summaries come from a 10^5-bin |r| histogram.
inline CorrelationProfile correlation_profile(const EmbeddingSet& emb, std::size_t store_limit = 1024) {
    const Matrix& x = emb.descriptors();
    const std::size_t n = x.rows(), d = x.cols();
    CorrelationProfile prof;
    prof.dimension = d;

    // Columns scaled to zero mean and unit norm, stored as rows.
    std::vector<std::size_t> live;
    Matrix z(d, n);
    for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += x(i, j);
        m /= static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = x(i, j) - m;
            z(j, i) = v;
            ss += v * v;
        }
        if (ss == 0.0) {
            prof.constant_units.push_back(j);
            continue;
        }
        const double inv = 1.0 / std::sqrt(ss);
        for (double& v : z.row(j)) v *= inv;
        live.push_back(j);
    }
    const std::size_t k = live.size();
    prof.pair_count = k < 2 ? 0 : k * (k - 1) / 2;
    if (prof.pair_count == 0) throw DegenerateError("correlation_profile: fewer than 2 non-constant units");

    prof.stored = d <= store_limit;
    std::vector<double> vals(prof.stored ? prof.pair_count : 0);
    Histogram abs_hist(0.0, 1.0, 100000);
    double total = 0.0;
    // Rows are processed in chunks: correlations in parallel, then a serial
    // pass in pair order feeds the summaries.
    constexpr std::size_t chunk_rows = 32;
    std::vector<std::vector<double>> chunk(chunk_rows);
    for (std::size_t a0 = 0; a0 < k; a0 += chunk_rows) {
        const std::size_t na = std::min(chunk_rows, k - a0);
        parallel_for(na, [&](std::size_t t) {
            const std::size_t a = a0 + t;
            auto& out = chunk[t];
            out.resize(k - a - 1);
            auto za = z.row(live[a]);
            for (std::size_t b = a + 1; b < k; ++b) out[b - a - 1] = std::clamp(dot(za, z.row(live[b])), -1.0, 1.0);
        });
        for (std::size_t t = 0; t < na; ++t) {
            const std::size_t a = a0 + t;
            const std::size_t base = a * k - a * (a + 1) / 2; // pairs before row a
            for (std::size_t b = 0; b < chunk[t].size(); ++b) {
                const double r = chunk[t][b];
                total += r;
                prof.max_abs = std::max(prof.max_abs, std::abs(r));
                prof.histogram.add(r);
                if (prof.stored)
                    vals[base + b] = r;
                else
                    abs_hist.add(std::abs(r));
            }
        }
    }

    prof.mean = total / static_cast<double>(prof.pair_count);
    if (prof.stored) {
        std::vector<double> sorted(vals);
        std::sort(sorted.begin(), sorted.end());
        prof.median = quantile_sorted(sorted, 0.5);
        for (double& v : sorted) v = std::abs(v);
        std::sort(sorted.begin(), sorted.end());
        prof.median_abs = quantile_sorted(sorted, 0.5);
        prof.p95_abs = quantile_sorted(sorted, 0.95);
        prof.values = std::move(vals);
    } else {
        prof.median = prof.histogram.quantile(0.5);
        prof.median_abs = abs_hist.quantile(0.5);
        prof.p95_abs = abs_hist.quantile(0.95);
    }
    return prof;
}

} // namespace facespace
