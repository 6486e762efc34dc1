#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "facespace/dataset.hpp"
#include "facespace/error.hpp"
#include "facespace/linalg.hpp"
#include "facespace/parallel.hpp"
#include "facespace/rng.hpp"
#include "facespace/stats.hpp"
#include "facespace/subspace.hpp"

namespace facespace {

// ---------------------------------------------------------------------------
// Two-class linear discriminant
// ---------------------------------------------------------------------------

struct LdaOptions {
    // Shift the threshold by -log(prior1 / prior0); false puts it at the midpoint.
    bool use_priors = true;
    // Ridge added when the pooled within-class scatter is singular: scale * trace(S_w) / K.
    double ridge_scale = 1e-6;
};

struct LdaModel {
    std::vector<double> weight;                  // S_w^-1 (mu_1 - mu_0), up to a positive factor
    double threshold = 0.0;
    std::array<std::int32_t, 2> class_labels{};  // {lower label, higher label}
    bool regularized = false;

    double score(std::span<const double> x) const { return dot(weight, x) - threshold; }
    std::int32_t predict(std::span<const double> x) const { return class_labels[score(x) > 0.0 ? 1 : 0]; }
};

inline LdaModel fit_lda(const Matrix& x, std::span<const std::int32_t> labels, const LdaOptions& opt = {}) {
    if (x.rows() != labels.size()) throw ConfigError("fit_lda: row/label count mismatch");
    if (x.rows() == 0) throw DegenerateError("fit_lda: no observations");
    const auto [lo_it, hi_it] = std::minmax_element(labels.begin(), labels.end());
    const std::int32_t lo = *lo_it, hi = *hi_it;
    if (lo == hi) throw DegenerateError("fit_lda: only one class present");
    for (auto l : labels)
        if (l != lo && l != hi) throw ConfigError("fit_lda: labels must be binary");

    const std::size_t n = x.rows(), k = x.cols();
    std::array<std::vector<double>, 2> mu{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)};
    std::array<std::size_t, 2> count{};
    for (std::size_t i = 0; i < n; ++i) {
        const int c = labels[i] == hi;
        ++count[c];
        auto r = x.row(i);
        for (std::size_t j = 0; j < k; ++j) mu[c][j] += r[j];
    }
    for (int c = 0; c < 2; ++c)
        for (double& v : mu[c]) v /= static_cast<double>(count[c]);

    Matrix sw(k, k);
    std::vector<double> dev(k);
    for (std::size_t i = 0; i < n; ++i) {
        const int c = labels[i] == hi;
        auto r = x.row(i);
        for (std::size_t j = 0; j < k; ++j) dev[j] = r[j] - mu[c][j];
        for (std::size_t a = 0; a < k; ++a) {
            const double da = dev[a];
            double* srow = sw.row(a).data();
            for (std::size_t b = a; b < k; ++b) srow[b] += da * dev[b];
        }
    }
    const double dof = n > 2 ? static_cast<double>(n - 2) : 1.0;
    double trace = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a; b < k; ++b) {
            sw(a, b) /= dof;
            sw(b, a) = sw(a, b);
        }
        trace += sw(a, a);
    }

    std::vector<double> diff(k);
    for (std::size_t j = 0; j < k; ++j) diff[j] = mu[1][j] - mu[0][j];

    LdaModel model;
    model.class_labels = {lo, hi};
    auto w = solve_spd(sw, diff);
    if (!w) {
        const double ridge = trace > 0.0 ? opt.ridge_scale * trace / static_cast<double>(k) : 1.0;
        for (std::size_t a = 0; a < k; ++a) sw(a, a) += ridge;
        w = solve_spd(sw, diff, 0.0);
        if (!w) throw DegenerateError("fit_lda: within-class scatter singular after ridge");
        model.regularized = true;
    }
    model.weight = std::move(*w);
    std::vector<double> mid(k);
    for (std::size_t j = 0; j < k; ++j) mid[j] = 0.5 * (mu[0][j] + mu[1][j]);
    model.threshold = dot(model.weight, mid);
    if (opt.use_priors)
        model.threshold -= std::log(static_cast<double>(count[1]) / static_cast<double>(count[0]));
    return model;
}

// ---------------------------------------------------------------------------
// Linear regression by pseudo-inverse
// ---------------------------------------------------------------------------

struct RegressionModel {
    std::vector<double> weight;
    double bias = 0.0;

    double predict(std::span<const double> x) const { return dot(weight, x) + bias; }
};

// Minimum-norm least squares on [X, 1].
inline RegressionModel fit_regression(const Matrix& x, std::span<const double> y) {
    if (x.rows() != y.size()) throw ConfigError("fit_regression: row/target count mismatch");
    if (x.rows() == 0) throw DegenerateError("fit_regression: no observations");
    const std::size_t n = x.rows(), k = x.cols();
    Matrix aug(n, k + 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(x.row(i).begin(), x.row(i).end(), aug.row(i).begin());
        aug(i, k) = 1.0;
    }
    auto coef = pinv_solve(aug, y);
    RegressionModel m;
    m.bias = coef[k];
    coef.resize(k);
    m.weight = std::move(coef);
    return m;
}

// ---------------------------------------------------------------------------
// Identity-grouped cross-validation
// ---------------------------------------------------------------------------

struct CvFold {
    std::vector<std::int32_t> held_out_identities; // identity codes, ascending
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Identities are shuffled once and cut into consecutive blocks of
// held_out_count (the last block may be smaller). Each block is one fold's test set.
inline std::vector<CvFold> make_identity_folds(const AttributeTable& attrs, std::int64_t held_out_count,
                                               std::uint64_t seed) {
    if (held_out_count <= 0) throw ConfigError("make_identity_folds: held_out_count must be positive");
    const std::size_t n_ids = attrs.identity_count();
    if (static_cast<std::size_t>(held_out_count) >= n_ids)
        throw ConfigError("make_identity_folds: held_out_count " + std::to_string(held_out_count) +
                          " must be below the identity count " + std::to_string(n_ids));
    std::vector<std::int32_t> order(n_ids);
    std::iota(order.begin(), order.end(), 0);
    Philox rng(seed, stream_id(streams::folds));
    shuffle(std::span(order), rng);

    const auto block = static_cast<std::size_t>(held_out_count);
    const std::size_t n_folds = (n_ids + block - 1) / block;
    std::vector<std::size_t> fold_of(n_ids);
    std::vector<CvFold> folds(n_folds);
    for (std::size_t i = 0; i < n_ids; ++i) {
        fold_of[order[i]] = i / block;
        folds[i / block].held_out_identities.push_back(order[i]);
    }
    const auto& codes = attrs.codes(Attribute::identity);
    for (std::size_t f = 0; f < n_folds; ++f) {
        std::sort(folds[f].held_out_identities.begin(), folds[f].held_out_identities.end());
        for (std::size_t r = 0; r < codes.size(); ++r) (fold_of[codes[r]] == f ? folds[f].test : folds[f].train).push_back(r);
    }
    return folds;
}

// Throws unless folds are leak-free and test sets partition the rows.
inline void validate_folds(const std::vector<CvFold>& folds, const AttributeTable& attrs) {
    const auto& codes = attrs.codes(Attribute::identity);
    std::vector<int> tested(attrs.size(), 0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<bool> held(attrs.identity_count(), false);
        for (auto id : folds[f].held_out_identities) held[id] = true;
        for (auto r : folds[f].train) {
            if (r >= attrs.size()) throw ConfigError("fold: row index out of range");
            if (held[codes[r]]) throw ConfigError("fold " + std::to_string(f) + ": held-out identity in training set");
        }
        for (auto r : folds[f].test) {
            if (r >= attrs.size()) throw ConfigError("fold: row index out of range");
            if (!held[codes[r]]) throw ConfigError("fold " + std::to_string(f) + ": test row of a training identity");
            ++tested[r];
        }
    }
    for (std::size_t r = 0; r < tested.size(); ++r)
        if (tested[r] != 1)
            throw ConfigError("folds: row " + std::to_string(r + 1) + " tested " + std::to_string(tested[r]) + " times");
}

struct GenderCvResult {
    double accuracy = 0.0;
    std::vector<std::int32_t> predictions; // gender code per row
};

// Per fold: LDA on the training rows, classify the held-out rows.
inline GenderCvResult predict_gender_cv(const Matrix& x, const AttributeTable& attrs, const std::vector<CvFold>& folds,
                                        const LdaOptions& opt = {}) {
    if (x.rows() != attrs.size()) throw ConfigError("predict_gender_cv: matrix rows do not match attributes");
    validate_folds(folds, attrs);
    const auto& gender = attrs.codes(Attribute::gender);
    GenderCvResult res;
    res.predictions.assign(x.rows(), 0);
    parallel_for(folds.size(), [&](std::size_t f) {
        const auto& fold = folds[f];
        std::vector<std::int32_t> labels(fold.train.size());
        for (std::size_t i = 0; i < fold.train.size(); ++i) labels[i] = gender[fold.train[i]];
        if (std::all_of(labels.begin(), labels.end(), [&](auto l) { return l == labels.front(); }))
            throw DegenerateError("predict_gender_cv: fold " + std::to_string(f) + " has a single training class");
        const auto model = fit_lda(x.select_rows(fold.train), labels, opt);
        for (auto r : fold.test) res.predictions[r] = model.predict(x.row(r));
    });
    std::size_t correct = 0;
    for (std::size_t r = 0; r < x.rows(); ++r) correct += res.predictions[r] == gender[r];
    res.accuracy = static_cast<double>(correct) / static_cast<double>(x.rows());
    return res;
}

struct ViewCvResult {
    double mae = 0.0; // degrees
    std::vector<double> predictions;
};

// Per fold: pseudo-inverse regression of yaw on the training rows.
inline ViewCvResult predict_viewpoint_cv(const Matrix& x, const AttributeTable& attrs, const std::vector<CvFold>& folds) {
    if (x.rows() != attrs.size()) throw ConfigError("predict_viewpoint_cv: matrix rows do not match attributes");
    validate_folds(folds, attrs);
    const auto yaw = attrs.yaw();
    ViewCvResult res;
    res.predictions.assign(x.rows(), 0.0);
    parallel_for(folds.size(), [&](std::size_t f) {
        const auto& fold = folds[f];
        std::vector<double> y(fold.train.size());
        for (std::size_t i = 0; i < fold.train.size(); ++i) y[i] = yaw[fold.train[i]];
        const auto model = fit_regression(x.select_rows(fold.train), y);
        for (auto r : fold.test) res.predictions[r] = model.predict(x.row(r));
    });
    double err = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) err += std::abs(res.predictions[r] - yaw[r]);
    res.mae = err / static_cast<double>(x.rows());
    return res;
}

// ---------------------------------------------------------------------------
// Permutation test
// ---------------------------------------------------------------------------

enum class Better { higher, lower };

struct PermutationResult {
    double observed = 0.0;
    double p_value = 1.0;
    std::vector<double> null; // statistic per permutation, in permutation order
};

// Copy of x with each column permuted independently; column j of permutation
// p uses Philox stream (seed, p, j).
inline Matrix permute_columns(const Matrix& x, std::uint64_t seed, std::size_t perm_index) {
    Matrix out(x.rows(), x.cols());
    std::vector<std::size_t> order(x.rows());
    for (std::size_t j = 0; j < x.cols(); ++j) {
        std::iota(order.begin(), order.end(), 0);
        Philox rng(seed, stream_id(streams::permutation, perm_index, j));
        shuffle(std::span(order), rng);
        for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) = x(order[i], j);
    }
    return out;
}

// Null distribution from independently permuting values within each unit.
// p = (1 + #{null at least as good as observed}) / (1 + n_perm).
inline PermutationResult permutation_test(const std::function<double(const Matrix&)>& statistic, const Matrix& x,
                                          std::size_t n_perm, std::uint64_t seed, Better better) {
    if (n_perm < 1) throw ConfigError("permutation_test: n_perm must be >= 1");
    PermutationResult res;
    res.observed = statistic(x);
    res.null.resize(n_perm);
    parallel_for(n_perm, [&](std::size_t p) { res.null[p] = statistic(permute_columns(x, seed, p)); });
    std::size_t extreme = 0;
    for (double v : res.null) extreme += better == Better::higher ? v >= res.observed : v <= res.observed;
    res.p_value = static_cast<double>(1 + extreme) / static_cast<double>(1 + n_perm);
    return res;
}

// ---------------------------------------------------------------------------
// Decoding across a subspace plan
// ---------------------------------------------------------------------------

struct SubspaceMetricRow {
    std::size_t size = 0;
    std::size_t replicate = 0;
    double value = 0.0;
};

// metric(projected matrix) for every sample of the plan, in plan order.
inline std::vector<SubspaceMetricRow> evaluate_plan(const Matrix& x, const SubspacePlan& plan,
                                                    const std::function<double(const Matrix&)>& metric) {
    if (plan.dimension != x.cols()) throw ConfigError("evaluate_plan: plan dimension does not match data");
    std::vector<SubspaceMetricRow> rows(plan.sample_count());
    parallel_for(rows.size(), [&](std::size_t idx) {
        const std::size_t s = idx / plan.replicates, r = idx % plan.replicates;
        rows[idx] = {plan.sizes[s], r, metric(x.select_cols(plan.samples[s][r]))};
    });
    return rows;
}

} // namespace facespace
