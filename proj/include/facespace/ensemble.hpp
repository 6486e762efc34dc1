#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "facespace/dataset.hpp"
#include "facespace/decoding.hpp"
#include "facespace/error.hpp"
#include "facespace/linalg.hpp"
#include "facespace/parallel.hpp"
#include "facespace/stats.hpp"
#include "facespace/unitstats.hpp"
#include "facespace/verification.hpp"

namespace facespace {

// PCA re-expression of the descriptor ensemble.
struct FaceSpace {
    EigenBasis basis;
    Matrix scores; // N x D factor scores, (descriptors - mean) * vectors
    std::vector<std::string> image_ids;

    std::size_t dimension() const noexcept { return scores.cols(); }
    std::size_t size() const noexcept { return scores.rows(); }
};

inline FaceSpace build_face_space(const EmbeddingSet& emb) {
    if (emb.size() <= 2) throw DegenerateError("build_face_space: need more than 2 images");
    FaceSpace fs;
    fs.basis = eigendecompose(emb.descriptors());
    const Matrix& x = emb.descriptors();
    Matrix centered(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) centered(i, j) = x(i, j) - fs.basis.mean[j];
    fs.scores = centered * fs.basis.vectors;
    fs.image_ids = emb.image_ids();
    return fs;
}

inline void require_aligned(const FaceSpace& fs, const AttributeTable& attrs) {
    if (fs.size() != attrs.size()) throw DataError("attributes not aligned with face space rows");
    for (std::size_t i = 0; i < fs.size(); ++i)
        if (fs.image_ids[i] != attrs[i].image_id)
            throw DataError("attributes not aligned with face space at row " + std::to_string(i + 1));
}

// PCs with eigenvalue at or below this fraction of the largest carry no variance.
inline constexpr double degenerate_pc_ratio = 1e-12;

// one_way_anova on each factor-score column; zero-variance PCs give nullopt.
inline std::vector<std::optional<FTest>> pc_anova(const FaceSpace& fs, const AttributeTable& attrs, Attribute attribute,
                                                  ErrorTerm error_term = ErrorTerm::pooled) {
    require_aligned(fs, attrs);
    auto out = column_anova(fs.scores, attrs.codes(attribute), error_term);
    const double cutoff = degenerate_pc_ratio * fs.basis.values.front();
    for (std::size_t k = 0; k < out.size(); ++k)
        if (!(fs.basis.values[k] > cutoff)) out[k] = std::nullopt;
    return out;
}

// ---------------------------------------------------------------------------
// Sliding-window prediction on factor scores
// ---------------------------------------------------------------------------

enum class Task { identity, gender, viewpoint };

inline const char* to_string(Task t) noexcept {
    switch (t) {
    case Task::identity: return "identity";
    case Task::gender: return "gender";
    case Task::viewpoint: return "viewpoint";
    }
    return "?";
}

// Fixed evaluation protocol shared by every window.
struct WindowSetup {
    SplitRows split;            // identity: cross-gallery verification
    std::vector<CvFold> folds;  // gender, viewpoint
    ScoreOptions scoring;
    LdaOptions lda;
};

inline WindowSetup make_window_setup(const FaceSpace& fs, const AttributeTable& attrs, std::int64_t held_out_count,
                                     std::uint64_t seed, double split_fraction = 0.5) {
    require_aligned(fs, attrs);
    WindowSetup s;
    const auto split = make_split(attrs, split_fraction, seed);
    // attrs rows equal face-space rows, so ids resolve through the table
    for (const auto& id : split.set_a) s.split.a.push_back(*attrs.index_of(id));
    for (const auto& id : split.set_b) s.split.b.push_back(*attrs.index_of(id));
    s.folds = make_identity_folds(attrs, held_out_count, seed);
    return s;
}

// Task metric on an arbitrary score matrix: AUC, accuracy, or MAE (degrees).
inline double task_metric(const Matrix& x, const AttributeTable& attrs, Task task, const WindowSetup& setup) {
    switch (task) {
    case Task::identity: return auc(score_pairs(x, attrs.codes(Attribute::identity), setup.split, setup.scoring));
    case Task::gender: return predict_gender_cv(x, attrs, setup.folds, setup.lda).accuracy;
    case Task::viewpoint: return predict_viewpoint_cv(x, attrs, setup.folds).mae;
    }
    throw ConfigError("unknown task");
}

struct WindowPoint {
    std::size_t start = 0; // 0-based first PC
    double value = 0.0;
};

// Windows [s, s + window) for s = 0, 1, ..., D - window.
inline std::vector<WindowPoint> sliding_window_predict(const FaceSpace& fs, const AttributeTable& attrs,
                                                       std::size_t window, Task task, const WindowSetup& setup) {
    require_aligned(fs, attrs);
    const std::size_t d = fs.dimension();
    if (window < 1 || window > d)
        throw ConfigError("sliding window: window " + std::to_string(window) + " must lie in [1, " + std::to_string(d) + "]");
    std::vector<WindowPoint> out(d - window + 1);
    parallel_for(out.size(), [&](std::size_t s) {
        out[s] = {s, task_metric(fs.scores.col_range(s, window), attrs, task, setup)};
    });
    return out;
}

// ---------------------------------------------------------------------------
// Attribute directions vs. PCs
// ---------------------------------------------------------------------------

struct DirectionReport {
    std::vector<double> identity;  // per PC: mean |cos| over identity templates
    std::vector<double> gender;    // per PC: |cos| with the LDA direction
    std::vector<double> viewpoint; // per PC: |cos| with the regression direction
    std::vector<std::string> zero_templates; // identities whose centered template is zero (excluded)
    std::vector<double> gender_direction;    // unit length, descriptor space
    std::vector<double> viewpoint_direction;
};

inline std::vector<double> unit_vector(std::vector<double> v, const char* what) {
    const double n = norm2(v);
    if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateError(std::string(what) + " direction has zero norm");
    for (double& e : v) e /= n;
    return v;
}

inline DirectionReport attribute_directions(const FaceSpace& fs, const EmbeddingSet& emb, const AttributeTable& attrs,
                                            const LdaOptions& lda = {}) {
    require_aligned(emb, attrs);
    if (emb.image_ids() != fs.image_ids) throw DataError("attribute_directions: face space built from other embeddings");
    const Matrix& x = emb.descriptors();
    const Matrix& v = fs.basis.vectors;
    const std::size_t d = x.cols(), n_ids = attrs.identity_count();

    DirectionReport rep;
    rep.gender_direction = unit_vector(fit_lda(x, attrs.codes(Attribute::gender), lda).weight, "gender");
    const auto yaw = attrs.yaw();
    rep.viewpoint_direction = unit_vector(fit_regression(x, yaw).weight, "viewpoint");

    // identity templates, centered by the global mean
    Matrix templates(n_ids, d);
    std::vector<std::size_t> count(n_ids, 0);
    const auto& id = attrs.codes(Attribute::identity);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        ++count[id[i]];
        for (std::size_t j = 0; j < d; ++j) templates(id[i], j) += x(i, j);
    }
    std::vector<std::size_t> live;
    for (std::size_t t = 0; t < n_ids; ++t) {
        auto row = templates.row(t);
        for (std::size_t j = 0; j < d; ++j) row[j] = row[j] / static_cast<double>(count[t]) - fs.basis.mean[j];
        const double nrm = norm2(row);
        // relative test: a template equal to the mean up to rounding counts as zero
        if (!(nrm > 1e-12 * (1.0 + norm2(fs.basis.mean)))) {
            rep.zero_templates.push_back(attrs.identity_labels()[t]);
            continue;
        }
        for (double& e : row) e /= nrm;
        live.push_back(t);
    }
    if (live.empty()) throw DegenerateError("attribute_directions: every identity template is zero");

    // |cos| of each template with each PC; templates x PCs
    const Matrix proj = templates.select_rows(live) * v;
    rep.identity.assign(d, 0.0);
    rep.gender.assign(d, 0.0);
    rep.viewpoint.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        double s = 0.0;
        for (std::size_t t = 0; t < proj.rows(); ++t) s += std::abs(proj(t, k));
        rep.identity[k] = std::min(1.0, s / static_cast<double>(proj.rows()));
        double g = 0.0, w = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            g += rep.gender_direction[j] * v(j, k);
            w += rep.viewpoint_direction[j] * v(j, k);
        }
        rep.gender[k] = std::min(1.0, std::abs(g));
        rep.viewpoint[k] = std::min(1.0, std::abs(w));
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Unit basis vs. PCs
// ---------------------------------------------------------------------------

// values(u, k) = |cos(e_u, PC_k)| = |vectors(u, k)|.
struct UnitAlignment {
    Matrix values;

    // max over units of |sum_k values(u, k)^2 - 1|
    double completeness_error() const {
        double worst = 0.0;
        for (std::size_t u = 0; u < values.rows(); ++u) {
            double s = 0.0;
            for (double e : values.row(u)) s += e * e;
            worst = std::max(worst, std::abs(s - 1.0));
        }
        return worst;
    }
};

inline UnitAlignment unit_pc_alignment(const FaceSpace& fs) {
    UnitAlignment a{fs.basis.vectors};
    for (double& e : a.values.data()) e = std::abs(e);
    return a;
}

enum class PcClass { identity = 0, gender = 1, viewpoint = 2, none = 3 };
inline constexpr std::size_t pc_class_count = 4;

inline const char* to_string(PcClass c) noexcept {
    switch (c) {
    case PcClass::identity: return "identity";
    case PcClass::gender: return "gender";
    case PcClass::viewpoint: return "viewpoint";
    case PcClass::none: return "none";
    }
    return "?";
}

inline constexpr double default_assignment_floor = 1e-4;

// Each PC goes to the attribute with the largest pc_anova r^2; below the floor
// (or degenerate) it is `none`. Ties resolve in identity, gender, viewpoint order.
//
// When gender is constant within identity, the identity partition refines the
// gender one and identity r^2 >= gender r^2 on every PC. With
// identity_beyond_gender the identity effect is taken as r^2_id - r^2_gender,
// its share after the nested gender term.
inline std::vector<PcClass> assign_pcs(const std::array<std::vector<std::optional<FTest>>, 3>& anova,
                                       bool identity_beyond_gender = false, double floor = default_assignment_floor) {
    const std::size_t d = anova[0].size();
    std::vector<PcClass> out(d, PcClass::none);
    for (std::size_t k = 0; k < d; ++k) {
        std::array<double, 3> effect{-1.0, -1.0, -1.0};
        for (std::size_t a = 0; a < 3; ++a)
            if (anova[a][k]) effect[a] = anova[a][k]->r_squared;
        if (identity_beyond_gender && anova[0][k] && anova[1][k]) effect[0] -= effect[1];
        const auto arg = static_cast<std::size_t>(std::max_element(effect.begin(), effect.end()) - effect.begin());
        if (effect[arg] >= floor) out[k] = static_cast<PcClass>(arg);
    }
    return out;
}

inline bool gender_nested_in_identity(const AttributeTable& attrs) {
    std::vector<int> g(attrs.identity_count(), -1);
    const auto& id = attrs.codes(Attribute::identity);
    const auto& gc = attrs.codes(Attribute::gender);
    for (std::size_t i = 0; i < id.size(); ++i) {
        if (g[id[i]] < 0) g[id[i]] = gc[i];
        if (g[id[i]] != gc[i]) return false;
    }
    return true;
}

inline std::array<std::vector<std::optional<FTest>>, 3> pc_anova_all(const FaceSpace& fs, const AttributeTable& attrs) {
    return {pc_anova(fs, attrs, Attribute::identity), pc_anova(fs, attrs, Attribute::gender),
            pc_anova(fs, attrs, Attribute::viewpoint)};
}

inline std::vector<PcClass> assign_pcs(const FaceSpace& fs, const AttributeTable& attrs,
                                       double floor = default_assignment_floor) {
    return assign_pcs(pc_anova_all(fs, attrs), gender_nested_in_identity(attrs), floor);
}

// Similarities grouped by the class of their PC.
struct ClassAlignment {
    std::array<std::size_t, pc_class_count> pc_count{};
    std::array<std::vector<double>, pc_class_count> pooled;   // all units, unit-major
    std::array<Matrix, pc_class_count> per_unit_histogram;    // D x bins, |cos| in [0, 1]
};

inline ClassAlignment alignment_by_class(const UnitAlignment& al, const std::vector<PcClass>& cls, std::size_t bins = 20) {
    if (cls.size() != al.values.cols()) throw ConfigError("alignment_by_class: one class per PC required");
    ClassAlignment out;
    const std::size_t d = al.values.rows();
    for (auto c : cls) ++out.pc_count[static_cast<std::size_t>(c)];
    for (std::size_t c = 0; c < pc_class_count; ++c) {
        out.pooled[c].reserve(d * out.pc_count[c]);
        out.per_unit_histogram[c] = Matrix(d, bins);
    }
    Histogram h(0.0, 1.0, bins);
    for (std::size_t u = 0; u < d; ++u)
        for (std::size_t k = 0; k < cls.size(); ++k) {
            const auto c = static_cast<std::size_t>(cls[k]);
            const double e = al.values(u, k);
            out.pooled[c].push_back(e);
            out.per_unit_histogram[c](u, h.bin_of(e)) += 1.0;
        }
    return out;
}

struct OverlapTest {
    PcClass a, b;
    KsResult ks;
};

// Two-sample KS between pooled similarity distributions for each pair of
// attribute classes that has at least one PC. The `none` class is not compared.
inline std::vector<OverlapTest> alignment_overlap(const ClassAlignment& ca) {
    std::vector<OverlapTest> out;
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = a + 1; b < 3; ++b)
            if (!ca.pooled[a].empty() && !ca.pooled[b].empty())
                out.push_back({static_cast<PcClass>(a), static_cast<PcClass>(b), ks_two_sample(ca.pooled[a], ca.pooled[b])});
    return out;
}

} // namespace facespace
