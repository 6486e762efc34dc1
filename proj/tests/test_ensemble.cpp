#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "facespace/ensemble.hpp"
#include "facespace/synthgen.hpp"
#include "test_support.hpp"

using namespace facespace;
using facespace::testing::random_matrix;

namespace {

std::vector<std::string> make_ids(std::size_t n) {
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = "img" + std::to_string(i);
    return ids;
}

// Index of the PC most aligned with a unit direction.
std::size_t aligned_pc(const FaceSpace& fs, std::span<const double> dir) {
    std::size_t best = 0;
    double best_v = -1.0;
    for (std::size_t k = 0; k < fs.dimension(); ++k) {
        double c = 0.0;
        for (std::size_t j = 0; j < fs.dimension(); ++j) c += fs.basis.vectors(j, k) * dir[j];
        if (std::abs(c) > best_v) {
            best_v = std::abs(c);
            best = k;
        }
    }
    return best;
}

// Identity variance in a k-dim subspace above the gender variance, view lowest.
SynthSpec layered_spec(std::uint64_t seed) {
    SynthSpec s;
    s.dimension = 24;
    s.n_identities = 150;
    s.images_min = s.images_max = 6;
    s.identity_dims = 6;
    s.sigma_identity = 2.0;
    s.sigma_gender = 1.2;
    s.sigma_view = 1.2;
    s.sigma_noise = 0.3;
    s.seed = seed;
    return s;
}

} // namespace

TEST(FaceSpace, ScoresReconstructDescriptors) {
    const Matrix x = random_matrix(90, 12, 3);
    const auto fs = build_face_space(EmbeddingSet(x, make_ids(90)));
    const Matrix back = fs.scores * fs.basis.vectors.transposed();
    for (std::size_t i = 0; i < 90; ++i)
        for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(back(i, j) + fs.basis.mean[j], x(i, j), 1e-8);
}

TEST(FaceSpace, ScoreCovarianceIsDiagonalEigenvalues) {
    const auto d = generate(layered_spec(1));
    const auto fs = build_face_space(d.embeddings);
    const Matrix c = covariance(fs.scores);
    for (std::size_t a = 0; a < fs.dimension(); ++a) {
        EXPECT_NEAR(c(a, a), fs.basis.values[a], 1e-6 * fs.basis.values[a]);
        for (std::size_t b = a + 1; b < fs.dimension(); ++b)
            EXPECT_LT(std::abs(c(a, b)) / std::sqrt(c(a, a) * c(b, b)), 1e-6);
    }
}

TEST(FaceSpace, CollinearDataHasOnePc) {
    Matrix x(40, 5);
    Philox rng(1, 1);
    for (std::size_t i = 0; i < 40; ++i) {
        const double t = rng.normal();
        for (std::size_t j = 0; j < 5; ++j) x(i, j) = t * (1.0 + static_cast<double>(j)) + 3.0;
    }
    const auto fs = build_face_space(EmbeddingSet(x, make_ids(40)));
    EXPECT_GT(fs.basis.values[0], 1.0);
    for (std::size_t k = 1; k < 5; ++k) EXPECT_LT(fs.basis.values[k], 1e-12 * fs.basis.values[0]);
    for (std::size_t i = 0; i < 40; ++i)
        for (std::size_t k = 1; k < 5; ++k) EXPECT_NEAR(fs.scores(i, k), 0.0, 1e-9);
}

TEST(FaceSpace, TooFewImages) {
    EXPECT_THROW(build_face_space(EmbeddingSet(random_matrix(2, 3, 1), make_ids(2))), DegenerateError);
}

TEST(FaceSpace, PlantedVarianceOrdering) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto d = generate(layered_spec(seed));
        const auto fs = build_face_space(d.embeddings);
        // six identity PCs first, then gender, then viewpoint
        EXPECT_EQ(aligned_pc(fs, d.truth.gender_axis), 6u) << "seed " << seed;
        EXPECT_EQ(aligned_pc(fs, d.truth.view_axis), 7u) << "seed " << seed;
        // leading six PCs span the identity subspace (individual PCs may rotate within it)
        double in_span = 0.0;
        for (std::size_t k = 0; k < 6; ++k)
            for (const auto& v : d.truth.identity_basis) {
                double c = 0.0;
                for (std::size_t j = 0; j < fs.dimension(); ++j) c += fs.basis.vectors(j, k) * v[j];
                in_span += c * c;
            }
        EXPECT_GT(in_span / 6.0, 0.97) << "seed " << seed;
    }
}

TEST(PcAnova, MatchesColumnAnovaOnScores) {
    const auto d = generate(layered_spec(2));
    const auto fs = build_face_space(d.embeddings);
    const auto t = pc_anova(fs, d.attributes, Attribute::gender);
    for (std::size_t k = 0; k < fs.dimension(); ++k) {
        const auto ref = one_way_anova(fs.scores.col(k), d.attributes.codes(Attribute::gender));
        ASSERT_TRUE(t[k]);
        EXPECT_EQ(t[k]->f_ratio, ref.f_ratio);
        EXPECT_EQ(t[k]->r_squared, ref.r_squared);
    }
}

TEST(PcAnova, IdentityConcentratedInLeadingPcs) {
    const auto d = generate(layered_spec(3));
    const auto fs = build_face_space(d.embeddings);
    const auto t = pc_anova(fs, d.attributes, Attribute::identity);
    double lead = 0.0, rest = 0.0;
    for (std::size_t k = 0; k < 6; ++k) lead += t[k]->r_squared / 6.0;
    for (std::size_t k = 8; k < fs.dimension(); ++k) rest += t[k]->r_squared / static_cast<double>(fs.dimension() - 8);
    EXPECT_GT(lead, 0.95);
    EXPECT_LT(rest, 0.4);
}

TEST(PcAnova, GenderPeaksAtPlantedPc) {
    const auto d = generate(layered_spec(4));
    const auto fs = build_face_space(d.embeddings);
    const auto t = pc_anova(fs, d.attributes, Attribute::gender);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < t.size(); ++k)
        if (t[k]->r_squared > t[arg]->r_squared) arg = k;
    EXPECT_EQ(arg, aligned_pc(fs, d.truth.gender_axis));
    EXPECT_GT(t[arg]->r_squared, 0.8);
}

TEST(PcAnova, TotalSumsOfSquaresPreservedByRotation) {
    const auto d = generate(layered_spec(5));
    const auto fs = build_face_space(d.embeddings);
    for (auto a : {Attribute::identity, Attribute::gender, Attribute::viewpoint}) {
        const auto pcs = pc_anova(fs, d.attributes, a);
        const auto units = unit_anova(d.embeddings, d.attributes, a);
        double pb = 0.0, pt = 0.0, ub = 0.0, ut = 0.0;
        for (const auto& t : pcs) {
            pb += t->ss_between;
            pt += t->ss_between + t->ss_within;
        }
        for (const auto& t : units) {
            ub += t->ss_between;
            ut += t->ss_between + t->ss_within;
        }
        EXPECT_NEAR(pt, ut, 1e-6 * ut);
        EXPECT_NEAR(pb, ub, 1e-6 * ub);
    }
}

TEST(PcAnova, ZeroVariancePcsSkipped) {
    // rank 3 data in 6 dimensions
    const Matrix x = random_matrix(30, 3, 5) * random_matrix(3, 6, 6);
    std::vector<AttributeRecord> recs;
    for (std::size_t i = 0; i < 30; ++i)
        recs.push_back({"img" + std::to_string(i), "id" + std::to_string(i / 3), i % 2 ? Gender::male : Gender::female, 0.0});
    const auto fs = build_face_space(EmbeddingSet(x, make_ids(30)));
    const auto t = pc_anova(fs, AttributeTable(recs), Attribute::identity);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_TRUE(t[k]);
    for (std::size_t k = 3; k < 6; ++k) EXPECT_FALSE(t[k]);
}

TEST(PcAnova, ShuffledLabelsAtNullLevel) {
    SynthSpec s = layered_spec(6);
    s.sigma_gender = 0.0;
    const auto d = generate(s);
    const auto fs = build_face_space(d.embeddings);
    const auto t = pc_anova(fs, d.attributes, Attribute::gender);
    // gender is unrelated to every PC: F(1, N-2) null, E[r^2] ~ 1/(N-1) at identity level
    EXPECT_LT(significant_fraction(t), 0.2);
}

TEST(Windows, FullWindowEqualsFullSpaceMetric) {
    const auto d = generate(layered_spec(7));
    const auto fs = build_face_space(d.embeddings);
    const auto setup = make_window_setup(fs, d.attributes, 10, 3);
    for (auto task : {Task::identity, Task::gender, Task::viewpoint}) {
        const auto curve = sliding_window_predict(fs, d.attributes, fs.dimension(), task, setup);
        ASSERT_EQ(curve.size(), 1u);
        EXPECT_EQ(curve[0].value, task_metric(fs.scores, d.attributes, task, setup)) << to_string(task);
    }
    // gender accuracy is affine invariant, so raw descriptors agree up to rounding
    const double acc_raw = predict_gender_cv(d.embeddings.descriptors(), d.attributes, setup.folds).accuracy;
    EXPECT_NEAR(task_metric(fs.scores, d.attributes, Task::gender, setup), acc_raw, 2.0 / d.embeddings.size());
}

TEST(Windows, CurveLengthAndValidation) {
    const auto d = generate(layered_spec(8));
    const auto fs = build_face_space(d.embeddings);
    const auto setup = make_window_setup(fs, d.attributes, 10, 3);
    const auto curve = sliding_window_predict(fs, d.attributes, 5, Task::gender, setup);
    ASSERT_EQ(curve.size(), 20u);
    for (std::size_t s = 0; s < curve.size(); ++s) EXPECT_EQ(curve[s].start, s);
    EXPECT_THROW(sliding_window_predict(fs, d.attributes, 25, Task::gender, setup), ConfigError);
    EXPECT_THROW(sliding_window_predict(fs, d.attributes, 0, Task::gender, setup), ConfigError);
}

TEST(Windows, GenderPeaksOverPlantedPc) {
    const auto d = generate(layered_spec(9));
    const auto fs = build_face_space(d.embeddings);
    const auto setup = make_window_setup(fs, d.attributes, 10, 3);
    const auto curve = sliding_window_predict(fs, d.attributes, 3, Task::gender, setup);
    const auto best = std::max_element(curve.begin(), curve.end(), [](auto& a, auto& b) { return a.value < b.value; });
    const std::size_t g = aligned_pc(fs, d.truth.gender_axis);
    EXPECT_LE(best->start, g);
    EXPECT_GT(best->start + 3, g);
    EXPECT_GT(best->value, 0.9);
}

TEST(Windows, IdentityHighestAtStart) {
    // only the first window covers the whole 4-dim identity subspace
    SynthSpec spec = layered_spec(10);
    spec.identity_dims = 4;
    const auto d = generate(spec);
    const auto fs = build_face_space(d.embeddings);
    const auto setup = make_window_setup(fs, d.attributes, 10, 3);
    const auto curve = sliding_window_predict(fs, d.attributes, 4, Task::identity, setup);
    for (std::size_t s = 1; s < curve.size(); ++s) EXPECT_GE(curve[0].value, curve[s].value);
}

TEST(Windows, ThreadCountInvariant) {
    const auto d = generate(layered_spec(11));
    const auto fs = build_face_space(d.embeddings);
    const auto setup = make_window_setup(fs, d.attributes, 10, 3);
    const int saved = thread_count();
    set_thread_count(1);
    const auto a = sliding_window_predict(fs, d.attributes, 6, Task::viewpoint, setup);
    set_thread_count(3);
    const auto b = sliding_window_predict(fs, d.attributes, 6, Task::viewpoint, setup);
    set_thread_count(saved);
    for (std::size_t s = 0; s < a.size(); ++s) EXPECT_EQ(a[s].value, b[s].value);
}

TEST(Directions, IdentityConfinedToLeadingPcs) {
    SynthSpec s = layered_spec(12);
    s.identity_dims = 2;
    s.sigma_identity = 3.0;
    s.sigma_gender = 0.0;
    s.sigma_view = 0.0;
    s.sigma_noise = 0.1;
    const auto d = generate(s);
    const auto fs = build_face_space(d.embeddings);
    const auto rep = attribute_directions(fs, d.embeddings, d.attributes);
    EXPECT_GT(rep.identity[0] + rep.identity[1], 1.0);
    for (std::size_t k = 2; k < fs.dimension(); ++k) EXPECT_LT(rep.identity[k], 0.05);
    for (std::size_t k = 0; k < fs.dimension(); ++k)
        for (double v : {rep.identity[k], rep.gender[k], rep.viewpoint[k]}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
}

TEST(Directions, GenderAlignedWithOnePc) {
    const auto d = generate(layered_spec(13));
    const auto fs = build_face_space(d.embeddings);
    const auto rep = attribute_directions(fs, d.embeddings, d.attributes);
    const std::size_t g = aligned_pc(fs, d.truth.gender_axis);
    EXPECT_GT(rep.gender[g], 0.9);
    // reported values are |cos| of the fitted direction with each eigenvector
    for (std::size_t k = 0; k < fs.dimension(); ++k) {
        double c = 0.0;
        for (std::size_t j = 0; j < fs.dimension(); ++j) c += rep.gender_direction[j] * fs.basis.vectors(j, k);
        EXPECT_NEAR(rep.gender[k], std::abs(c), 1e-12);
    }
    // unit directions: squared similarities over a complete basis sum to 1
    double sg = 0.0, sv = 0.0;
    for (std::size_t k = 0; k < fs.dimension(); ++k) {
        sg += rep.gender[k] * rep.gender[k];
        sv += rep.viewpoint[k] * rep.viewpoint[k];
    }
    EXPECT_NEAR(sg, 1.0, 1e-10);
    EXPECT_NEAR(sv, 1.0, 1e-10);
}

TEST(Directions, ZeroTemplateFlagged) {
    // identity "b" sits exactly at the global mean
    Matrix x(6, 2);
    const double v[6][2] = {{1, 0}, {1, 0.5}, {0, 0}, {0, 0}, {-1, 0}, {-1, -0.5}};
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 2; ++j) x(i, j) = v[i][j];
    const char* ids[3] = {"a", "b", "c"};
    std::vector<AttributeRecord> recs;
    for (std::size_t i = 0; i < 6; ++i)
        recs.push_back({"img" + std::to_string(i), ids[i / 2], i < 2 ? Gender::female : Gender::male, 10.0 * i});
    const EmbeddingSet emb(x, make_ids(6));
    const auto rep = attribute_directions(build_face_space(emb), emb, AttributeTable(recs));
    EXPECT_EQ(rep.zero_templates, std::vector<std::string>{"b"});
}

TEST(Alignment, RowsComplete) {
    const auto d = generate(layered_spec(14));
    const auto al = unit_pc_alignment(build_face_space(d.embeddings));
    EXPECT_LT(al.completeness_error(), 1e-8);
}

TEST(Alignment, AxisAlignedIsPermutationLike) {
    Matrix x = random_matrix(3000, 6, 15);
    const double scale[6] = {1.0, 3.0, 0.5, 2.0, 5.0, 1.5};
    for (std::size_t i = 0; i < 3000; ++i)
        for (std::size_t j = 0; j < 6; ++j) x(i, j) *= scale[j];
    const auto al = unit_pc_alignment(build_face_space(EmbeddingSet(x, make_ids(3000))));
    const std::size_t expected_pc[6] = {4, 1, 5, 2, 0, 3}; // rank of each unit's variance
    for (std::size_t u = 0; u < 6; ++u) EXPECT_GT(al.values(u, expected_pc[u]), 0.99);
}

TEST(Alignment, AssignmentRules) {
    auto ft = [](double r2) {
        FTest t;
        t.r_squared = r2;
        return std::optional<FTest>(t);
    };
    std::array<std::vector<std::optional<FTest>>, 3> anova{
        std::vector<std::optional<FTest>>{ft(0.5), ft(0.1), ft(5e-5), std::nullopt, ft(0.2)},
        std::vector<std::optional<FTest>>{ft(0.2), ft(0.3), ft(1e-5), std::nullopt, ft(0.2)},
        std::vector<std::optional<FTest>>{ft(0.1), ft(0.2), ft(2e-5), std::nullopt, ft(0.6)}};
    const auto cls = assign_pcs(anova);
    EXPECT_EQ(cls, (std::vector<PcClass>{PcClass::identity, PcClass::gender, PcClass::none, PcClass::none,
                                         PcClass::viewpoint}));
}

TEST(Alignment, NestedGenderUsesIdentityExcess) {
    auto ft = [](double r2) {
        FTest t;
        t.r_squared = r2;
        return std::optional<FTest>(t);
    };
    // identity r^2 includes the nested gender share on both PCs
    std::array<std::vector<std::optional<FTest>>, 3> anova{
        std::vector<std::optional<FTest>>{ft(0.9), ft(0.7)}, std::vector<std::optional<FTest>>{ft(0.1), ft(0.6)},
        std::vector<std::optional<FTest>>{ft(0.0), ft(0.0)}};
    EXPECT_EQ(assign_pcs(anova), (std::vector<PcClass>{PcClass::identity, PcClass::identity}));
    EXPECT_EQ(assign_pcs(anova, true), (std::vector<PcClass>{PcClass::identity, PcClass::gender}));
}

TEST(Alignment, ClassGroupingAndOverlap) {
    auto s = SynthSpec{};
    s.sigma_gender = 2.0;
    s.seed = 16;
    const auto d = generate(calibrate(0.69, s).spec);
    const auto fs = build_face_space(d.embeddings);
    const auto cls = assign_pcs(fs, d.attributes);
    const auto ca = alignment_by_class(unit_pc_alignment(fs), cls);
    std::size_t total = 0;
    for (std::size_t c = 0; c < pc_class_count; ++c) {
        EXPECT_EQ(ca.pooled[c].size(), ca.pc_count[c] * fs.dimension());
        total += ca.pc_count[c];
        for (std::size_t u = 0; u < fs.dimension(); ++u) {
            double row = 0.0;
            for (double v : ca.per_unit_histogram[c].row(u)) row += v;
            EXPECT_EQ(row, static_cast<double>(ca.pc_count[c]));
        }
    }
    EXPECT_EQ(total, fs.dimension());
    EXPECT_GT(ca.pc_count[static_cast<std::size_t>(PcClass::gender)], 0u);
    for (const auto& t : alignment_overlap(ca)) EXPECT_GT(t.ks.p_value, 0.01) << to_string(t.a) << "/" << to_string(t.b);
}
