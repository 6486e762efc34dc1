#include <gtest/gtest.h>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <tuple>

#include "facespace/numerics.hpp"
#include "test_support.hpp"

using namespace facespace;
using facespace::testing::random_low_rank;
using facespace::testing::random_matrix;
using facespace::testing::random_orthonormal;

namespace {

// P(F > f) by tanh-sinh quadrature of the F density over [0, f].
double f_sf_quadrature(double f, double d1, double d2) {
    using boost::math::quadrature::tanh_sinh;
    const long double a = d1 / 2.0L, b = d2 / 2.0L;
    const long double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    auto pdf = [&](long double t) -> long double {
        if (t <= 0.0L) return 0.0L;
        const long double log_pdf = a * std::log(d1 * t) + b * std::log(static_cast<long double>(d2)) -
                                    (a + b) * std::log(d1 * t + d2) - std::log(t) - log_beta;
        return std::exp(log_pdf);
    };
    tanh_sinh<long double> integrator;
    const long double cdf = integrator.integrate(pdf, 0.0L, static_cast<long double>(f), 1e-16L);
    return static_cast<double>(1.0L - cdf);
}

double brute_ss_between(const std::vector<double>& v, const std::vector<std::int32_t>& g) {
    std::map<std::int32_t, std::vector<double>> groups;
    for (std::size_t i = 0; i < v.size(); ++i) groups[g[i]].push_back(v[i]);
    double grand = 0.0;
    for (double x : v) grand += x;
    grand /= v.size();
    double ss = 0.0;
    for (auto& [k, xs] : groups) {
        double m = 0.0;
        for (double x : xs) m += x;
        m /= xs.size();
        ss += xs.size() * (m - grand) * (m - grand);
    }
    return ss;
}

} // namespace

TEST(Pearson, PerfectLinear) {
    std::vector<double> x{1, 2, 3}, y{2, 4, 6}, z{3, 2, 1};
    EXPECT_DOUBLE_EQ(pearson(x, y), 1.0);
    EXPECT_DOUBLE_EQ(pearson(x, z), -1.0);
}

TEST(Pearson, HandComputed) {
    // centered products sum to 4; both sums of squares are 5
    std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
    EXPECT_NEAR(pearson(x, y), 0.8, 1e-15);
}

TEST(Pearson, ZeroVarianceIsAnError) {
    std::vector<double> x{1, 1, 1}, y{1, 2, 3};
    EXPECT_THROW(pearson(x, y), DegenerateError);
}

TEST(Pearson, SymmetricAndAffineInvariant) {
    Philox rng(5, 5);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> x(30), y(30);
        for (auto& v : x) v = rng.normal();
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.3 * x[i] + rng.normal();
        const double r = pearson(x, y);
        EXPECT_LE(std::abs(r), 1.0);
        EXPECT_NEAR(r, pearson(y, x), 1e-14);
        std::vector<double> y2(y);
        for (auto& v : y2) v = 3.5 * v - 7.0;
        EXPECT_NEAR(r, pearson(x, y2), 1e-12);
    }
}

TEST(FDistribution, ClosedFormOneOne) {
    EXPECT_NEAR(f_sf(1.0, 1, 1), 0.5, 1e-15);
    for (double f : {0.01, 0.1, 0.5, 2.0, 10.0, 100.0})
        EXPECT_NEAR(f_sf(f, 1, 1), 1.0 - 2.0 / std::numbers::pi * std::atan(std::sqrt(f)), 1e-12) << f;
}

TEST(FDistribution, ZeroStatistic) {
    EXPECT_EQ(f_sf(0.0, 3, 7), 1.0);
    EXPECT_EQ(f_sf(std::numeric_limits<double>::infinity(), 3, 7), 0.0);
}

TEST(FDistribution, AgainstQuadrature) {
    // F(1, 2): P(F > f) = 1 - sqrt(f / (2 + f)) from the t(2) distribution.
    EXPECT_NEAR(f_sf(8.0, 1, 2), 1.0 - std::sqrt(8.0 / 10.0), 1e-12);
    EXPECT_NEAR(f_sf_quadrature(8.0, 1, 2), 1.0 - std::sqrt(8.0 / 10.0), 1e-12);
    EXPECT_NEAR(f_sf(8.0, 1, 2), f_sf_quadrature(8.0, 1, 2), 1e-10);
    for (auto [f, d1, d2] : std::vector<std::tuple<double, double, double>>{
             {0.3, 5, 9}, {2.5, 10, 40}, {1.2, 2, 300}, {4.0, 30, 3}, {0.05, 1, 1}, {15.0, 7, 12}})
        EXPECT_NEAR(f_sf(f, d1, d2), f_sf_quadrature(f, d1, d2), 1e-10) << f << " " << d1 << " " << d2;
}

TEST(FDistribution, LargeDegreesOfFreedomTail) {
    // Bonferroni-level tails with ANOVA-sized dfs stay finite and ordered.
    const double p1 = f_sf(3.0, 300, 2700);
    const double p2 = f_sf(3.5, 300, 2700);
    EXPECT_GT(p1, p2);
    EXPECT_GT(p2, 0.0);
    EXPECT_LT(p1, 1e-10);
}

TEST(Anova, HandComputedExample) {
    std::vector<double> v{1, 2, 3, 4};
    std::vector<std::int32_t> g{0, 0, 1, 1};
    const auto t = one_way_anova(v, g);
    EXPECT_EQ(t.ss_between, 4.0);
    EXPECT_EQ(t.ss_within, 1.0);
    EXPECT_EQ(t.f_ratio, 8.0);
    EXPECT_EQ(t.r_squared, 0.8);
    EXPECT_EQ(t.df_between, 1.0);
    EXPECT_EQ(t.df_within, 2.0);
    EXPECT_NEAR(t.p_value, 1.0 - std::sqrt(0.8), 1e-12);
}

TEST(Anova, IdenticalGroups) {
    std::vector<double> v{1, 2, 1, 2};
    std::vector<std::int32_t> g{0, 0, 1, 1};
    const auto t = one_way_anova(v, g);
    EXPECT_EQ(t.f_ratio, 0.0);
    EXPECT_EQ(t.p_value, 1.0);
}

TEST(Anova, TranslationInvariant) {
    std::vector<double> v{1, 2, 3, 4}, w{11, 12, 13, 14};
    std::vector<std::int32_t> g{0, 0, 1, 1};
    const auto a = one_way_anova(v, g), b = one_way_anova(w, g);
    EXPECT_EQ(a.f_ratio, b.f_ratio);
    EXPECT_EQ(a.r_squared, b.r_squared);
    EXPECT_EQ(a.p_value, b.p_value);
}

TEST(Anova, DegenerateInputs) {
    std::vector<double> same{2, 2, 2, 2};
    std::vector<std::int32_t> g{0, 0, 1, 1};
    EXPECT_THROW(one_way_anova(same, g), DegenerateError);
    std::vector<std::int32_t> one_group{0, 0, 0, 0};
    std::vector<double> v{1, 2, 3, 4};
    EXPECT_THROW(one_way_anova(v, one_group), DegenerateError);
    std::vector<std::int32_t> all_singletons{0, 1, 2, 3};
    EXPECT_THROW(one_way_anova(v, all_singletons), DegenerateError);
}

TEST(Anova, SingletonGroupsContributeBetweenOnly) {
    std::vector<double> v{1, 2, 10};
    std::vector<std::int32_t> g{0, 0, 1};
    const auto t = one_way_anova(v, g);
    EXPECT_NEAR(t.ss_within, 0.5, 1e-15);
    EXPECT_EQ(t.df_within, 1.0);
    EXPECT_EQ(t.df_between, 1.0);
}

TEST(Anova, PerfectSeparationGivesInfiniteF) {
    std::vector<double> v{1, 1, 5, 5};
    std::vector<std::int32_t> g{0, 0, 1, 1};
    const auto t = one_way_anova(v, g);
    EXPECT_TRUE(std::isinf(t.f_ratio));
    EXPECT_EQ(t.p_value, 0.0);
    EXPECT_EQ(t.r_squared, 1.0);
}

TEST(Anova, AffineAndPermutationInvariance) {
    Philox rng(11, 1);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 20 + rng.below(40);
        std::vector<double> v(n);
        std::vector<std::int32_t> g(n);
        for (std::size_t i = 0; i < n; ++i) {
            g[i] = static_cast<std::int32_t>(rng.below(5));
            v[i] = rng.normal() + 0.5 * g[i];
        }
        g[0] = 0;
        g[1] = 1;
        const auto base = one_way_anova(v, g);
        std::vector<double> w(v);
        for (auto& x : w) x = -2.5 * x + 100.0;
        const auto aff = one_way_anova(w, g);
        EXPECT_NEAR(aff.f_ratio, base.f_ratio, 1e-9 * base.f_ratio);
        EXPECT_NEAR(aff.r_squared, base.r_squared, 1e-12);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        shuffle(std::span(perm), rng);
        std::vector<double> pv(n);
        std::vector<std::int32_t> pg(n);
        for (std::size_t i = 0; i < n; ++i) {
            pv[i] = v[perm[i]];
            pg[i] = g[perm[i]];
        }
        const auto p = one_way_anova(pv, pg);
        EXPECT_NEAR(p.f_ratio, base.f_ratio, 1e-10 * base.f_ratio);
        EXPECT_NEAR(p.r_squared, base.r_squared, 1e-13);
    }
}

TEST(Anova, MatchesBruteForceSumsOfSquares) {
    Philox rng(12, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 2 + rng.below(8);
        const std::size_t n = 2 * k + rng.below(200);
        std::vector<double> v(n);
        std::vector<std::int32_t> g(n);
        for (std::size_t i = 0; i < n; ++i) {
            g[i] = static_cast<std::int32_t>(i < k ? i : rng.below(k));
            v[i] = rng.normal() * 3.0 + static_cast<double>(g[i]);
        }
        const auto t = one_way_anova(v, g);
        double grand = 0.0;
        for (double x : v) grand += x;
        grand /= n;
        double sst = 0.0;
        for (double x : v) sst += (x - grand) * (x - grand);
        const double ssb = brute_ss_between(v, g);
        EXPECT_NEAR(t.ss_between, ssb, 1e-12 * sst);
        EXPECT_NEAR(t.r_squared, ssb / sst, 1e-12);
    }
}

TEST(Anova, WelchMatchesTwoGroupWelchT) {
    // For two groups Welch's F equals the square of Welch's t.
    std::vector<double> v{1.0, 2.0, 4.0, 3.0, 7.0, 8.0, 10.0, 15.0, 9.0};
    std::vector<std::int32_t> g{0, 0, 0, 0, 1, 1, 1, 1, 1};
    const auto t = one_way_anova(v, g, ErrorTerm::welch);
    const double m1 = 2.5, m2 = 9.8;
    const double s1 = (2.25 + 0.25 + 2.25 + 0.25) / 3.0;
    const double s2 = (7.84 + 3.24 + 0.04 + 27.04 + 0.64) / 4.0;
    const double se2 = s1 / 4 + s2 / 5;
    EXPECT_NEAR(t.f_ratio, (m2 - m1) * (m2 - m1) / se2, 1e-12);
    const double df = se2 * se2 / (s1 * s1 / 16 / 3 + s2 * s2 / 25 / 4);
    EXPECT_NEAR(t.df_within, df, 1e-9);
}

TEST(Eigendecompose, CollinearData) {
    Matrix x(4, 2, std::vector<double>{1, 0, -1, 0, 2, 0, -2, 0});
    const auto e = eigendecompose(x);
    EXPECT_NEAR(std::abs(e.vectors(0, 0)), 1.0, 1e-14);
    EXPECT_NEAR(e.vectors(1, 0), 0.0, 1e-14);
    EXPECT_NEAR(e.values[0], 10.0 / 3.0, 1e-13);
    EXPECT_NEAR(e.values[1], 0.0, 1e-14);
}

TEST(Eigendecompose, ReconstructsCovariance) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Matrix x = random_matrix(60, 12, seed) * random_matrix(12, 12, seed + 77);
        const auto e = eigendecompose(x);
        const Matrix c = covariance(x);
        Matrix lam(12, 12);
        for (std::size_t k = 0; k < 12; ++k) lam(k, k) = e.values[k];
        const Matrix rec = e.vectors * lam * e.vectors.transposed();
        EXPECT_LT(max_abs(rec - c), 1e-8);
        EXPECT_LT(max_abs(e.vectors.transposed() * e.vectors - Matrix::identity(12)), 1e-8);
        for (std::size_t k = 1; k < 12; ++k) EXPECT_GE(e.values[k - 1], e.values[k]);
    }
}

TEST(Eigendecompose, RotationInvariantEigenvalues) {
    const Matrix x = random_matrix(80, 10, 3);
    const Matrix q = random_orthonormal(10, 4);
    const auto a = eigendecompose(x), b = eigendecompose(x * q);
    for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(a.values[k], b.values[k], 1e-8);
}

TEST(Eigendecompose, WideDataGivesFullBasis) {
    const Matrix x = random_matrix(5, 9, 21);
    const auto e = eigendecompose(x);
    EXPECT_EQ(e.vectors.rows(), 9u);
    EXPECT_EQ(e.vectors.cols(), 9u);
    EXPECT_LT(max_abs(e.vectors.transposed() * e.vectors - Matrix::identity(9)), 1e-10);
    for (std::size_t k = 4; k < 9; ++k) EXPECT_NEAR(e.values[k], 0.0, 1e-12);
    double trace = 0.0;
    const Matrix c = covariance(x);
    for (std::size_t i = 0; i < 9; ++i) trace += c(i, i);
    double sum = 0.0;
    for (double v : e.values) sum += v;
    EXPECT_NEAR(sum, trace, 1e-10);
}

TEST(Eigendecompose, SignConvention) {
    const auto e = eigendecompose(random_matrix(40, 6, 8));
    for (std::size_t k = 0; k < 6; ++k) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < 6; ++i)
            if (std::abs(e.vectors(i, k)) > std::abs(e.vectors(arg, k))) arg = i;
        EXPECT_GT(e.vectors(arg, k), 0.0);
    }
}

TEST(PseudoInverse, Identity) {
    EXPECT_LT(max_abs(pseudo_inverse(Matrix::identity(3)) - Matrix::identity(3)), 1e-15);
}

TEST(PseudoInverse, ColumnVector) {
    const Matrix p = pseudo_inverse(Matrix(2, 1, std::vector<double>{1, 2}));
    ASSERT_EQ(p.rows(), 1u);
    ASSERT_EQ(p.cols(), 2u);
    EXPECT_NEAR(p(0, 0), 0.2, 1e-15);
    EXPECT_NEAR(p(0, 1), 0.4, 1e-15);
}

TEST(PseudoInverse, MatchesNormalEquations) {
    const Matrix x = random_matrix(20, 5, 31);
    const Matrix xtx = x.transposed() * x;
    Matrix expected(5, 20);
    for (std::size_t j = 0; j < 20; ++j) {
        std::vector<double> col(5);
        for (std::size_t i = 0; i < 5; ++i) col[i] = x(j, i);
        const auto sol = solve_spd(xtx, col);
        ASSERT_TRUE(sol.has_value());
        for (std::size_t i = 0; i < 5; ++i) expected(i, j) = (*sol)[i];
    }
    EXPECT_LT(max_abs(pseudo_inverse(x) - expected), 1e-8);
}

TEST(PseudoInverse, PenroseConditions) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t m = 3 + seed % 7, n = 2 + (seed * 5) % 9;
        const std::size_t r = 1 + seed % std::min(m, n);
        const Matrix a = seed % 2 ? random_matrix(m, n, seed) : random_low_rank(m, n, r, seed);
        const Matrix p = pseudo_inverse(a);
        EXPECT_LT(max_abs(a * p * a - a), 1e-8);
        EXPECT_LT(max_abs(p * a * p - p), 1e-8);
        const Matrix ap = a * p, pa = p * a;
        EXPECT_LT(max_abs(ap - ap.transposed()), 1e-8);
        EXPECT_LT(max_abs(pa - pa.transposed()), 1e-8);
    }
}

TEST(PseudoInverse, SolveMatchesExplicitInverse) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix a = seed % 2 ? random_matrix(30, 6, seed) : random_low_rank(30, 6, 3, seed);
        std::vector<double> y(30);
        Philox rng(seed, 3);
        for (auto& v : y) v = rng.normal();
        const auto x1 = pinv_solve(a, y);
        const auto x2 = pseudo_inverse(a) * std::span<const double>(y);
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(x1[i], x2[i], 1e-9);
    }
}

TEST(Svd, Reconstructs) {
    const Matrix a = random_matrix(9, 4, 2);
    const auto d = svd(a);
    Matrix s(4, 4);
    for (std::size_t i = 0; i < 4; ++i) s(i, i) = d.s[i];
    EXPECT_LT(max_abs(d.u * s * d.v.transposed() - a), 1e-12);
    const auto w = svd(a.transposed());
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(w.s[i], d.s[i], 1e-12);
}

TEST(KolmogorovSmirnov, IdenticalAndShiftedSamples) {
    Philox rng(4, 4);
    std::vector<double> a(400), b(400), c(400);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    for (auto& v : c) v = rng.normal() + 1.0;
    EXPECT_GT(ks_two_sample(a, b).p_value, 0.01);
    EXPECT_LT(ks_two_sample(a, c).p_value, 1e-6);
    std::vector<double> u(500);
    for (auto& v : u) v = rng.uniform();
    EXPECT_GT(ks_uniform(u).p_value, 0.01);
    for (auto& v : u) v = v * v;
    EXPECT_LT(ks_uniform(u).p_value, 1e-6);
}

TEST(Quantile, LinearInterpolation) {
    std::vector<double> s{1, 2, 3, 4};
    EXPECT_DOUBLE_EQ(quantile_sorted(s, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile_sorted(s, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(quantile_sorted(s, 0.0), 1.0);
}
