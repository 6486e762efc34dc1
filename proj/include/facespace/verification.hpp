#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "facespace/dataset.hpp"
#include "facespace/error.hpp"
#include "facespace/parallel.hpp"
#include "facespace/rng.hpp"
#include "facespace/stats.hpp"
#include "facespace/subspace.hpp"

namespace facespace {

// Disjoint galleries A and B for cross-gallery verification.
struct VerificationSplit {
    std::vector<std::string> set_a;
    std::vector<std::string> set_b;
    std::uint64_t seed = 0;
};

// Each image goes to A with probability `fraction`, independently, in table row order.
inline VerificationSplit make_split(const AttributeTable& attrs, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("make_split: fraction must lie in (0, 1)");
    Philox rng(seed, stream_id(streams::split));
    VerificationSplit split;
    split.seed = seed;
    for (const auto& rec : attrs.records()) (rng.uniform() < fraction ? split.set_a : split.set_b).push_back(rec.image_id);
    if (split.set_a.empty() || split.set_b.empty())
        throw DegenerateError("make_split: one side of the split is empty (seed " + std::to_string(seed) + ")");
    return split;
}

inline double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw ConfigError("cosine: length mismatch");
    double uu = 0.0, vv = 0.0, uv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uu += u[i] * u[i];
        vv += v[i] * v[i];
        uv += u[i] * v[i];
    }
    if (uu == 0.0 || vv == 0.0) throw DegenerateError("cosine: zero vector");
    return std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
}

enum class Similarity {
    cosine, // re-normalizes within whatever subspace is scored
    dot     // raw inner product of the (projected) descriptors
};

enum class ZeroNormPolicy {
    score_zero, // pairs touching a zero-norm descriptor score 0 and are counted
    error       // any zero-norm descriptor raises DegenerateError
};

struct ScoreOptions {
    Similarity similarity = Similarity::cosine;
    ZeroNormPolicy zero_policy = ZeroNormPolicy::score_zero;
};

// Genuine (same identity) and impostor scores over all A x B pairs. Scores are
// ordered by A row, then B row.
struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> impostor;
    std::size_t zero_norm_pairs = 0;

    std::size_t total() const noexcept { return genuine.size() + impostor.size(); }
};

// Split ids resolved to embedding rows.
struct SplitRows {
    std::vector<std::size_t> a;
    std::vector<std::size_t> b;
};

inline SplitRows resolve_split(const EmbeddingSet& emb, const VerificationSplit& split) {
    SplitRows rows;
    auto resolve = [&](const std::vector<std::string>& ids, std::vector<std::size_t>& out) {
        out.reserve(ids.size());
        for (const auto& id : ids) {
            auto r = emb.index_of(id);
            if (!r) throw DataError("split: image_id '" + id + "' not in embeddings");
            out.push_back(*r);
        }
    };
    resolve(split.set_a, rows.a);
    resolve(split.set_b, rows.b);
    std::vector<bool> in_a(emb.size(), false);
    for (auto r : rows.a) in_a[r] = true;
    for (auto r : rows.b)
        if (in_a[r]) throw DataError("split: image_id '" + emb.image_ids()[r] + "' is in both galleries");
    return rows;
}

// Identity code for every embedding row.
inline std::vector<std::int32_t> identity_codes_for(const EmbeddingSet& emb, const AttributeTable& attrs) {
    std::vector<std::int32_t> codes(emb.size());
    const auto& ic = attrs.codes(Attribute::identity);
    for (std::size_t r = 0; r < emb.size(); ++r) {
        auto idx = attrs.index_of(emb.image_ids()[r]);
        if (!idx) throw DataError("attributes: no row for image_id '" + emb.image_ids()[r] + "'");
        codes[r] = ic[*idx];
    }
    return codes;
}

namespace detail {

inline constexpr std::size_t score_row_block = 4;
inline constexpr std::size_t score_col_block = 256;

// Rows of `x` listed in `rows`, scaled to unit norm for cosine; zero rows stay zero.
inline Matrix gallery(const Matrix& x, std::span<const std::size_t> rows, Similarity sim, std::size_t& zero_rows) {
    Matrix g = x.select_rows(rows);
    zero_rows = 0;
    for (std::size_t i = 0; i < g.rows(); ++i) {
        auto r = g.row(i);
        const double n = norm2(r);
        if (n == 0.0) {
            ++zero_rows;
            continue;
        }
        if (sim == Similarity::cosine)
            for (double& v : r) v /= n;
    }
    return g;
}

} // namespace detail

// Exhaustive A x B scoring. Work is tiled (4 A rows x 256 B columns) and
// distributed over A-row blocks; every score lands at a precomputed position,
// so output is identical for any worker count.
inline ScoreSet score_pairs(const Matrix& x, std::span<const std::int32_t> identity, const SplitRows& rows,
                            const ScoreOptions& opt = {}) {
    if (rows.a.empty() || rows.b.empty()) throw DegenerateError("score_pairs: empty gallery");
    std::size_t zero_a = 0, zero_b = 0;
    const Matrix ga = detail::gallery(x, rows.a, opt.similarity, zero_a);
    const Matrix gb = detail::gallery(x, rows.b, opt.similarity, zero_b);
    if ((zero_a || zero_b) && opt.zero_policy == ZeroNormPolicy::error)
        throw DegenerateError("score_pairs: zero-norm descriptor (" + std::to_string(zero_a + zero_b) + " rows)");
    const Matrix bt = gb.transposed();
    const std::size_t na = ga.rows(), nb = gb.rows(), k = ga.cols();

    std::int32_t max_code = 0;
    for (auto r : rows.a) max_code = std::max(max_code, identity[r]);
    for (auto r : rows.b) max_code = std::max(max_code, identity[r]);
    std::vector<std::size_t> b_count(static_cast<std::size_t>(max_code) + 1, 0);
    std::vector<std::int32_t> b_id(nb);
    for (std::size_t j = 0; j < nb; ++j) {
        b_id[j] = identity[rows.b[j]];
        ++b_count[b_id[j]];
    }
    std::vector<std::size_t> g_off(na + 1, 0), i_off(na + 1, 0);
    for (std::size_t i = 0; i < na; ++i) {
        const std::size_t g = b_count[identity[rows.a[i]]];
        g_off[i + 1] = g_off[i] + g;
        i_off[i + 1] = i_off[i] + (nb - g);
    }

    ScoreSet out;
    out.genuine.resize(g_off[na]);
    out.impostor.resize(i_off[na]);
    out.zero_norm_pairs = zero_a * nb + zero_b * na - zero_a * zero_b;
    const bool clamp = opt.similarity == Similarity::cosine;

    const std::size_t blocks = (na + detail::score_row_block - 1) / detail::score_row_block;
    parallel_for(blocks, [&](std::size_t blk) {
        const std::size_t i0 = blk * detail::score_row_block;
        const std::size_t ni = std::min(detail::score_row_block, na - i0);
        std::array<std::size_t, detail::score_row_block> gc{}, ic{};
        std::array<std::int32_t, detail::score_row_block> aid{};
        for (std::size_t r = 0; r < ni; ++r) {
            gc[r] = g_off[i0 + r];
            ic[r] = i_off[i0 + r];
            aid[r] = identity[rows.a[i0 + r]];
        }
        std::array<std::array<double, detail::score_col_block>, detail::score_row_block> acc;
        for (std::size_t j0 = 0; j0 < nb; j0 += detail::score_col_block) {
            const std::size_t nj = std::min(detail::score_col_block, nb - j0);
            for (std::size_t r = 0; r < ni; ++r) std::fill_n(acc[r].begin(), nj, 0.0);
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double* brow = bt.row(kk).data() + j0;
                for (std::size_t r = 0; r < ni; ++r) {
                    const double a = ga(i0 + r, kk);
                    double* accr = acc[r].data();
                    for (std::size_t j = 0; j < nj; ++j) accr[j] += a * brow[j];
                }
            }
            for (std::size_t r = 0; r < ni; ++r) {
                for (std::size_t j = 0; j < nj; ++j) {
                    double s = acc[r][j];
                    if (clamp) s = std::clamp(s, -1.0, 1.0);
                    if (b_id[j0 + j] == aid[r])
                        out.genuine[gc[r]++] = s;
                    else
                        out.impostor[ic[r]++] = s;
                }
            }
        }
    });
    return out;
}

inline ScoreSet score_pairs(const EmbeddingSet& emb, const AttributeTable& attrs, const VerificationSplit& split,
                            const ScoreOptions& opt = {}) {
    const auto codes = identity_codes_for(emb, attrs);
    return score_pairs(emb.descriptors(), codes, resolve_split(emb, split), opt);
}

// Mann-Whitney AUC: P(genuine > impostor) + P(tie) / 2.
//
// Uses the rank-sum identity on the smaller class only: the midrank sum of a
// class equals its within-class rank sum (n(n+1)/2) plus, for each member, the
// number of other-class scores below it plus half the ties. The accumulator is
// an integer, so the result equals exhaustive pair counting up to one rounding.
inline double auc(std::span<const double> genuine, std::span<const double> impostor) {
    if (genuine.empty() || impostor.empty()) throw DegenerateError("auc: need at least one genuine and one impostor score");
    const bool sort_genuine = genuine.size() <= impostor.size();
    std::vector<double> sorted(sort_genuine ? genuine.begin() : impostor.begin(),
                               sort_genuine ? genuine.end() : impostor.end());
    std::sort(sorted.begin(), sorted.end());
    const auto scan = sort_genuine ? impostor : genuine;
    // twice the number of (scan, sorted) pairs where sorted < scan, ties counted once
    unsigned __int128 twice_below = 0;
    for (double x : scan) {
        const auto lo = std::lower_bound(sorted.begin(), sorted.end(), x);
        const auto hi = std::upper_bound(lo, sorted.end(), x);
        twice_below += 2 * static_cast<std::uint64_t>(lo - sorted.begin()) + static_cast<std::uint64_t>(hi - lo);
    }
    const unsigned __int128 twice_pairs =
        static_cast<unsigned __int128>(2) * genuine.size() * static_cast<unsigned __int128>(impostor.size());
    // sort_genuine: twice_below counts impostor-over-genuine wins.
    const unsigned __int128 twice_genuine_wins = sort_genuine ? twice_pairs - twice_below : twice_below;
    return static_cast<double>(twice_genuine_wins) / static_cast<double>(twice_pairs);
}

inline double auc(const ScoreSet& s) { return auc(s.genuine, s.impostor); }

struct AblationRow {
    std::size_t size = 0;
    std::size_t replicate = 0;
    double auc = 0.0;
    std::size_t zero_norm_pairs = 0;
};

struct SizeSummary {
    std::size_t size = 0;
    double mean = 0.0;
    double sd = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rows; // size-major, replicate-minor, in plan order
    std::vector<SizeSummary> summary;
};

inline std::vector<SizeSummary> summarize_by_size(const std::vector<std::size_t>& sizes,
                                                  const std::vector<std::vector<double>>& values) {
    std::vector<SizeSummary> out;
    for (std::size_t s = 0; s < sizes.size(); ++s) {
        const auto& v = values[s];
        SizeSummary sm{sizes[s], mean(v), stddev(v), *std::min_element(v.begin(), v.end()),
                       *std::max_element(v.begin(), v.end())};
        out.push_back(sm);
    }
    return out;
}

// Verification AUC in every subspace of the plan.
inline AblationResult ablation_curve(const EmbeddingSet& emb, const AttributeTable& attrs,
                                     const VerificationSplit& split, const SubspacePlan& plan,
                                     const ScoreOptions& opt = {}) {
    if (plan.dimension != emb.dimension())
        throw ConfigError("ablation: plan dimension " + std::to_string(plan.dimension) + " != embedding dimension " +
                          std::to_string(emb.dimension()));
    const auto codes = identity_codes_for(emb, attrs);
    const auto rows = resolve_split(emb, split);
    AblationResult res;
    res.rows.resize(plan.sample_count());
    parallel_for(plan.sample_count(), [&](std::size_t idx) {
        const std::size_t s = idx / plan.replicates, r = idx % plan.replicates;
        const Matrix sub = emb.descriptors().select_cols(plan.samples[s][r]);
        const ScoreSet scores = score_pairs(sub, codes, rows, opt);
        res.rows[idx] = {plan.sizes[s], r, auc(scores), scores.zero_norm_pairs};
    });
    std::vector<std::vector<double>> per_size(plan.sizes.size());
    for (std::size_t idx = 0; idx < res.rows.size(); ++idx) per_size[idx / plan.replicates].push_back(res.rows[idx].auc);
    res.summary = summarize_by_size(plan.sizes, per_size);
    return res;
}

} // namespace facespace
