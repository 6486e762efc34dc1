#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facespace/dataset.hpp"
#include "facespace/error.hpp"
#include "facespace/rng.hpp"

namespace facespace {

// Random unit subsets for ablation. samples[s][r] is the sorted index list for
// sizes[s], replicate r. Sample (s, r) is drawn from its own Philox stream, so
// any sample can be regenerated alone.
struct SubspacePlan {
    std::size_t dimension = 0;
    std::vector<std::size_t> sizes;
    std::size_t replicates = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::vector<std::size_t>>> samples;

    std::size_t sample_count() const noexcept { return sizes.size() * replicates; }

    friend bool operator==(const SubspacePlan&, const SubspacePlan&) = default;
};

inline const std::vector<std::size_t>& reference_subspace_sizes() {
    static const std::vector<std::size_t> sizes{512, 256, 128, 64, 32, 16, 8, 4, 2};
    return sizes;
}

// Powers of two from the largest <= D down to 2, with D itself first when D is not a power of two.
inline std::vector<std::size_t> halving_sizes(std::size_t dimension) {
    std::vector<std::size_t> out;
    std::size_t p = 1;
    while (p * 2 <= dimension) p *= 2;
    if (p != dimension) out.push_back(dimension);
    for (; p >= 2; p /= 2) out.push_back(p);
    return out;
}

inline std::vector<std::size_t> draw_subspace(std::size_t dimension, std::size_t size, std::size_t size_index,
                                              std::size_t replicate, std::uint64_t seed) {
    Philox rng(seed, stream_id(streams::subspace, size_index, replicate));
    auto idx = sample_without_replacement(dimension, size, rng);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline SubspacePlan make_plan(std::size_t dimension, std::vector<std::size_t> sizes, std::size_t replicates,
                              std::uint64_t seed) {
    if (replicates < 1) throw ConfigError("subspace plan: replicates must be >= 1");
    if (sizes.empty()) throw ConfigError("subspace plan: no sizes given");
    for (auto s : sizes) {
        if (s < 1) throw ConfigError("subspace plan: size must be >= 1");
        if (s > dimension)
            throw ConfigError("subspace plan: size " + std::to_string(s) + " exceeds dimension " +
                              std::to_string(dimension));
    }
    SubspacePlan plan{dimension, std::move(sizes), replicates, seed, {}};
    plan.samples.resize(plan.sizes.size());
    for (std::size_t s = 0; s < plan.sizes.size(); ++s) {
        plan.samples[s].reserve(replicates);
        for (std::size_t r = 0; r < replicates; ++r)
            plan.samples[s].push_back(draw_subspace(dimension, plan.sizes[s], s, r, seed));
    }
    return plan;
}

// Column subset of the descriptors; ids and row order unchanged.
inline EmbeddingSet project(const EmbeddingSet& emb, std::span<const std::size_t> indices) {
    std::vector<bool> seen(emb.dimension(), false);
    for (auto i : indices) {
        if (i >= emb.dimension())
            throw ConfigError("project: index " + std::to_string(i) + " out of range for dimension " +
                              std::to_string(emb.dimension()));
        if (seen[i]) throw ConfigError("project: duplicate index " + std::to_string(i));
        seen[i] = true;
    }
    if (indices.size() < 2) {
        // EmbeddingSet requires D >= 2; single-unit projections stay as raw matrices.
        throw ConfigError("project: need at least 2 indices for an EmbeddingSet; use project_matrix");
    }
    return EmbeddingSet(emb.descriptors().select_cols(indices), emb.image_ids());
}

// Like project() but returns the bare matrix and allows a single column.
inline Matrix project_matrix(const Matrix& m, std::span<const std::size_t> indices) {
    std::vector<bool> seen(m.cols(), false);
    for (auto i : indices) {
        if (i >= m.cols()) throw ConfigError("project: index " + std::to_string(i) + " out of range");
        if (seen[i]) throw ConfigError("project: duplicate index " + std::to_string(i));
        seen[i] = true;
    }
    return m.select_cols(indices);
}

inline nlohmann::json to_json(const SubspacePlan& plan) {
    return nlohmann::json{{"dimension", plan.dimension},
                          {"sizes", plan.sizes},
                          {"replicates", plan.replicates},
                          {"seed", plan.seed},
                          {"samples", plan.samples}};
}

// Reads a plan and checks that the stored samples are what the seed regenerates.
inline SubspacePlan plan_from_json(const nlohmann::json& j) {
    try {
        SubspacePlan plan = make_plan(j.at("dimension").get<std::size_t>(), j.at("sizes").get<std::vector<std::size_t>>(),
                                      j.at("replicates").get<std::size_t>(), j.at("seed").get<std::uint64_t>());
        if (j.contains("samples") &&
            j.at("samples").get<std::vector<std::vector<std::vector<std::size_t>>>>() != plan.samples)
            throw DataError("subspace plan: stored samples do not match seed");
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("subspace plan: ") + e.what());
    }
}

} // namespace facespace
