#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facespace/dataset.hpp"
#include "facespace/error.hpp"
#include "facespace/rng.hpp"
#include "facespace/unitstats.hpp"

namespace facespace {

// Planted-structure generator:
//   x = c_id + s_gender * sigma_gender * u_gender + (yaw / 90) * sigma_view * u_view + sigma_noise * eps
// with identity centroids c_id ~ sigma_identity * N(0, I) (or confined to an
// identity subspace orthogonal to the planted directions when identity_dims > 0).
struct SynthSpec {
    std::size_t dimension = 128;
    std::size_t n_identities = 300;
    std::size_t images_min = 10;
    std::size_t images_max = 10;
    double sigma_identity = 1.0;
    double sigma_gender = 1.0;
    double sigma_view = 1.0;
    double sigma_noise = 0.6;
    std::size_t gender_direction_count = 1;
    std::size_t view_direction_count = 1;
    std::size_t identity_dims = 0; // 0: isotropic in all D dimensions
    std::uint64_t seed = 0;

    void validate() const {
        if (dimension < 2) throw ConfigError("synth: dimension must be >= 2");
        if (n_identities < 2) throw ConfigError("synth: need at least 2 identities");
        if (images_min < 1 || images_max < images_min) throw ConfigError("synth: need 1 <= images_min <= images_max");
        for (double s : {sigma_identity, sigma_gender, sigma_view, sigma_noise})
            if (!std::isfinite(s) || s < 0.0) throw ConfigError("synth: sigmas must be finite and non-negative");
        if (sigma_identity == 0.0 && sigma_gender == 0.0 && sigma_view == 0.0 && sigma_noise == 0.0)
            throw ConfigError("synth: at least one sigma must be positive");
        if (sigma_gender > 0.0 && gender_direction_count == 0)
            throw ConfigError("synth: sigma_gender > 0 needs a gender direction");
        if (sigma_view > 0.0 && view_direction_count == 0) throw ConfigError("synth: sigma_view > 0 needs a view direction");
        if (gender_direction_count + view_direction_count + identity_dims > dimension)
            throw ConfigError("synth: planted directions plus identity_dims exceed dimension");
    }

    friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

struct GroundTruth {
    SynthSpec spec;
    std::vector<std::vector<double>> gender_directions; // orthonormal set, each length D
    std::vector<std::vector<double>> view_directions;
    std::vector<double> gender_axis; // normalized sum of gender_directions (empty if none)
    std::vector<double> view_axis;
    std::vector<std::vector<double>> identity_basis; // identity_dims vectors, orthogonal to the above
};

struct SynthData {
    EmbeddingSet embeddings;
    AttributeTable attributes;
    GroundTruth truth;
};

namespace detail {

// Modified Gram-Schmidt, two passes, on Gaussian draws.
inline std::vector<std::vector<double>> random_orthonormal_set(std::size_t count, std::size_t dim, Philox& rng) {
    std::vector<std::vector<double>> q;
    while (q.size() < count) {
        std::vector<double> v(dim);
        for (double& e : v) e = rng.normal();
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& p : q) {
                const double d = dot(v, p);
                for (std::size_t i = 0; i < dim; ++i) v[i] -= d * p[i];
            }
        const double n = norm2(v);
        if (n < 1e-6) continue; // numerically dependent draw; redraw
        for (double& e : v) e /= n;
        q.push_back(std::move(v));
    }
    return q;
}

inline std::vector<double> normalized_sum(const std::vector<std::vector<double>>& dirs, std::size_t dim) {
    if (dirs.empty()) return {};
    std::vector<double> s(dim, 0.0);
    for (const auto& d : dirs)
        for (std::size_t i = 0; i < dim; ++i) s[i] += d[i];
    const double n = norm2(s);
    for (double& e : s) e /= n;
    return s;
}

inline std::string padded(const char* prefix, std::size_t value, std::size_t width) {
    std::string digits = std::to_string(value);
    if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
    return prefix + digits;
}

} // namespace detail

// Stream layout under the synth domain: (0) directions, (1) gender assignment,
// (2, id) image count, (3, id) centroid, (4, id) images of that identity.
inline SynthData generate(const SynthSpec& spec) {
    spec.validate();
    const std::size_t d = spec.dimension;
    GroundTruth truth;
    truth.spec = spec;
    {
        Philox rng(spec.seed, stream_id(streams::synth, 0));
        auto all = detail::random_orthonormal_set(spec.gender_direction_count + spec.view_direction_count + spec.identity_dims,
                                                  d, rng);
        auto it = all.begin();
        truth.gender_directions.assign(it, it + static_cast<std::ptrdiff_t>(spec.gender_direction_count));
        it += static_cast<std::ptrdiff_t>(spec.gender_direction_count);
        truth.view_directions.assign(it, it + static_cast<std::ptrdiff_t>(spec.view_direction_count));
        it += static_cast<std::ptrdiff_t>(spec.view_direction_count);
        truth.identity_basis.assign(it, all.end());
    }
    truth.gender_axis = detail::normalized_sum(truth.gender_directions, d);
    truth.view_axis = detail::normalized_sum(truth.view_directions, d);

    // Balanced genders: a shuffled half of the identities are male.
    std::vector<Gender> gender(spec.n_identities, Gender::female);
    {
        std::vector<std::size_t> order(spec.n_identities);
        std::iota(order.begin(), order.end(), 0);
        Philox rng(spec.seed, stream_id(streams::synth, 1));
        shuffle(std::span(order), rng);
        for (std::size_t i = 0; i < spec.n_identities / 2; ++i) gender[order[i]] = Gender::male;
    }

    const std::size_t id_width = std::max<std::size_t>(5, std::to_string(spec.n_identities).size());
    std::vector<std::size_t> count(spec.n_identities);
    std::size_t total = 0;
    for (std::size_t id = 0; id < spec.n_identities; ++id) {
        Philox rng(spec.seed, stream_id(streams::synth, 2, id));
        count[id] = spec.images_min + rng.below(spec.images_max - spec.images_min + 1);
        total += count[id];
    }
    const std::size_t img_width = std::max<std::size_t>(6, std::to_string(total).size());

    Matrix x(total, d);
    std::vector<std::string> ids(total);
    std::vector<AttributeRecord> recs(total);
    std::vector<double> centroid(d);
    std::size_t row = 0;
    for (std::size_t id = 0; id < spec.n_identities; ++id) {
        Philox crng(spec.seed, stream_id(streams::synth, 3, id));
        std::fill(centroid.begin(), centroid.end(), 0.0);
        if (spec.identity_dims == 0) {
            for (double& e : centroid) e = spec.sigma_identity * crng.normal();
        } else {
            for (const auto& b : truth.identity_basis) {
                const double z = spec.sigma_identity * crng.normal();
                for (std::size_t j = 0; j < d; ++j) centroid[j] += z * b[j];
            }
        }
        const double g = gender[id] == Gender::male ? 1.0 : -1.0;
        const std::string label = detail::padded("id", id, id_width);
        Philox rng(spec.seed, stream_id(streams::synth, 4, id));
        for (std::size_t k = 0; k < count[id]; ++k, ++row) {
            const double yaw = -90.0 + 180.0 * rng.uniform();
            auto r = x.row(row);
            for (std::size_t j = 0; j < d; ++j) {
                double v = centroid[j] + spec.sigma_noise * rng.normal();
                if (!truth.gender_axis.empty()) v += g * spec.sigma_gender * truth.gender_axis[j];
                if (!truth.view_axis.empty()) v += (yaw / 90.0) * spec.sigma_view * truth.view_axis[j];
                // stored values are exactly representable in the binary format
                r[j] = static_cast<double>(static_cast<float>(v));
            }
            ids[row] = detail::padded("img", row, img_width);
            recs[row] = {ids[row], label, gender[id], yaw};
        }
    }
    return SynthData{EmbeddingSet(std::move(x), std::move(ids)), AttributeTable(std::move(recs)), std::move(truth)};
}

inline nlohmann::json to_json(const SynthSpec& s) {
    return {{"dimension", s.dimension},
            {"n_identities", s.n_identities},
            {"images_per_identity", {s.images_min, s.images_max}},
            {"sigma_identity", s.sigma_identity},
            {"sigma_gender", s.sigma_gender},
            {"sigma_view", s.sigma_view},
            {"sigma_noise", s.sigma_noise},
            {"gender_direction_count", s.gender_direction_count},
            {"view_direction_count", s.view_direction_count},
            {"identity_dims", s.identity_dims},
            {"seed", s.seed}};
}

inline SynthSpec spec_from_json(const nlohmann::json& j) {
    try {
        SynthSpec s;
        s.dimension = j.at("dimension").get<std::size_t>();
        s.n_identities = j.at("n_identities").get<std::size_t>();
        const auto ipi = j.at("images_per_identity").get<std::vector<std::size_t>>();
        if (ipi.size() != 2) throw DataError("synth spec: images_per_identity must be [min, max]");
        s.images_min = ipi[0];
        s.images_max = ipi[1];
        s.sigma_identity = j.at("sigma_identity").get<double>();
        s.sigma_gender = j.at("sigma_gender").get<double>();
        s.sigma_view = j.at("sigma_view").get<double>();
        s.sigma_noise = j.at("sigma_noise").get<double>();
        s.gender_direction_count = j.at("gender_direction_count").get<std::size_t>();
        s.view_direction_count = j.at("view_direction_count").get<std::size_t>();
        s.identity_dims = j.value("identity_dims", std::size_t{0});
        s.seed = j.at("seed").get<std::uint64_t>();
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("synth spec: ") + e.what());
    }
}

// Sidecar with the generator settings and every planted direction.
inline nlohmann::json to_json(const GroundTruth& t) {
    return {{"spec", to_json(t.spec)},
            {"gender_directions", t.gender_directions},
            {"view_directions", t.view_directions},
            {"gender_axis", t.gender_axis},
            {"view_axis", t.view_axis},
            {"identity_basis", t.identity_basis}};
}

// Mean per-unit identity r^2 of the generated data.
inline double mean_identity_r2(const SynthData& data) {
    return mean_r_squared(unit_anova(data.embeddings, data.attributes, Attribute::identity));
}

struct CalibrationResult {
    SynthSpec spec;
    double achieved = 0.0;
    std::size_t evaluations = 0;
};

inline constexpr double calibration_tolerance = 0.02;

// Bisection on sigma_noise with everything else (seed included) fixed, so every
// evaluation reuses the same underlying draws and r^2 falls monotonically in
// sigma_noise. Stops once within tolerance / 10 of the target.
inline CalibrationResult calibrate(double target_r2, SynthSpec tmpl, double tolerance = calibration_tolerance) {
    if (!(target_r2 > 0.0 && target_r2 < 1.0)) throw ConfigError("calibrate: target r^2 must lie in (0, 1)");
    CalibrationResult res;
    auto measure = [&](double sigma) {
        tmpl.sigma_noise = sigma;
        ++res.evaluations;
        return mean_identity_r2(generate(tmpl));
    };
    auto accept = [&](double sigma, double r2) {
        tmpl.sigma_noise = sigma;
        res.spec = tmpl;
        res.achieved = r2;
        return res;
    };
    const double scale = std::max({tmpl.sigma_identity, tmpl.sigma_gender, tmpl.sigma_view, 1e-3});
    const double r_lo = tmpl.sigma_identity > 0.0 || tmpl.sigma_gender > 0.0 || tmpl.sigma_view > 0.0 ? measure(0.0) : 0.0;
    if (std::abs(r_lo - target_r2) <= tolerance / 10.0) return accept(0.0, r_lo);
    if (r_lo < target_r2)
        throw DegenerateError("calibrate: target r^2 " + std::to_string(target_r2) +
                              " unreachable; noise-free data reaches only " + std::to_string(r_lo));
    double lo = 0.0, hi = scale, r_hi = measure(hi);
    for (int i = 0; r_hi > target_r2 && i < 40; ++i) {
        lo = hi;
        hi *= 2.0;
        r_hi = measure(hi);
    }
    if (r_hi > target_r2)
        throw DegenerateError("calibrate: target r^2 " + std::to_string(target_r2) +
                              " unreachable; chance-level r^2 is " + std::to_string(r_hi));
    double best_sigma = hi, best_r2 = r_hi;
    for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double r = measure(mid);
        if (std::abs(r - target_r2) < std::abs(best_r2 - target_r2)) {
            best_sigma = mid;
            best_r2 = r;
        }
        if (std::abs(r - target_r2) <= tolerance / 10.0) break;
        (r > target_r2 ? lo : hi) = mid;
    }
    if (std::abs(best_r2 - target_r2) > tolerance)
        throw DegenerateError("calibrate: bisection ended at r^2 " + std::to_string(best_r2) + ", target " +
                              std::to_string(target_r2));
    return accept(best_sigma, best_r2);
}

} // namespace facespace
