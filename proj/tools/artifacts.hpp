#pragma once

// Output directory bookkeeping for one CLI command: CSV/JSON/SVG writers and
// the manifest that records config, seed, versions and content hashes.

#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "facespace/dataset.hpp"
#include "facespace/error.hpp"
#include "svg.hpp"

namespace facespace::cli {

inline constexpr const char* tool_version = "1.0.0";

inline std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256: digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

inline std::string csv_num(double v) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return detail::format_double(v);
}

// Small CSV builder. Every table carries the run seed as its first column.
class Csv {
public:
    Csv(std::uint64_t seed, std::vector<std::string> header) : seed_(std::to_string(seed)) {
        text_ = "seed";
        for (const auto& h : header) text_ += "," + h;
        text_ += "\n";
        cols_ = header.size();
    }

    Csv& row(const std::vector<std::string>& cells) {
        if (cells.size() != cols_) throw std::logic_error("csv: wrong cell count");
        text_ += seed_;
        for (const auto& c : cells) text_ += "," + c;
        text_ += "\n";
        return *this;
    }

    const std::string& text() const noexcept { return text_; }

private:
    std::string seed_;
    std::string text_;
    std::size_t cols_ = 0;
};

inline std::string cell(double v) { return csv_num(v); }
inline std::string cell(std::size_t v) { return std::to_string(v); }
inline std::string cell(const std::string& v) { return v; }
inline std::string cell(const char* v) { return v; }

// JSON double that maps non-finite values to strings rather than null.
inline nlohmann::json jnum(double v) {
    if (std::isfinite(v)) return v;
    return csv_num(v);
}

class ArtifactWriter {
public:
    ArtifactWriter(std::filesystem::path dir, std::string command, std::uint64_t seed, bool plots)
        : dir_(std::move(dir)), command_(std::move(command)), seed_(seed), plots_(plots) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw ConfigError("cannot create output directory '" + dir_.string() + "': " + ec.message());
    }

    const std::filesystem::path& dir() const noexcept { return dir_; }
    std::uint64_t seed() const noexcept { return seed_; }
    bool plots() const noexcept { return plots_; }

    void text(const std::string& name, std::string_view content) {
        detail::write_file(dir_ / name, content);
        artifacts_.push_back({{"file", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    }

    void json(const std::string& name, nlohmann::json j) {
        if (j.is_object()) {
            j["seed"] = seed_;
            j["command"] = command_;
        }
        text(name, j.dump(2) + "\n");
    }

    void csv(const std::string& name, const Csv& c) { text(name, c.text()); }

    void plot(const std::string& name, const svg::Plot& p) {
        if (!plots_) return;
        std::string body = svg::render(p);
        // seed as an XML comment after the root element opens
        const auto pos = body.find('\n');
        body.insert(pos + 1, "<!-- facespace " + command_ + " seed=" + std::to_string(seed_) + " -->\n");
        text(name, body);
    }

    // manifest.json is written last and lists every other artifact.
    void manifest(const nlohmann::json& config, const nlohmann::json& inputs) {
        nlohmann::json m;
        m["tool"] = "facespace";
        m["command"] = command_;
        m["seed"] = seed_;
        m["config"] = config;
        m["inputs"] = inputs;
        m["artifacts"] = artifacts_;
        m["versions"] = {{"facespace", tool_version},
                         {"compiler", compiler()},
                         {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                         {"openssl", OPENSSL_VERSION_TEXT}};
        detail::write_file(dir_ / "manifest.json", m.dump(2) + "\n");
    }

private:
    static std::string compiler() {
#if defined(__clang__)
        return std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
        return "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__) + "." +
               std::to_string(__GNUC_PATCHLEVEL__);
#else
        return "unknown";
#endif
    }

    std::filesystem::path dir_;
    std::string command_;
    std::uint64_t seed_;
    bool plots_;
    nlohmann::json artifacts_ = nlohmann::json::array();
};

} // namespace facespace::cli
