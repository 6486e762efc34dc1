#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "facespace/error.hpp"
#include "facespace/matrix.hpp"

namespace facespace {

// N x D image descriptors with row-aligned unique image identifiers.
class EmbeddingSet {
public:
    EmbeddingSet() = default;
    EmbeddingSet(Matrix descriptors, std::vector<std::string> image_ids)
        : descriptors_(std::move(descriptors)), image_ids_(std::move(image_ids)) {
        validate();
    }

    std::size_t size() const noexcept { return descriptors_.rows(); }
    std::size_t dimension() const noexcept { return descriptors_.cols(); }
    const Matrix& descriptors() const noexcept { return descriptors_; }
    const std::vector<std::string>& image_ids() const noexcept { return image_ids_; }

    std::optional<std::size_t> index_of(std::string_view id) const {
        auto it = index_.find(std::string(id));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

private:
    void validate() {
        if (descriptors_.rows() < 2 || descriptors_.cols() < 2)
            throw DataError("embeddings: need N >= 2 and D >= 2, got " + std::to_string(descriptors_.rows()) +
                            " x " + std::to_string(descriptors_.cols()));
        if (image_ids_.size() != descriptors_.rows())
            throw DataError("embeddings: " + std::to_string(image_ids_.size()) + " ids for " +
                            std::to_string(descriptors_.rows()) + " rows");
        for (std::size_t r = 0; r < descriptors_.rows(); ++r)
            for (double v : descriptors_.row(r))
                if (!std::isfinite(v)) throw DataError("embeddings: non-finite value at row " + std::to_string(r + 1));
        index_.reserve(image_ids_.size());
        for (std::size_t r = 0; r < image_ids_.size(); ++r) {
            const auto& id = image_ids_[r];
            if (id.empty() || id.find_first_of(",\n\r") != std::string::npos)
                throw DataError("embeddings: invalid image_id at row " + std::to_string(r + 1));
            if (!index_.emplace(id, r).second)
                throw DataError("embeddings: duplicate image_id '" + id + "' at row " + std::to_string(r + 1));
        }
    }

    Matrix descriptors_;
    std::vector<std::string> image_ids_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class Gender : std::uint8_t { female = 0, male = 1 };

enum class ViewBin : std::uint8_t { frontal = 0, near_frontal, half_profile, near_profile, profile };

inline constexpr std::size_t view_bin_count = 5;

inline const char* to_string(ViewBin b) noexcept {
    constexpr std::array<const char*, view_bin_count> names{"frontal", "near-frontal", "half-profile", "near-profile",
                                                            "profile"};
    return names[static_cast<std::size_t>(b)];
}

inline constexpr double max_abs_yaw = 150.0;

// Bins |yaw| into [0,18], (18,36], (36,54], (54,72], (72,150].
inline ViewBin bin_viewpoint(double yaw) {
    const double a = std::abs(yaw);
    if (!(a <= max_abs_yaw)) throw DataError("yaw out of range [-150, 150]: " + std::to_string(yaw));
    if (a <= 18.0) return ViewBin::frontal;
    if (a <= 36.0) return ViewBin::near_frontal;
    if (a <= 54.0) return ViewBin::half_profile;
    if (a <= 72.0) return ViewBin::near_profile;
    return ViewBin::profile;
}

enum class Attribute { identity, gender, viewpoint };

inline const char* to_string(Attribute a) noexcept {
    switch (a) {
    case Attribute::identity: return "identity";
    case Attribute::gender: return "gender";
    case Attribute::viewpoint: return "viewpoint";
    }
    return "?";
}

struct AttributeRecord {
    std::string image_id;
    std::string identity;
    Gender gender = Gender::female;
    double yaw = 0.0;
};

// Per-image identity, gender and yaw, with integer codes for grouping.
// Identity codes follow the lexicographic order of identity labels, so they
// do not depend on row order.
class AttributeTable {
public:
    AttributeTable() = default;
    explicit AttributeTable(std::vector<AttributeRecord> records) : records_(std::move(records)) { build(); }

    std::size_t size() const noexcept { return records_.size(); }
    const std::vector<AttributeRecord>& records() const noexcept { return records_; }
    const AttributeRecord& operator[](std::size_t i) const noexcept { return records_[i]; }

    std::size_t identity_count() const noexcept { return identity_labels_.size(); }
    const std::vector<std::string>& identity_labels() const noexcept { return identity_labels_; }

    const std::vector<std::int32_t>& codes(Attribute a) const noexcept {
        switch (a) {
        case Attribute::identity: return identity_codes_;
        case Attribute::gender: return gender_codes_;
        case Attribute::viewpoint: return view_codes_;
        }
        return identity_codes_;
    }

    std::vector<double> yaw() const {
        std::vector<double> y(records_.size());
        for (std::size_t i = 0; i < records_.size(); ++i) y[i] = records_[i].yaw;
        return y;
    }

    std::optional<std::size_t> index_of(std::string_view id) const {
        auto it = index_.find(std::string(id));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    // Rows reordered to match the embedding rows. Throws DataError listing any
    // embedding id without an attribute row; extra attribute rows are dropped.
    AttributeTable aligned_to(const EmbeddingSet& emb) const;

    // Same table with the given codes replaced, for null-model experiments.
    AttributeTable with_genders(std::span<const Gender> genders) const {
        auto recs = records_;
        for (std::size_t i = 0; i < recs.size(); ++i) recs[i].gender = genders[i];
        return AttributeTable(std::move(recs));
    }

private:
    void build() {
        index_.reserve(records_.size());
        std::map<std::string, std::int32_t> ids;
        for (std::size_t r = 0; r < records_.size(); ++r) {
            const auto& rec = records_[r];
            if (!index_.emplace(rec.image_id, r).second)
                throw DataError("attributes: duplicate image_id '" + rec.image_id + "' at row " + std::to_string(r + 1));
            if (rec.identity.empty()) throw DataError("attributes: empty identity at row " + std::to_string(r + 1));
            if ((rec.image_id + rec.identity).find_first_of(",\n\r") != std::string::npos)
                throw DataError("attributes: comma or newline in a label at row " + std::to_string(r + 1));
            ids.emplace(rec.identity, 0);
        }
        identity_labels_.clear();
        std::int32_t next = 0;
        for (auto& [label, code] : ids) {
            code = next++;
            identity_labels_.push_back(label);
        }
        identity_codes_.resize(records_.size());
        gender_codes_.resize(records_.size());
        view_codes_.resize(records_.size());
        for (std::size_t r = 0; r < records_.size(); ++r) {
            identity_codes_[r] = ids.at(records_[r].identity);
            gender_codes_[r] = static_cast<std::int32_t>(records_[r].gender);
            try {
                view_codes_[r] = static_cast<std::int32_t>(bin_viewpoint(records_[r].yaw));
            } catch (const DataError& e) {
                throw DataError(std::string("attributes: row ") + std::to_string(r + 1) + ": " + e.what());
            }
        }
    }

    std::vector<AttributeRecord> records_;
    std::vector<std::string> identity_labels_;
    std::vector<std::int32_t> identity_codes_;
    std::vector<std::int32_t> gender_codes_;
    std::vector<std::int32_t> view_codes_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline AttributeTable AttributeTable::aligned_to(const EmbeddingSet& emb) const {
    std::vector<AttributeRecord> out;
    out.reserve(emb.size());
    std::vector<std::string> missing;
    for (const auto& id : emb.image_ids()) {
        auto idx = index_of(id);
        if (!idx) {
            missing.push_back(id);
            continue;
        }
        out.push_back(records_[*idx]);
    }
    if (!missing.empty()) {
        std::string msg = "attributes: " + std::to_string(missing.size()) + " embedding id(s) without attributes:";
        for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
        if (missing.size() > 20) msg += " ...";
        throw DataError(msg);
    }
    return AttributeTable(std::move(out));
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

enum class EmbeddingFormat { binary, csv };

inline EmbeddingFormat format_from_path(const std::filesystem::path& p) {
    return p.extension() == ".csv" ? EmbeddingFormat::csv : EmbeddingFormat::binary;
}

namespace detail {

inline constexpr std::array<char, 4> embedding_magic{'F', 'S', 'E', 'M'};
inline constexpr std::uint32_t embedding_version = 1;

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

template <typename T>
void put_le(std::string& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.append(bytes.data(), bytes.size());
}

template <typename T>
T get_le(const char* p) {
    std::array<char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& p, std::string_view content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + p.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("write failed: " + p.string());
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto pos = text.find('\n', start);
        if (pos == std::string_view::npos) pos = text.size();
        auto line = text.substr(start, pos - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = pos + 1;
    }
    return lines;
}

} // namespace detail

// Binary layout (little-endian):
//   char[4] "FSEM" | u32 version (1) | u64 N | u64 D | f32[N*D] row-major | N ids, each '\n'-terminated
inline std::string encode_embeddings_binary(const EmbeddingSet& emb) {
    std::string out;
    out.reserve(24 + emb.size() * emb.dimension() * 4);
    out.append(detail::embedding_magic.data(), 4);
    detail::put_le<std::uint32_t>(out, detail::embedding_version);
    detail::put_le<std::uint64_t>(out, emb.size());
    detail::put_le<std::uint64_t>(out, emb.dimension());
    for (double v : emb.descriptors().data()) detail::put_le<float>(out, static_cast<float>(v));
    for (const auto& id : emb.image_ids()) {
        out += id;
        out += '\n';
    }
    return out;
}

inline EmbeddingSet decode_embeddings_binary(std::string_view bytes) {
    if (bytes.size() < 24 || !std::equal(detail::embedding_magic.begin(), detail::embedding_magic.end(), bytes.data()))
        throw DataError("embeddings: bad magic in binary header");
    const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
    if (version != detail::embedding_version)
        throw DataError("embeddings: unsupported binary version " + std::to_string(version));
    const auto n = detail::get_le<std::uint64_t>(bytes.data() + 8);
    const auto d = detail::get_le<std::uint64_t>(bytes.data() + 16);
    if (d != 0 && n > (bytes.size() - 24) / 4 / d) throw DataError("embeddings: truncated payload");
    const std::size_t payload = 24 + n * d * 4;
    Matrix m(n, d);
    auto data = m.data();
    for (std::size_t i = 0; i < n * d; ++i) {
        const float f = detail::get_le<float>(bytes.data() + 24 + 4 * i);
        if (!std::isfinite(f)) throw DataError("embeddings: non-finite value at row " + std::to_string(i / d + 1));
        data[i] = f;
    }
    std::vector<std::string> ids;
    ids.reserve(n);
    std::size_t pos = payload;
    while (pos < bytes.size() && ids.size() < n) {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string_view::npos) throw DataError("embeddings: unterminated id block");
        ids.emplace_back(bytes.substr(pos, nl - pos));
        pos = nl + 1;
    }
    if (ids.size() != n)
        throw DataError("embeddings: id block has " + std::to_string(ids.size()) + " ids, header says " +
                        std::to_string(n));
    if (pos != bytes.size()) throw DataError("embeddings: trailing bytes after id block");
    return EmbeddingSet(std::move(m), std::move(ids));
}

// CSV layout: header "image_id,<unit names...>", then one row per image.
inline std::string encode_embeddings_csv(const EmbeddingSet& emb) {
    std::string out = "image_id";
    for (std::size_t j = 0; j < emb.dimension(); ++j) out += ",u" + std::to_string(j);
    out += '\n';
    for (std::size_t i = 0; i < emb.size(); ++i) {
        out += emb.image_ids()[i];
        for (double v : emb.descriptors().row(i)) {
            out += ',';
            out += detail::format_double(v);
        }
        out += '\n';
    }
    return out;
}

inline EmbeddingSet decode_embeddings_csv(std::string_view text) {
    auto lines = detail::split_lines(text);
    while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) throw DataError("embeddings: empty CSV");
    const auto header = detail::split_csv(lines[0]);
    if (header.size() < 2 || header[0] != "image_id")
        throw DataError("embeddings: malformed header (expected 'image_id,<units...>')");
    const std::size_t d = header.size() - 1;
    const std::size_t n = lines.size() - 1;
    Matrix m(n, d);
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto fields = detail::split_csv(lines[r + 1]);
        if (fields.size() != d + 1)
            throw DataError("embeddings: row " + std::to_string(r + 1) + " has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(d + 1));
        ids.emplace_back(fields[0]);
        for (std::size_t j = 0; j < d; ++j) {
            auto v = detail::parse_double(fields[j + 1]);
            if (!v) throw DataError("embeddings: unparsable value at row " + std::to_string(r + 1));
            if (!std::isfinite(*v)) throw DataError("embeddings: non-finite value at row " + std::to_string(r + 1));
            m(r, j) = *v;
        }
    }
    return EmbeddingSet(std::move(m), std::move(ids));
}

inline EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
    const auto bytes = detail::read_file(path);
    return format == EmbeddingFormat::csv ? decode_embeddings_csv(bytes) : decode_embeddings_binary(bytes);
}

inline EmbeddingSet load_embeddings(const std::filesystem::path& path) {
    return load_embeddings(path, format_from_path(path));
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& emb, EmbeddingFormat format) {
    detail::write_file(path, format == EmbeddingFormat::csv ? encode_embeddings_csv(emb) : encode_embeddings_binary(emb));
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingSet& emb) {
    save_embeddings(path, emb, format_from_path(path));
}

inline Gender parse_gender(std::string_view token) {
    if (token == "M" || token == "m") return Gender::male;
    if (token == "F" || token == "f") return Gender::female;
    throw DataError("unknown gender token '" + std::string(token) + "' (expected M or F)");
}

inline const char* to_string(Gender g) noexcept { return g == Gender::male ? "M" : "F"; }

// Attribute CSV: header naming image_id, identity, gender, yaw (any column order).
inline AttributeTable decode_attributes_csv(std::string_view text) {
    auto lines = detail::split_lines(text);
    while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) throw DataError("attributes: empty CSV");
    const auto header = detail::split_csv(lines[0]);
    std::array<std::optional<std::size_t>, 4> col;
    constexpr std::array<std::string_view, 4> names{"image_id", "identity", "gender", "yaw"};
    for (std::size_t c = 0; c < header.size(); ++c)
        for (std::size_t k = 0; k < names.size(); ++k)
            if (header[c] == names[k]) col[k] = c;
    for (std::size_t k = 0; k < names.size(); ++k)
        if (!col[k]) throw DataError("attributes: missing column '" + std::string(names[k]) + "'");

    std::vector<AttributeRecord> recs;
    recs.reserve(lines.size() - 1);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const auto fields = detail::split_csv(lines[r]);
        if (fields.size() != header.size())
            throw DataError("attributes: row " + std::to_string(r) + " has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(header.size()));
        AttributeRecord rec;
        rec.image_id = std::string(fields[*col[0]]);
        rec.identity = std::string(fields[*col[1]]);
        try {
            rec.gender = parse_gender(fields[*col[2]]);
        } catch (const DataError& e) {
            throw DataError("attributes: row " + std::to_string(r) + ": " + e.what());
        }
        const auto yaw = detail::parse_double(fields[*col[3]]);
        if (!yaw || !std::isfinite(*yaw)) throw DataError("attributes: row " + std::to_string(r) + ": invalid yaw");
        if (std::abs(*yaw) > max_abs_yaw)
            throw DataError("attributes: row " + std::to_string(r) + ": |yaw| > 150 (" +
                            std::string(fields[*col[3]]) + ")");
        rec.yaw = *yaw;
        recs.push_back(std::move(rec));
    }
    return AttributeTable(std::move(recs));
}

inline std::string encode_attributes_csv(const AttributeTable& t) {
    std::string out = "image_id,identity,gender,yaw\n";
    for (const auto& r : t.records())
        out += r.image_id + "," + r.identity + "," + to_string(r.gender) + "," + detail::format_double(r.yaw) + "\n";
    return out;
}

inline AttributeTable load_attributes(const std::filesystem::path& path) {
    return decode_attributes_csv(detail::read_file(path));
}

// Loads and aligns to the embedding rows; missing ids are an error.
inline AttributeTable load_attributes(const std::filesystem::path& path, const EmbeddingSet& emb) {
    return load_attributes(path).aligned_to(emb);
}

inline void save_attributes(const std::filesystem::path& path, const AttributeTable& t) {
    detail::write_file(path, encode_attributes_csv(t));
}

} // namespace facespace

namespace facespace {

// Throws unless attribute rows correspond one-to-one, in order, to embedding rows.
inline void require_aligned(const EmbeddingSet& emb, const AttributeTable& attrs) {
    if (emb.size() != attrs.size())
        throw DataError("attributes (" + std::to_string(attrs.size()) + " rows) not aligned with embeddings (" +
                        std::to_string(emb.size()) + " rows); use AttributeTable::aligned_to");
    for (std::size_t i = 0; i < emb.size(); ++i)
        if (emb.image_ids()[i] != attrs[i].image_id)
            throw DataError("attributes not aligned with embeddings at row " + std::to_string(i + 1));
}

} // namespace facespace
