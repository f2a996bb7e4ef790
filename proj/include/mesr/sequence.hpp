#pragma once

// Multi-exposure LR sequences and their on-disk container:
//   <dir>/meta.json           version, width, height, frames, exposures_ms, reference_index,
//                             noise_model (optional), dtype "f32", endianness "little",
//                             layout "row-major"
//   <dir>/frame_000.raw ...   4*W*H bytes each, little-endian float32, row-major

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mesr/error.hpp"
#include "mesr/image.hpp"

namespace mesr {

/// Affine noise variance law: var = a * e * I + b.
struct NoiseModel {
    double a = 0.0;
    double b = 0.0;
};

/// Noise constants estimated on real push-frame data.
inline constexpr NoiseModel kSkySatNoise{0.119, 12.050};

struct LRSequence {
    std::vector<ImageGrid> frames;
    std::vector<double> exposures;  // milliseconds, reported
    int reference_index = 0;
    std::optional<NoiseModel> noise_model;

    int size() const { return static_cast<int>(frames.size()); }
    int width() const { return frames.empty() ? 0 : frames.front().width(); }
    int height() const { return frames.empty() ? 0 : frames.front().height(); }

    void validate() const
    {
        if (frames.empty()) throw Error("LRSequence: no frames");
        if (exposures.size() != frames.size())
            throw Error("LRSequence: " + std::to_string(exposures.size()) + " exposures for " +
                        std::to_string(frames.size()) + " frames");
        for (std::size_t i = 0; i < frames.size(); ++i) {
            if (!frames[i].same_shape(frames[0]))
                throw ShapeError("LRSequence: frame " + std::to_string(i) + " has different dimensions");
            if (!(exposures[i] > 0.0) || !std::isfinite(exposures[i]))
                throw Error("LRSequence: exposure " + std::to_string(i) + " is not positive");
        }
        if (reference_index < 0 || reference_index >= size())
            throw Error("LRSequence: reference_index out of range");
    }
};

/// Frames divided by their reported exposure times.
inline std::vector<ImageGrid> normalize_sequence(const LRSequence& seq)
{
    seq.validate();
    std::vector<ImageGrid> out;
    out.reserve(seq.frames.size());
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        ImageGrid f = seq.frames[i];
        for (auto& v : f.data()) v /= seq.exposures[i];
        out.push_back(std::move(f));
    }
    return out;
}

class ContainerError : public Error {
public:
    enum class Kind { MissingFile, MalformedJson, InvalidField, DimensionMismatch, NonPositiveExposure, Io };

    ContainerError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

namespace detail {

inline std::string frame_name(int i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%03d.raw", i);
    return buf;
}

inline std::vector<double> read_f32_le(const std::filesystem::path& file, std::size_t count)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ContainerError(ContainerError::Kind::MissingFile, "missing frame file: " + file.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != 4 * count)
        throw ContainerError(ContainerError::Kind::DimensionMismatch,
                             "frame file " + file.string() + " has " + std::to_string(bytes) +
                                 " bytes, expected " + std::to_string(4 * count));
    in.seekg(0);
    std::vector<std::uint32_t> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(4 * count));
    if (!in) throw ContainerError(ContainerError::Kind::Io, "short read: " + file.string());
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = raw[i];
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
        float f;
        std::memcpy(&f, &u, 4);
        out[i] = f;
    }
    return out;
}

inline void write_f32_le(const std::filesystem::path& file, std::span<const double> values)
{
    std::vector<std::uint32_t> raw(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
        raw[i] = u;
    }
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw ContainerError(ContainerError::Kind::Io, "cannot write " + file.string());
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(4 * raw.size()));
    if (!out) throw ContainerError(ContainerError::Kind::Io, "write failed: " + file.string());
}

template <class T>
T field(const nlohmann::json& j, const char* name)
{
    if (!j.contains(name))
        throw ContainerError(ContainerError::Kind::InvalidField, std::string("meta.json: missing field '") + name + "'");
    try {
        return j.at(name).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ContainerError(ContainerError::Kind::InvalidField, std::string("meta.json: bad type for field '") + name + "'");
    }
}

inline nlohmann::json read_json(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) throw ContainerError(ContainerError::Kind::MissingFile, "missing file: " + file.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ContainerError(ContainerError::Kind::MalformedJson, file.string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& file, const nlohmann::json& j)
{
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw ContainerError(ContainerError::Kind::Io, "cannot write " + file.string());
    out << j.dump(2) << "\n";
}

} // namespace detail

inline LRSequence load_sequence(const std::filesystem::path& dir)
{
    using K = ContainerError::Kind;
    const nlohmann::json meta = detail::read_json(dir / "meta.json");
    if (!meta.is_object()) throw ContainerError(K::MalformedJson, "meta.json: top level must be an object");

    const int version = detail::field<int>(meta, "version");
    if (version != 1) throw ContainerError(K::InvalidField, "meta.json: unsupported version " + std::to_string(version));
    if (meta.contains("dtype") && meta["dtype"] != "f32")
        throw ContainerError(K::InvalidField, "meta.json: field 'dtype' must be \"f32\"");
    if (meta.contains("endianness") && meta["endianness"] != "little")
        throw ContainerError(K::InvalidField, "meta.json: field 'endianness' must be \"little\"");
    if (meta.contains("layout") && meta["layout"] != "row-major")
        throw ContainerError(K::InvalidField, "meta.json: field 'layout' must be \"row-major\"");

    const int w = detail::field<int>(meta, "width");
    const int h = detail::field<int>(meta, "height");
    const int m = detail::field<int>(meta, "frames");
    if (w < 1) throw ContainerError(K::InvalidField, "meta.json: field 'width' must be >= 1");
    if (h < 1) throw ContainerError(K::InvalidField, "meta.json: field 'height' must be >= 1");
    if (m < 1) throw ContainerError(K::InvalidField, "meta.json: field 'frames' must be >= 1");

    LRSequence seq;
    seq.exposures = detail::field<std::vector<double>>(meta, "exposures_ms");
    if (static_cast<int>(seq.exposures.size()) != m)
        throw ContainerError(K::DimensionMismatch, "meta.json: 'exposures_ms' has " +
                                                       std::to_string(seq.exposures.size()) +
                                                       " entries for " + std::to_string(m) + " frames");
    for (int i = 0; i < m; ++i)
        if (!(seq.exposures[i] > 0.0))
            throw ContainerError(K::NonPositiveExposure,
                                 "meta.json: 'exposures_ms'[" + std::to_string(i) + "] is not positive");

    seq.reference_index = meta.contains("reference_index") ? detail::field<int>(meta, "reference_index") : 0;
    if (seq.reference_index < 0 || seq.reference_index >= m)
        throw ContainerError(K::InvalidField, "meta.json: field 'reference_index' out of range");

    if (meta.contains("noise_model") && !meta["noise_model"].is_null()) {
        const auto& nm = meta["noise_model"];
        if (!nm.is_object()) throw ContainerError(K::InvalidField, "meta.json: field 'noise_model' must be an object");
        seq.noise_model = NoiseModel{detail::field<double>(nm, "a"), detail::field<double>(nm, "b")};
    }

    const std::size_t count = static_cast<std::size_t>(w) * h;
    seq.frames.reserve(m);
    for (int i = 0; i < m; ++i)
        seq.frames.emplace_back(w, h, detail::read_f32_le(dir / detail::frame_name(i), count));
    return seq;
}

inline void save_sequence(const LRSequence& seq, const std::filesystem::path& dir)
{
    seq.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json meta;
    meta["version"] = 1;
    meta["width"] = seq.width();
    meta["height"] = seq.height();
    meta["frames"] = seq.size();
    meta["exposures_ms"] = seq.exposures;
    meta["reference_index"] = seq.reference_index;
    if (seq.noise_model) meta["noise_model"] = {{"a", seq.noise_model->a}, {"b", seq.noise_model->b}};
    meta["dtype"] = "f32";
    meta["endianness"] = "little";
    meta["layout"] = "row-major";
    detail::write_json(dir / "meta.json", meta);
    for (int i = 0; i < seq.size(); ++i) detail::write_f32_le(dir / detail::frame_name(i), seq.frames[i].data());
}

/// Single images use the sequence layout with one frame of unit exposure.
inline void save_image(const ImageGrid& img, const std::filesystem::path& dir)
{
    LRSequence seq;
    seq.frames = {img};
    seq.exposures = {1.0};
    save_sequence(seq, dir);
}

inline ImageGrid load_image(const std::filesystem::path& dir)
{
    LRSequence seq = load_sequence(dir);
    return std::move(seq.frames.front());
}

} // namespace mesr
