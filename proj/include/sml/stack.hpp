#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sml/errors.hpp"
#include "sml/image.hpp"

namespace sml {

// One patient's scan: m slices of p x p intensities in [0, 1].
struct ImageStack {
    std::string patient_id;
    int m = 0;
    int p = 0;
    std::vector<float> data;  // m * p * p, slice-major, row-major within a slice

    std::size_t slice_size() const { return static_cast<std::size_t>(p) * p; }

    std::span<const float> slice(int j) const {
        return {data.data() + static_cast<std::size_t>(j) * slice_size(), slice_size()};
    }

    Image slice_image(int j) const {
        Image img(p);
        auto s = slice(j);
        std::copy(s.begin(), s.end(), img.v.begin());
        return img;
    }
};

enum class Label { normal, abnormal };

inline const char* to_string(Label l) { return l == Label::normal ? "normal" : "abnormal"; }

inline Label label_from_string(const std::string& s) {
    if (s == "normal") return Label::normal;
    if (s == "abnormal") return Label::abnormal;
    throw DataError(DataErrorKind::bad_manifest, "unknown label '" + s + "'");
}

struct LabeledStack {
    ImageStack stack;
    Label label = Label::normal;
};

struct Cohort {
    std::vector<LabeledStack> patients;
};

// Checks the ImageStack invariants: >= 2 slices, positive side length,
// consistent payload size, every intensity finite and in [0, 1].
inline void validate_stack(const ImageStack& s) {
    if (s.m < 2) throw DataError(DataErrorKind::too_few_slices, "stack needs at least 2 slices");
    if (s.p < 1) throw DataError(DataErrorKind::bad_header, "side length must be >= 1");
    if (s.data.size() != static_cast<std::size_t>(s.m) * s.slice_size())
        throw DataError(DataErrorKind::truncated, "payload size does not match header");
    for (float v : s.data) {
        if (!std::isfinite(v)) throw DataError(DataErrorKind::non_finite, "non-finite intensity");
        if (v < 0.0f || v > 1.0f)
            throw DataError(DataErrorKind::out_of_range, "intensity outside [0, 1]");
    }
}

// Affine map of the whole stack onto [0, 1] via the global (min, max).
// A constant stack maps to all 0.5.
inline ImageStack normalize_intensity(ImageStack stack) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : stack.data) {
        if (!std::isfinite(v)) throw DataError(DataErrorKind::non_finite, "non-finite intensity");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (stack.data.empty()) return stack;
    if (lo == hi) {
        std::fill(stack.data.begin(), stack.data.end(), 0.5f);
        return stack;
    }
    const double range = static_cast<double>(hi) - static_cast<double>(lo);
    for (float& v : stack.data)
        v = static_cast<float>((static_cast<double>(v) - lo) / range);
    return stack;
}

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32_le(std::string& out, float f) {
    put_u32_le(out, std::bit_cast<std::uint32_t>(f));
}

inline float get_f32_le(const unsigned char* b) {
    return std::bit_cast<float>(get_u32_le(b));
}

constexpr std::size_t kStackHeaderSize = 16;
constexpr std::uint32_t kMaxSide = 16384;
constexpr std::uint32_t kMaxSlices = 1u << 20;

}  // namespace detail

struct StackHeader {
    int m = 0;
    int p = 0;
    bool normalized = false;
};

// Stack file "SPS1": magic, u32le slice count, u32le side, flags byte
// (bit 0: payload already normalized to [0,1]), 3 reserved zero bytes, then
// m*p*p little-endian float32, slice-major, row-major within slice.
inline StackHeader read_stack_header_bytes(const unsigned char* h, std::size_t len,
                                           const std::string& path) {
    if (len < detail::kStackHeaderSize)
        throw DataError(DataErrorKind::truncated, path + ": file shorter than header");
    if (std::memcmp(h, "SPS1", 4) != 0)
        throw DataError(DataErrorKind::bad_magic, path + ": bad magic");
    std::uint32_t m = detail::get_u32_le(h + 4);
    std::uint32_t p = detail::get_u32_le(h + 8);
    unsigned flags = h[12];
    if (h[13] != 0 || h[14] != 0 || h[15] != 0)
        throw DataError(DataErrorKind::bad_header, path + ": reserved header bytes not zero");
    if (flags > 1) throw DataError(DataErrorKind::bad_header, path + ": unknown flag bits");
    if (m < 2) throw DataError(DataErrorKind::too_few_slices, path + ": fewer than 2 slices");
    if (p < 1 || p > detail::kMaxSide || m > detail::kMaxSlices)
        throw DataError(DataErrorKind::bad_header, path + ": implausible dimensions");
    return {static_cast<int>(m), static_cast<int>(p), (flags & 1) != 0};
}

inline StackHeader read_stack_header(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "'");
    unsigned char h[detail::kStackHeaderSize];
    f.read(reinterpret_cast<char*>(h), detail::kStackHeaderSize);
    if (f.gcount() != static_cast<std::streamsize>(detail::kStackHeaderSize))
        throw DataError(DataErrorKind::truncated, path + ": file shorter than header");
    return read_stack_header_bytes(h, detail::kStackHeaderSize, path);
}

// Reads a full stack. Raw payloads (flag bit 0 clear) are normalized to [0,1];
// normalized payloads pass through untouched, so write_stack(read_stack(f))
// reproduces f byte for byte.
inline ImageStack read_stack(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "'");
    unsigned char h[detail::kStackHeaderSize];
    f.read(reinterpret_cast<char*>(h), detail::kStackHeaderSize);
    if (f.gcount() != static_cast<std::streamsize>(detail::kStackHeaderSize))
        throw DataError(DataErrorKind::truncated, path + ": file shorter than header");
    StackHeader hdr = read_stack_header_bytes(h, detail::kStackHeaderSize, path);

    ImageStack stack;
    stack.patient_id = std::filesystem::path(path).stem().string();
    stack.m = hdr.m;
    stack.p = hdr.p;
    const std::size_t count = static_cast<std::size_t>(hdr.m) * hdr.p * hdr.p;
    std::vector<unsigned char> payload(count * 4);
    f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (f.gcount() != static_cast<std::streamsize>(payload.size()))
        throw DataError(DataErrorKind::truncated,
                        path + ": expected " + std::to_string(count) + " values");
    char probe;
    if (f.read(&probe, 1), f.gcount() != 0)
        throw DataError(DataErrorKind::trailing_bytes, path + ": trailing bytes after payload");

    stack.data.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        stack.data[i] = detail::get_f32_le(payload.data() + i * 4);

    for (float v : stack.data)
        if (!std::isfinite(v)) throw DataError(DataErrorKind::non_finite, path + ": non-finite value");
    if (hdr.normalized) {
        for (float v : stack.data)
            if (v < 0.0f || v > 1.0f)
                throw DataError(DataErrorKind::out_of_range,
                                path + ": flagged normalized but value outside [0, 1]");
        return stack;
    }
    return normalize_intensity(std::move(stack));
}

// Reads one slice without loading the rest of the file. Only valid for
// normalized payloads; raw files must go through read_stack.
inline Image read_stack_slice(const std::string& path, int j) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "'");
    unsigned char h[detail::kStackHeaderSize];
    f.read(reinterpret_cast<char*>(h), detail::kStackHeaderSize);
    if (f.gcount() != static_cast<std::streamsize>(detail::kStackHeaderSize))
        throw DataError(DataErrorKind::truncated, path + ": file shorter than header");
    StackHeader hdr = read_stack_header_bytes(h, detail::kStackHeaderSize, path);
    if (!hdr.normalized)
        throw DataError(DataErrorKind::bad_header, path + ": slice access needs a normalized file");
    if (j < 0 || j >= hdr.m) throw InvalidArgument("slice index out of range");

    const std::size_t pixels = static_cast<std::size_t>(hdr.p) * hdr.p;
    f.seekg(static_cast<std::streamoff>(detail::kStackHeaderSize + static_cast<std::size_t>(j) * pixels * 4));
    std::vector<unsigned char> payload(pixels * 4);
    f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (f.gcount() != static_cast<std::streamsize>(payload.size()))
        throw DataError(DataErrorKind::truncated, path + ": slice payload short");

    Image img(hdr.p);
    for (std::size_t i = 0; i < pixels; ++i) img.v[i] = detail::get_f32_le(payload.data() + i * 4);
    for (float v : img.v) {
        if (!std::isfinite(v)) throw DataError(DataErrorKind::non_finite, path + ": non-finite value");
        if (v < 0.0f || v > 1.0f)
            throw DataError(DataErrorKind::out_of_range, path + ": value outside [0, 1]");
    }
    return img;
}

inline std::string stack_to_bytes(const ImageStack& stack) {
    validate_stack(stack);
    std::string out;
    out.reserve(detail::kStackHeaderSize + stack.data.size() * 4);
    out += "SPS1";
    detail::put_u32_le(out, static_cast<std::uint32_t>(stack.m));
    detail::put_u32_le(out, static_cast<std::uint32_t>(stack.p));
    out.push_back(1);  // normalized
    out.append(3, '\0');
    for (float v : stack.data) detail::put_f32_le(out, v);
    return out;
}

inline void write_stack(const ImageStack& stack, const std::string& path) {
    std::string bytes = stack_to_bytes(stack);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError(DataErrorKind::io, "write failed for '" + path + "'");
}

// Manifest CSV: header "patient_id,label,path", UTF-8, LF line endings.
// An empty label field marks an unlabeled patient (prediction-only input).
// Relative stack paths resolve against the manifest's directory.
struct ManifestEntry {
    std::string patient_id;
    std::optional<Label> label;
    std::string path;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw DataError(DataErrorKind::bad_manifest, path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "patient_id,label,path")
        throw DataError(DataErrorKind::bad_manifest, path + ": bad header line");
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::vector<ManifestEntry> out;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto c1 = line.find(',');
        auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw DataError(DataErrorKind::bad_manifest, path + ": bad row '" + line + "'");
        ManifestEntry e;
        e.patient_id = line.substr(0, c1);
        std::string label = line.substr(c1 + 1, c2 - c1 - 1);
        if (!label.empty()) e.label = label_from_string(label);
        std::string raw = line.substr(c2 + 1);
        if (e.patient_id.empty() || raw.empty())
            throw DataError(DataErrorKind::bad_manifest, path + ": missing field in '" + line + "'");
        std::filesystem::path sp(raw);
        e.path = sp.is_absolute() ? sp.string() : (base / sp).string();
        out.push_back(std::move(e));
    }
    return out;
}

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(DataErrorKind::io, "cannot open '" + path + "' for writing");
    f << "patient_id,label,path\n";
    for (const auto& e : entries) {
        f << e.patient_id << ',' << (e.label ? to_string(*e.label) : "") << ',' << e.path << '\n';
    }
    if (!f) throw DataError(DataErrorKind::io, "write failed for '" + path + "'");
}

}  // namespace sml
