#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <png.h>

#include "vaf/audio.hpp"
#include "vaf/error.hpp"
#include "vaf/grid.hpp"

namespace vaf::io {

namespace fs = std::filesystem;
using Bytes = std::vector<std::uint8_t>;

inline Bytes read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_text(const fs::path& path) {
    const Bytes b = read_bytes(path);
    return {b.begin(), b.end()};
}

inline void write_text(const fs::path& path, const std::string& text) {
    write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------
// Hashing

inline std::string sha256_hex(std::span<const std::uint8_t> data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return os.str();
}

inline std::string sha256_hex(const std::string& text) {
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_bytes(path)); }

// ---------------------------------------------------------------------------
// Little-endian helpers

namespace detail {

inline void put_u16(Bytes& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(Bytes& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
inline void put_u64(Bytes& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

/// Bounds-checked little-endian cursor; failures report the byte offset.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) throw ParseError(std::string("truncated input while reading ") + what, data_.size());
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string tag(const char* what) {
        need(4, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), 4);
        pos_ += 4;
        return s;
    }
    void expect_tag(const char* expected, const char* what) {
        const std::size_t at = pos_;
        if (tag(what) != expected) throw ParseError(std::string("expected '") + expected + "' " + what, at);
    }
    void skip(std::size_t n, const char* what) {
        need(n, what);
        pos_ += n;
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

} // namespace detail

// ---------------------------------------------------------------------------
// WAV (RIFF PCM16 mono 16 kHz)

inline std::int16_t to_pcm16(double x) {
    return static_cast<std::int16_t>(std::clamp(std::lround(x * 32768.0), -32768L, 32767L));
}

inline Bytes encode_wav(const AudioClip& clip) {
    const auto n = static_cast<std::uint32_t>(clip.samples.size());
    Bytes b;
    b.reserve(44 + 2 * static_cast<std::size_t>(n));
    b.insert(b.end(), {'R', 'I', 'F', 'F'});
    detail::put_u32(b, 36 + 2 * n);
    b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    detail::put_u32(b, 16);
    detail::put_u16(b, 1); // PCM
    detail::put_u16(b, 1); // mono
    detail::put_u32(b, static_cast<std::uint32_t>(clip.sample_rate));
    detail::put_u32(b, static_cast<std::uint32_t>(clip.sample_rate) * 2);
    detail::put_u16(b, 2);
    detail::put_u16(b, 16);
    b.insert(b.end(), {'d', 'a', 't', 'a'});
    detail::put_u32(b, 2 * n);
    for (double s : clip.samples) detail::put_u16(b, static_cast<std::uint16_t>(to_pcm16(s)));
    return b;
}

/// Samples decode as int16 / 32768. The standardized flag is not stored.
inline AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
    detail::Reader r(bytes);
    r.expect_tag("RIFF", "RIFF header");
    r.u32("RIFF size");
    r.expect_tag("WAVE", "WAVE tag");
    bool have_fmt = false;
    AudioClip clip;
    while (true) {
        const std::size_t chunk_at = r.offset();
        const std::string id = r.tag("chunk id");
        const std::uint32_t size = r.u32("chunk size");
        if (id == "fmt ") {
            if (size < 16) throw ParseError("fmt chunk too small", chunk_at);
            const std::size_t fmt_at = r.offset();
            const auto format = r.u16("audio format");
            const auto channels = r.u16("channel count");
            const auto rate = r.u32("sample rate");
            r.u32("byte rate");
            r.u16("block align");
            const auto bits = r.u16("bits per sample");
            if (format != 1 || channels != 1 || bits != 16) throw ParseError("only PCM16 mono WAV is supported", fmt_at);
            r.skip(size - 16 + (size & 1u), "fmt chunk");
            clip.sample_rate = static_cast<int>(rate);
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) throw ParseError("data chunk before fmt chunk", chunk_at);
            if (size % 2 != 0) throw ParseError("odd PCM16 data size", chunk_at + 4);
            r.need(size, "PCM samples");
            clip.samples.resize(size / 2);
            for (auto& s : clip.samples) s = static_cast<std::int16_t>(r.u16("sample")) / 32768.0;
            return clip;
        } else {
            r.skip(size + (size & 1u), "chunk body");
        }
    }
}

inline void write_wav(const fs::path& path, const AudioClip& clip) { write_bytes(path, encode_wav(clip)); }
inline AudioClip read_wav(const fs::path& path) { return decode_wav(read_bytes(path)); }

// ---------------------------------------------------------------------------
// Float binary: "VAFB", u32 version, u32 rank, u64 dims[rank], float32 data (row-major, LE)

struct FloatArray {
    std::vector<std::uint64_t> shape;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
    friend bool operator==(const FloatArray&, const FloatArray&) = default;
};

inline constexpr std::uint32_t kFloatBinaryVersion = 1;

inline Bytes encode_float_array(const FloatArray& a) {
    if (a.element_count() != a.data.size()) throw ArgumentError("float array shape does not match its data");
    Bytes b;
    b.insert(b.end(), {'V', 'A', 'F', 'B'});
    detail::put_u32(b, kFloatBinaryVersion);
    detail::put_u32(b, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) detail::put_u64(b, d);
    for (float f : a.data) {
        std::uint32_t bits = 0;
        std::memcpy(&bits, &f, sizeof bits);
        detail::put_u32(b, bits);
    }
    return b;
}

inline FloatArray decode_float_array(std::span<const std::uint8_t> bytes) {
    detail::Reader r(bytes);
    r.expect_tag("VAFB", "float-binary magic");
    const std::size_t version_at = r.offset();
    if (r.u32("version") != kFloatBinaryVersion) throw ParseError("unsupported float-binary version", version_at);
    const std::size_t rank_at = r.offset();
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw ParseError("implausible float-binary rank", rank_at);
    FloatArray a;
    for (std::uint32_t i = 0; i < rank; ++i) a.shape.push_back(r.u64("dimension"));
    const std::size_t n = a.element_count();
    if (n > r.remaining() / 4) throw ParseError("float-binary payload shorter than its dims", bytes.size());
    a.data.resize(n);
    for (auto& f : a.data) {
        const std::uint32_t bits = r.u32("value");
        std::memcpy(&f, &bits, sizeof f);
    }
    if (r.remaining() != 0) throw ParseError("trailing bytes after float-binary payload", r.offset());
    return a;
}

inline void write_float_array(const fs::path& path, const FloatArray& a) { write_bytes(path, encode_float_array(a)); }
inline FloatArray read_float_array(const fs::path& path) { return decode_float_array(read_bytes(path)); }

inline FloatArray to_float_array(const Image& img) {
    FloatArray a;
    a.shape = {static_cast<std::uint64_t>(img.height), static_cast<std::uint64_t>(img.width),
               static_cast<std::uint64_t>(img.channels)};
    a.data.assign(img.data.begin(), img.data.end());
    return a;
}

template <typename Matrix>
FloatArray matrix_to_float_array(const Matrix& m) {
    FloatArray a;
    a.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    a.data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) a.data.push_back(static_cast<float>(m(r, c)));
    return a;
}

// ---------------------------------------------------------------------------
// PNG (8-bit RGB)

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline void write_png(const fs::path& path, const Image& img) {
    if (img.channels != 3) throw ArgumentError("PNG export expects an RGB image");
    std::vector<std::uint8_t> px(img.data.size());
    std::transform(img.data.begin(), img.data.end(), px.begin(), to_u8);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, px.data(), 0, nullptr))
        throw Error("PNG write failed for " + path.string() + ": " + image.message);
}

inline Image read_png(const fs::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw ParseError("cannot read PNG " + path.string() + ": " + image.message, 0);
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
        png_image_free(&image);
        throw ParseError("cannot decode PNG " + path.string() + ": " + image.message, 0);
    }
    Image img(static_cast<int>(image.width), static_cast<int>(image.height), 3);
    std::transform(px.begin(), px.end(), img.data.begin(), [](std::uint8_t v) { return v / 255.0; });
    return img;
}

// ---------------------------------------------------------------------------
// JSON / JSON-lines

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), e.byte > 0 ? e.byte - 1 : 0);
    }
}

inline std::string to_jsonl(std::span<const nlohmann::json> records) {
    std::string out;
    for (const auto& r : records) out += r.dump() + "\n";
    return out;
}

inline std::vector<nlohmann::json> parse_jsonl(const std::string& text) {
    std::vector<nlohmann::json> out;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        if (!line.empty()) {
            try {
                out.push_back(nlohmann::json::parse(line));
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(std::string("bad JSON-lines record: ") + e.what(), start + (e.byte > 0 ? e.byte - 1 : 0));
            }
        }
        start = end + 1;
    }
    return out;
}

inline void write_jsonl(const fs::path& path, std::span<const nlohmann::json> records) { write_text(path, to_jsonl(records)); }
inline std::vector<nlohmann::json> read_jsonl(const fs::path& path) { return parse_jsonl(read_text(path)); }

} // namespace vaf::io
