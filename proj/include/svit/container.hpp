#pragma once

// Binary container of named float32 arrays plus a JSON manifest. Used for
// checkpoints and for optional extractor weights.
//
//   bytes 0..7    magic "SVITARR\0"
//   u32 (LE)      format version
//   u64 (LE)      manifest length in bytes
//   manifest      UTF-8 JSON: {"arrays":[{"name","shape","offset","count"}...],
//                              "format_version", "meta"}
//   payload       float32 little-endian values, arrays back to back; "offset"
//                 is in bytes from the start of the payload
//
// Keys are emitted sorted and doubles in shortest round-trip form, so
// save -> load -> save is byte-identical.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "svit/array.hpp"

namespace svit {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr char kContainerMagic[8] = {'S', 'V', 'I', 'T', 'A', 'R', 'R', '\0'};

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> values;

    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Container {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return &a;
        return nullptr;
    }
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(U) > in.size()) throw IoError("container truncated");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(U);
    return v;
}

}  // namespace detail

inline std::string serialize(const Container& c) {
    nlohmann::json manifest;
    manifest["format_version"] = kContainerVersion;
    manifest["meta"] = c.meta;
    manifest["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : c.arrays) {
        if (numel(a.shape) != a.values.size()) throw DimensionError("container array '" + a.name + "' has inconsistent shape");
        manifest["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
        offset += a.values.size() * 4;
    }
    const std::string text = manifest.dump();
    std::string out(kContainerMagic, 8);
    detail::put_le<std::uint32_t>(out, kContainerVersion);
    detail::put_le<std::uint64_t>(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& a : c.arrays) {
        for (float f : a.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

inline Container deserialize(const std::string& bytes, const std::string& origin = "<memory>") {
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
        throw IoError(origin + ": not an svit array container");
    }
    std::size_t pos = 8;
    const auto version = detail::get_le<std::uint32_t>(bytes, pos);
    if (version != kContainerVersion) {
        throw IoError(origin + ": unsupported container version " + std::to_string(version));
    }
    const auto len = detail::get_le<std::uint64_t>(bytes, pos);
    if (pos + len > bytes.size()) throw IoError(origin + ": manifest truncated");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(pos, len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(origin + ": bad manifest: " + e.what());
    }
    pos += len;
    Container c;
    c.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("arrays")) {
        NamedArray a;
        a.name = entry.at("name").get<std::string>();
        a.shape = entry.at("shape").get<Shape>();
        const auto count = entry.at("count").get<std::size_t>();
        std::size_t p = pos + entry.at("offset").get<std::size_t>();
        if (count != numel(a.shape)) throw IoError(origin + ": array '" + a.name + "' count does not match shape");
        if (p + count * 4 > bytes.size()) throw IoError(origin + ": payload truncated at '" + a.name + "'");
        a.values.resize(count);
        for (auto& f : a.values) f = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, p));
        c.arrays.push_back(std::move(a));
    }
    return c;
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    const std::string bytes = serialize(c);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline Container read_container(const std::filesystem::path& path) {
    return deserialize(read_file_bytes(path), path.string());
}

template <class T>
NamedArray to_named(const std::string& name, const Array<T>& a) {
    return {name, a.shape(), std::vector<float>(a.data().begin(), a.data().end())};
}

}  // namespace svit
