#ifndef VAMOS_IO_HPP
#define VAMOS_IO_HPP

// VVOL container: a small JSON header `<name>.vvol.json` next to a raw
// little-endian payload `<name>.vvol.raw`.

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vamos/volume.hpp"

namespace vamos {

static_assert(std::endian::native == std::endian::little, "VVOL payloads are written in native little-endian order");

using json = nlohmann::json;

struct VvolPaths {
    std::filesystem::path header;
    std::filesystem::path payload;
};

/// Accepts `<stem>`, `<stem>.vvol`, `<stem>.vvol.json` or `<stem>.vvol.raw`.
inline VvolPaths vvol_paths(const std::filesystem::path& path) {
    std::string s = path.string();
    auto strip = [&s](const std::string& suffix) {
        if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0)
            s.resize(s.size() - suffix.size());
    };
    strip(".json");
    strip(".raw");
    strip(".vvol");
    return {s + ".vvol.json", s + ".vvol.raw"};
}

inline json to_json(Vec3 v) { return json::array({v.x, v.y, v.z}); }
inline json to_json(Index3 v) { return json::array({v.x, v.y, v.z}); }
inline Vec3 vec3_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw Error("invalid_header", "expected a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
inline Index3 index3_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw Error("invalid_header", "expected a 3-element array");
    return {j[0].get<long>(), j[1].get<long>(), j[2].get<long>()};
}

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else if constexpr (std::is_same_v<T, std::uint8_t>) return "u8";
    else static_assert(sizeof(T) == 0, "unsupported VVOL dtype");
}

inline void write_bytes(const std::filesystem::path& p, const void* data, std::size_t n) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("io_error", "cannot open " + p.string() + " for writing");
    f.write(static_cast<const char*>(data), std::streamsize(n));
    if (!f) throw Error("io_error", "write failed: " + p.string());
}

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw Error("missing_file", "cannot open " + p.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline json read_json_file(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw Error("missing_file", "cannot open " + p.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw Error("invalid_json", p.string() + ": " + e.what());
    }
}

inline void write_json_file(const std::filesystem::path& p, const json& j) {
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw Error("io_error", "cannot open " + p.string() + " for writing");
    f << j.dump(2) << '\n';
    if (!f) throw Error("io_error", "write failed: " + p.string());
}

}  // namespace detail

/// Header block shared by every VVOL file.
template <typename T>
json vvol_header(const Volume<T>& v, const std::string& payload_name) {
    return json{{"dims", json::array({v.dims().x, v.dims().y, v.dims().z})},
                {"spacing_mm", to_json(v.spacing())},
                {"origin_mm", to_json(v.origin())},
                {"dtype", detail::dtype_name<T>()},
                {"order", "x-fastest"},
                {"payload", payload_name}};
}

/// Writes header + payload; `extra` keys are merged into the header.
template <typename T>
void write_vvol(const Volume<T>& v, const std::filesystem::path& path, const json& extra = json::object()) {
    if constexpr (std::is_floating_point_v<T>) {
        for (T x : v.data())
            if (!std::isfinite(x)) throw Error("non_finite", "volume contains non-finite values");
    }
    const VvolPaths p = vvol_paths(path);
    if (p.header.has_parent_path()) std::filesystem::create_directories(p.header.parent_path());
    json h = vvol_header(v, p.payload.filename().string());
    for (auto it = extra.begin(); it != extra.end(); ++it) h[it.key()] = it.value();
    detail::write_bytes(p.payload, v.data().data(), v.size() * sizeof(T));
    detail::write_json_file(p.header, h);
}

struct VvolHeader {
    Dims dims;
    Geometry geom;
    std::string dtype;
    std::filesystem::path payload;
    json raw;
};

inline VvolHeader read_vvol_header(const std::filesystem::path& path) {
    const VvolPaths p = vvol_paths(path);
    const json h = detail::read_json_file(p.header);
    VvolHeader out;
    try {
        const auto& d = h.at("dims");
        if (!d.is_array() || d.size() != 3) throw Error("invalid_header", "dims must have 3 entries");
        out.dims = {d[0].get<long>(), d[1].get<long>(), d[2].get<long>()};
        out.geom.spacing = vec3_from_json(h.at("spacing_mm"));
        out.geom.origin = vec3_from_json(h.at("origin_mm"));
        out.dtype = h.at("dtype").get<std::string>();
        if (h.value("order", "x-fastest") != "x-fastest") throw Error("invalid_header", "unsupported voxel order");
        out.payload = p.header.parent_path() / h.at("payload").get<std::string>();
    } catch (const json::exception& e) {
        throw Error("invalid_header", p.header.string() + ": " + e.what());
    }
    if (out.dims.x <= 0 || out.dims.y <= 0 || out.dims.z <= 0) throw Error("invalid_header", "dims must be positive");
    out.raw = h;
    return out;
}

template <typename T>
Volume<T> read_payload(const VvolHeader& h) {
    if (h.dtype != detail::dtype_name<T>())
        throw Error("dtype_mismatch", "expected dtype " + std::string(detail::dtype_name<T>()) + ", file has " + h.dtype);
    const std::vector<char> bytes = detail::read_bytes(h.payload);
    if (bytes.size() != h.dims.count() * sizeof(T))
        throw Error("length_mismatch", "payload " + h.payload.string() + " has " + std::to_string(bytes.size()) +
                                           " bytes, header implies " + std::to_string(h.dims.count() * sizeof(T)));
    std::vector<T> data(h.dims.count());
    std::memcpy(data.data(), bytes.data(), bytes.size());
    if constexpr (std::is_floating_point_v<T>) {
        for (T x : data)
            if (!std::isfinite(x)) throw Error("non_finite", "payload contains non-finite values");
    }
    return Volume<T>(h.dims, h.geom, std::move(data));
}

inline void write_volume(const VoxelVolume& v, const std::filesystem::path& path) { write_vvol(v, path); }

inline void write_mask(const BinaryMask& m, const std::filesystem::path& path) {
    for (auto b : m.data())
        if (b > 1) throw Error("invalid_mask", "mask values must be 0 or 1");
    write_vvol(m, path);
}

/// Reads an f32 volume; u8 files are widened so masks can be inspected as gray.
inline VoxelVolume read_volume(const std::filesystem::path& path) {
    const VvolHeader h = read_vvol_header(path);
    if (h.dtype == "u8") {
        const BinaryMask m = read_payload<std::uint8_t>(h);
        VoxelVolume v(m.dims(), m.geometry());
        for (std::size_t i = 0; i < m.size(); ++i) v[i] = float(m[i]);
        return v;
    }
    return read_payload<float>(h);
}

inline BinaryMask read_mask(const std::filesystem::path& path) {
    const VvolHeader h = read_vvol_header(path);
    if (h.dtype == "f32") return to_mask(read_payload<float>(h));
    BinaryMask m = read_payload<std::uint8_t>(h);
    for (auto& b : m.data()) b = b ? 1 : 0;
    return m;
}

}  // namespace vamos

#endif  // VAMOS_IO_HPP
