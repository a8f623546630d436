#ifndef VAMOS_VOLUME_HPP
#define VAMOS_VOLUME_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vamos {

/// Base class for every error raised by the toolkit. `code()` is a short
/// machine-readable tag that the CLI forwards verbatim.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

struct Vec3 {
    double x = 0, y = 0, z = 0;

    constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a * s; }
    friend constexpr Vec3 operator/(Vec3 a, double s) { return {a.x / s, a.y / s, a.z / s}; }
    constexpr Vec3& operator+=(Vec3 b) { x += b.x; y += b.y; z += b.z; return *this; }
    constexpr Vec3& operator-=(Vec3 b) { x -= b.x; y -= b.y; z -= b.z; return *this; }
    friend constexpr bool operator==(Vec3, Vec3) = default;
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) {
    const double n = norm(a);
    if (n == 0) throw Error("zero_vector", "cannot normalize a zero-length vector");
    return a / n;
}
/// Componentwise product, used for voxel <-> mm conversions.
inline Vec3 hadamard(Vec3 a, Vec3 b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }

/// Integer voxel coordinate (may lie outside a grid).
struct Index3 {
    long x = 0, y = 0, z = 0;

    constexpr long& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr long operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    friend constexpr Index3 operator+(Index3 a, Index3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend constexpr Index3 operator-(Index3 a, Index3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend constexpr bool operator==(Index3, Index3) = default;
    friend constexpr auto operator<=>(const Index3& a, const Index3& b) {
        // z-major so that ordering matches x-fastest linear order
        if (auto c = a.z <=> b.z; c != 0) return c;
        if (auto c = a.y <=> b.y; c != 0) return c;
        return a.x <=> b.x;
    }
    Vec3 to_vec() const { return {double(x), double(y), double(z)}; }
};

struct Dims {
    long x = 0, y = 0, z = 0;

    constexpr long operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr std::size_t count() const { return std::size_t(x) * std::size_t(y) * std::size_t(z); }
    constexpr bool contains(Index3 p) const {
        return p.x >= 0 && p.y >= 0 && p.z >= 0 && p.x < x && p.y < y && p.z < z;
    }
    friend constexpr bool operator==(Dims, Dims) = default;
};

/// Physical placement of a voxel grid: voxel (i,j,k) sits at origin + (i,j,k)*spacing mm.
struct Geometry {
    Vec3 spacing{0.4, 0.4, 0.4};
    Vec3 origin{0, 0, 0};

    Vec3 to_world(Vec3 voxel) const { return origin + hadamard(voxel, spacing); }
    Vec3 to_voxel(Vec3 world) const {
        const Vec3 d = world - origin;
        return {d.x / spacing.x, d.y / spacing.y, d.z / spacing.z};
    }
    friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Dense scalar grid stored x-fastest. `Volume<float>` carries gray levels,
/// `Volume<std::uint8_t>` carries masks and label maps.
template <typename T>
class Volume {
public:
    using value_type = T;

    Volume() = default;
    explicit Volume(Dims dims, Geometry geom = {}, T fill = T{})
        : dims_(dims), geom_(geom), data_(checked_count(dims), fill) {
        check_spacing(geom.spacing);
    }
    Volume(Dims dims, Geometry geom, std::vector<T> data)
        : dims_(dims), geom_(geom), data_(std::move(data)) {
        if (data_.size() != checked_count(dims))
            throw Error("length_mismatch", "voxel payload length does not match dims");
        check_spacing(geom.spacing);
    }

    const Dims& dims() const { return dims_; }
    const Geometry& geometry() const { return geom_; }
    Vec3 spacing() const { return geom_.spacing; }
    Vec3 origin() const { return geom_.origin; }
    void set_origin(Vec3 o) { geom_.origin = o; }

    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(long x, long y, long z) const {
        return std::size_t(x) + std::size_t(dims_.x) * (std::size_t(y) + std::size_t(dims_.y) * std::size_t(z));
    }
    std::size_t index(Index3 p) const { return index(p.x, p.y, p.z); }
    Index3 coord(std::size_t i) const {
        const long x = long(i % std::size_t(dims_.x));
        const std::size_t r = i / std::size_t(dims_.x);
        return {x, long(r % std::size_t(dims_.y)), long(r / std::size_t(dims_.y))};
    }
    bool contains(Index3 p) const { return dims_.contains(p); }

    T& operator()(long x, long y, long z) { return data_[index(x, y, z)]; }
    const T& operator()(long x, long y, long z) const { return data_[index(x, y, z)]; }
    T& operator[](Index3 p) { return data_[index(p)]; }
    const T& operator[](Index3 p) const { return data_[index(p)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Value at p, or `outside` when p is off-grid.
    T at_or(Index3 p, T outside) const { return contains(p) ? (*this)[p] : outside; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    Vec3 world_of(Index3 p) const { return geom_.to_world(p.to_vec()); }

    bool same_grid(const auto& other) const {
        return dims_ == other.dims() && geom_ == other.geometry();
    }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    static std::size_t checked_count(Dims d) {
        if (d.x <= 0 || d.y <= 0 || d.z <= 0) throw Error("invalid_dims", "dims must be positive");
        return d.count();
    }
    static void check_spacing(Vec3 s) {
        if (!(s.x > 0 && s.y > 0 && s.z > 0) || !std::isfinite(s.x) || !std::isfinite(s.y) || !std::isfinite(s.z))
            throw Error("invalid_spacing", "spacing components must be positive and finite");
    }

    Dims dims_{};
    Geometry geom_{};
    std::vector<T> data_;
};

using VoxelVolume = Volume<float>;
using BinaryMask = Volume<std::uint8_t>;
using LabelVolume = Volume<std::int32_t>;

template <typename T>
inline void require_same_grid(const Volume<T>& a, const auto& b, const char* what) {
    if (a.dims() != b.dims()) throw Error("dims_mismatch", std::string(what) + ": grid dimensions differ");
}

/// Number of nonzero voxels.
template <typename T>
std::size_t count_nonzero(const Volume<T>& v) {
    std::size_t n = 0;
    for (const T& x : v.data()) n += (x != T{});
    return n;
}

inline BinaryMask to_mask(const VoxelVolume& v, float threshold = 0.5f) {
    BinaryMask m(v.dims(), v.geometry());
    for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] >= threshold ? 1 : 0;
    return m;
}

inline VoxelVolume to_volume(const BinaryMask& m, float on = 1.0f) {
    VoxelVolume v(m.dims(), m.geometry());
    for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i] ? on : 0.0f;
    return v;
}

/// Centroid of the nonzero voxels, in voxel coordinates.
template <typename T>
Vec3 voxel_centroid(const Volume<T>& v) {
    Vec3 acc;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] != T{}) {
            acc += v.coord(i).to_vec();
            ++n;
        }
    }
    if (n == 0) throw Error("empty_mask", "centroid of an empty mask");
    return acc / double(n);
}

/// Extract a box of `size` voxels whose voxel (size/2) lands on `center`.
/// Off-grid voxels receive `pad`; the origin is shifted so world
/// coordinates of every retained voxel are unchanged.
template <typename T>
Volume<T> crop(const Volume<T>& vol, Index3 center, Dims size, T pad = T{}) {
    if (size.x <= 0 || size.y <= 0 || size.z <= 0) throw Error("invalid_dims", "crop size must be positive");
    const Index3 start{center.x - size.x / 2, center.y - size.y / 2, center.z - size.z / 2};
    return crop_at(vol, start, size, pad);
}

/// Like crop(), but addressed by the first (lowest) corner voxel.
template <typename T>
Volume<T> crop_at(const Volume<T>& vol, Index3 start, Dims size, T pad = T{}) {
    Geometry g = vol.geometry();
    g.origin = vol.geometry().to_world(start.to_vec());
    Volume<T> out(size, g, pad);
    for (long z = 0; z < size.z; ++z) {
        const long sz = start.z + z;
        if (sz < 0 || sz >= vol.dims().z) continue;
        for (long y = 0; y < size.y; ++y) {
            const long sy = start.y + y;
            if (sy < 0 || sy >= vol.dims().y) continue;
            for (long x = 0; x < size.x; ++x) {
                const long sx = start.x + x;
                if (sx < 0 || sx >= vol.dims().x) continue;
                out(x, y, z) = vol(sx, sy, sz);
            }
        }
    }
    return out;
}

/// The 26 neighbour offsets, ordered z-major.
inline const std::array<Index3, 26>& neighbors26() {
    static const std::array<Index3, 26> offs = [] {
        std::array<Index3, 26> a{};
        int n = 0;
        for (long dz = -1; dz <= 1; ++dz)
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx)
                    if (dx || dy || dz) a[n++] = {dx, dy, dz};
        return a;
    }();
    return offs;
}

/// True when `d` is a neighbour offset under the given connectivity (6, 18 or 26).
inline bool is_neighbor_offset(Index3 d, int connectivity) {
    const long m = std::labs(d.x) + std::labs(d.y) + std::labs(d.z);
    if (m == 0 || std::labs(d.x) > 1 || std::labs(d.y) > 1 || std::labs(d.z) > 1) return false;
    if (connectivity == 6) return m == 1;
    if (connectivity == 18) return m <= 2;
    return true;
}

}  // namespace vamos

#endif  // VAMOS_VOLUME_HPP
