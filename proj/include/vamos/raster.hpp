#ifndef VAMOS_RASTER_HPP
#define VAMOS_RASTER_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vamos/filter.hpp"
#include "vamos/volume.hpp"

namespace vamos {

/// Edge blur applied to rendered gray tubes, in voxels.
inline constexpr double kPartialVolumeSigma = 0.5;

/// One centerline to thicken: points in voxel coordinates of the target
/// grid, radius per point in mm.
struct Tube {
    std::vector<Vec3> points;
    std::vector<double> radii_mm;
};

namespace detail {

inline void paint_ball(BinaryMask& m, Vec3 c, double r_mm) {
    const Vec3 s = m.spacing();
    const long rx = long(std::ceil(r_mm / s.x)), ry = long(std::ceil(r_mm / s.y)), rz = long(std::ceil(r_mm / s.z));
    const long cx = long(std::lround(c.x)), cy = long(std::lround(c.y)), cz = long(std::lround(c.z));
    const double r2 = r_mm * r_mm * (1 + 1e-9);  // voxels exactly on the sphere count as inside
    for (long z = std::max(0L, cz - rz - 1); z <= std::min(m.dims().z - 1, cz + rz + 1); ++z) {
        const double dz = (double(z) - c.z) * s.z;
        for (long y = std::max(0L, cy - ry - 1); y <= std::min(m.dims().y - 1, cy + ry + 1); ++y) {
            const double dy = (double(y) - c.y) * s.y;
            for (long x = std::max(0L, cx - rx - 1); x <= std::min(m.dims().x - 1, cx + rx + 1); ++x) {
                const double dx = (double(x) - c.x) * s.x;
                if (dx * dx + dy * dy + dz * dz <= r2) m(x, y, z) = 1;
            }
        }
    }
}

// Continuous sweep of a ball whose radius varies linearly from ra at a to
// rb at b (coordinates in voxels, radii in mm).
inline void paint_segment(BinaryMask& m, Vec3 a, Vec3 b, double ra, double rb) {
    const Vec3 s = m.spacing();
    const Vec3 v = hadamard(b - a, s);
    const double L = norm(v);
    if (L < 1e-12 || std::abs(rb - ra) >= L) {
        paint_ball(m, a, ra);
        paint_ball(m, b, rb);
        return;
    }
    const Vec3 axis = v / L;
    const double k = (rb - ra) / L;
    const double kk = k / std::sqrt(1 - k * k);
    const double rmax = std::max(ra, rb);
    const double tol = 1e-9 * rmax;
    long lo[3], hi[3];
    for (int i = 0; i < 3; ++i) {
        const double pad = rmax / s[i] + 1;
        lo[i] = std::max(0L, long(std::floor(std::min(a[i], b[i]) - pad)));
        hi[i] = std::min(m.dims()[i] - 1, long(std::ceil(std::max(a[i], b[i]) + pad)));
    }
    for (long z = lo[2]; z <= hi[2]; ++z)
        for (long y = lo[1]; y <= hi[1]; ++y)
            for (long x = lo[0]; x <= hi[0]; ++x) {
                const Vec3 w = hadamard(Vec3{double(x), double(y), double(z)} - a, s);
                const double u = dot(w, axis);
                const double h = std::sqrt(std::max(0.0, dot(w, w) - u * u));
                // the clearance r(t) - |p - c(t)| is concave in t; clamp its stationary point
                const double t = std::clamp(u + kk * h, 0.0, L);
                const double d = std::sqrt((u - t) * (u - t) + h * h);
                if (ra + k * t - d >= -tol) m(x, y, z) = 1;
            }
}

}  // namespace detail

/// Union of balls swept continuously along a centerline, with the radius
/// interpolated linearly between samples.
inline void sweep_tube(BinaryMask& mask, const Tube& tube) {
    if (tube.points.empty()) throw Error("empty_centerline", "rasterize_tube: empty centerline");
    if (tube.radii_mm.size() != tube.points.size()) throw Error("invalid_tube", "one radius per centerline point required");
    for (double r : tube.radii_mm)
        if (!(r > 0)) throw Error("invalid_radius", "tube radii must be positive");
    detail::paint_ball(mask, tube.points[0], tube.radii_mm[0]);
    for (std::size_t i = 1; i < tube.points.size(); ++i)
        detail::paint_segment(mask, tube.points[i - 1], tube.points[i], tube.radii_mm[i - 1], tube.radii_mm[i]);
}

/// mask x gray, softened by the partial-volume blur and clamped to [0, gray].
inline VoxelVolume gray_from_mask(const BinaryMask& mask, float gray) {
    VoxelVolume v = gaussian_filter(to_volume(mask, gray), kPartialVolumeSigma, FilterMode::full3d);
    for (float& x : v.data()) {
        x = std::clamp(x, 0.0f, gray);
        if (x < gray * 1e-6f) x = 0.0f;
    }
    // interior voxels whose blur window is fully inside the mask keep exactly `gray`
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i] && v[i] > gray * (1.0f - 1e-5f)) v[i] = gray;
    return v;
}

/// Thickens each centerline with a spherical kernel of the local radius.
inline std::pair<VoxelVolume, BinaryMask> rasterize_tubes(const std::vector<Tube>& tubes, Dims dims, Geometry geom, float gray) {
    BinaryMask mask(dims, geom, 0);
    for (const Tube& t : tubes) sweep_tube(mask, t);
    return {gray_from_mask(mask, gray), std::move(mask)};
}

inline std::pair<VoxelVolume, BinaryMask> rasterize_tube(const std::vector<Vec3>& centerline, const std::vector<double>& radii_mm,
                                                         Dims dims, Geometry geom, float gray) {
    return rasterize_tubes({Tube{centerline, radii_mm}}, dims, geom, gray);
}

// ------------------------------------------------------ elastic deformation

/// Random displacement on a coarse control grid, interpolated trilinearly
/// over the whole patch and smoothed with a Gaussian of sigma_e voxels.
/// Displacements are in voxels; warping is backward (out(p) = in(p + u(p))).
struct ElasticField {
    Dims dims;
    std::array<long, 3> grid{3, 3, 3};
    std::vector<Vec3> control;  // grid x-fastest
    double alpha = 0;
    double sigma_e = 0;
    std::uint64_t seed = 0;

    /// Dense displacement per voxel, x-fastest.
    std::vector<Vec3> dense() const {
        std::array<VoxelVolume, 3> comp{VoxelVolume(dims), VoxelVolume(dims), VoxelVolume(dims)};
        auto ctrl = [&](long i, long j, long k) {
            return control[std::size_t(i + grid[0] * (j + grid[1] * k))];
        };
        for (long z = 0; z < dims.z; ++z)
            for (long y = 0; y < dims.y; ++y)
                for (long x = 0; x < dims.x; ++x) {
                    const std::array<long, 3> p{x, y, z};
                    std::array<long, 3> c0{};
                    std::array<double, 3> f{};
                    for (int a = 0; a < 3; ++a) {
                        const double g = dims[a] > 1 ? double(p[std::size_t(a)]) * double(grid[std::size_t(a)] - 1) / double(dims[a] - 1) : 0.0;
                        c0[std::size_t(a)] = std::min(long(std::floor(g)), grid[std::size_t(a)] - 2 < 0 ? 0 : grid[std::size_t(a)] - 2);
                        f[std::size_t(a)] = grid[std::size_t(a)] > 1 ? g - double(c0[std::size_t(a)]) : 0.0;
                    }
                    Vec3 u;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
                                if (w == 0) continue;
                                u += ctrl(std::min(c0[0] + dx, grid[0] - 1), std::min(c0[1] + dy, grid[1] - 1),
                                          std::min(c0[2] + dz, grid[2] - 1)) * w;
                            }
                    comp[0](x, y, z) = float(u.x);
                    comp[1](x, y, z) = float(u.y);
                    comp[2](x, y, z) = float(u.z);
                }
        if (sigma_e > 0)
            for (auto& c : comp) c = gaussian_filter(c, sigma_e, FilterMode::full3d);
        std::vector<Vec3> out(dims.count());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = {comp[0][i], comp[1][i], comp[2][i]};
        return out;
    }

    bool is_identity() const {
        return std::all_of(control.begin(), control.end(), [](Vec3 v) { return v.x == 0 && v.y == 0 && v.z == 0; });
    }

    /// Every control point displaced by the same vector.
    static ElasticField constant(Dims dims, Vec3 u) {
        ElasticField f;
        f.dims = dims;
        f.control.assign(27, u);
        return f;
    }
};

inline ElasticField make_elastic_field(Dims dims, std::array<long, 3> grid, double alpha, double sigma_e, std::uint64_t seed) {
    if (alpha < 0 || sigma_e < 0) throw Error("invalid_field", "alpha and sigma_e must be >= 0");
    if (grid[0] < 1 || grid[1] < 1 || grid[2] < 1) throw Error("invalid_field", "control grid must be positive");
    ElasticField f;
    f.dims = dims;
    f.grid = grid;
    f.alpha = alpha;
    f.sigma_e = sigma_e;
    f.seed = seed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-alpha, alpha);
    f.control.resize(std::size_t(grid[0] * grid[1] * grid[2]));
    for (Vec3& c : f.control) {
        c.x = alpha > 0 ? u(rng) : 0.0;
        c.y = alpha > 0 ? u(rng) : 0.0;
        c.z = alpha > 0 ? u(rng) : 0.0;
    }
    return f;
}

namespace detail {

inline Vec3 clamp_to(Vec3 q, Dims d) {
    return {std::clamp(q.x, 0.0, double(d.x - 1)), std::clamp(q.y, 0.0, double(d.y - 1)), std::clamp(q.z, 0.0, double(d.z - 1))};
}

inline float sample_trilinear(const VoxelVolume& v, Vec3 q) {
    q = clamp_to(q, v.dims());
    const long x0 = long(std::floor(q.x)), y0 = long(std::floor(q.y)), z0 = long(std::floor(q.z));
    const long x1 = std::min(x0 + 1, v.dims().x - 1), y1 = std::min(y0 + 1, v.dims().y - 1), z1 = std::min(z0 + 1, v.dims().z - 1);
    const double fx = q.x - double(x0), fy = q.y - double(y0), fz = q.z - double(z0);
    const double c00 = v(x0, y0, z0) * (1 - fx) + v(x1, y0, z0) * fx;
    const double c10 = v(x0, y1, z0) * (1 - fx) + v(x1, y1, z0) * fx;
    const double c01 = v(x0, y0, z1) * (1 - fx) + v(x1, y0, z1) * fx;
    const double c11 = v(x0, y1, z1) * (1 - fx) + v(x1, y1, z1) * fx;
    return float((c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz);
}

template <typename T>
T sample_nearest(const Volume<T>& v, Vec3 q) {
    q = clamp_to(q, v.dims());
    return v(long(std::lround(q.x)), long(std::lround(q.y)), long(std::lround(q.z)));
}

}  // namespace detail

/// Backward warp. Scalar volumes are sampled trilinearly, masks and label
/// maps by nearest neighbour; samples off the grid take the border value.
template <typename T>
Volume<T> apply_deformation(const Volume<T>& vol, const ElasticField& field) {
    if (vol.dims() != field.dims) throw Error("dims_mismatch", "apply_deformation: field does not match volume");
    if (field.is_identity()) return vol;
    const auto u = field.dense();
    Volume<T> out(vol.dims(), vol.geometry());
    for (std::size_t i = 0; i < vol.size(); ++i) {
        const Vec3 q = vol.coord(i).to_vec() + u[i];
        if constexpr (std::is_floating_point_v<T>) out[i] = detail::sample_trilinear(vol, q);
        else out[i] = detail::sample_nearest(vol, q);
    }
    return out;
}

/// Where a point of the undeformed volume ends up after apply_deformation
/// (fixed-point inversion of the backward map).
inline Vec3 forward_map(const ElasticField& field, const std::vector<Vec3>& dense, Vec3 q) {
    if (field.is_identity()) return q;
    auto u_at = [&](Vec3 p) {
        const Vec3 c = detail::clamp_to(p, field.dims);
        const long x = long(std::lround(c.x)), y = long(std::lround(c.y)), z = long(std::lround(c.z));
        return dense[std::size_t(x + field.dims.x * (y + field.dims.y * z))];
    };
    Vec3 p = q;
    for (int it = 0; it < 8; ++it) p = q - u_at(p);
    return p;
}

inline nlohmann::json field_to_json(const ElasticField& f) {
    nlohmann::json ctrl = nlohmann::json::array();
    for (const Vec3& c : f.control) ctrl.push_back({c.x, c.y, c.z});
    return {{"dims", {f.dims.x, f.dims.y, f.dims.z}},
            {"grid", f.grid},
            {"alpha", f.alpha},
            {"sigma_e", f.sigma_e},
            {"seed", f.seed},
            {"control", ctrl}};
}

inline ElasticField field_from_json(const nlohmann::json& j) {
    ElasticField f;
    const auto& d = j.at("dims");
    f.dims = {d[0].get<long>(), d[1].get<long>(), d[2].get<long>()};
    f.grid = j.at("grid").get<std::array<long, 3>>();
    f.alpha = j.at("alpha").get<double>();
    f.sigma_e = j.at("sigma_e").get<double>();
    f.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("control")) f.control.push_back({c[0].get<double>(), c[1].get<double>(), c[2].get<double>()});
    if (f.control.size() != std::size_t(f.grid[0] * f.grid[1] * f.grid[2])) throw Error("invalid_field", "control count mismatch");
    return f;
}

}  // namespace vamos

#endif  // VAMOS_RASTER_HPP
