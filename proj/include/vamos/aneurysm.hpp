#ifndef VAMOS_ANEURYSM_HPP
#define VAMOS_ANEURYSM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vamos/components.hpp"
#include "vamos/graph.hpp"
#include "vamos/raster.hpp"
#include "vamos/volume.hpp"

namespace vamos {

struct AneurysmSpec {
    double radius_mm = 1.0;
    double growth = 1.0;    // gamma: scales how far the sac centre sits beyond the vessel wall
    double sigma_e = 1.0;   // smoothing of the sac deformation field, voxels
    std::uint64_t seed = 0;
    double alpha_fraction = 0.3;  // control displacement amplitude as a fraction of the radius in voxels
};

// ------------------------------------------------------------- geometry

/// Distance along the bisector from the node to the point where the sac
/// centre would sit if the sac had zero radius: the hypotenuse H reaching
/// the daughter walls, H = sqrt((R / tan(theta))^2 + R^2) with theta the half
/// angle between the daughters.
inline double node_to_wall(double R, double half_angle) {
    if (!(half_angle > 0)) throw Error("invalid_angle", "half angle must be > 0");
    if (std::abs(half_angle - std::numbers::pi / 2) < 1e-12) return R;  // tan -> infinity
    const double leg = R / std::tan(half_angle);
    return std::sqrt(leg * leg + R * R);
}

/// Leg from the node to the foot of the wall normal: L = R / tan(theta).
inline double bisector_leg(double R, double half_angle) {
    if (std::abs(half_angle - std::numbers::pi / 2) < 1e-12) return 0.0;
    return R / std::tan(half_angle);
}

/// Distance from the bifurcation node to the sac centre:
/// D = r * gamma + sqrt((R / tan(Theta / 2))^2 + R^2).
inline double stand_off_distance(double r, double gamma, double R, double theta) {
    if (!(theta > 0)) throw Error("invalid_angle", "daughter angle must be > 0");
    if (theta > std::numbers::pi + 1e-12) throw Error("invalid_angle", "daughter angle must be <= pi");
    if (!(r > 0) || !(R > 0) || !(gamma > 0)) throw Error("invalid_argument", "r, R and gamma must be positive");
    return r * gamma + node_to_wall(R, std::min(theta, std::numbers::pi) / 2);
}

struct Bisector {
    Vec3 direction;
    bool fallback = false;  // daughters anti-parallel: direction is an orthogonal stand-in
};

/// Unit bisector of the two daughter tangents.
inline Bisector bisector_direction(const BifurcationLocale& loc, bool allow_fallback = true) {
    const Vec3 sum = loc.tangents[0] + loc.tangents[1];
    if (norm(sum) > 1e-9) return {normalized(sum), false};
    if (!allow_fallback) throw Error("undefined_bisector", "daughter tangents are anti-parallel");
    const Vec3 axis = normalized(loc.tangents[0]);
    // prefer pointing away from the mother branch, else any orthogonal axis
    Vec3 cand = loc.mother_tangent * -1.0;
    cand -= axis * dot(cand, axis);
    if (norm(cand) < 1e-9) {
        const Vec3 e = std::abs(axis.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
        cand = e - axis * dot(e, axis);
    }
    return {normalized(cand), true};
}

// ------------------------------------------------------------- sac shape

namespace detail {

struct SacField {
    long half = 0;            // box is (2 * half + 1)^3 voxels centred on the sac
    std::vector<Vec3> u;      // dense displacement over the box, voxels, mean-free over the ball
    Dims dims;

    Vec3 at(Vec3 local) const {  // trilinear sample at box coordinates
        const Vec3 q{std::clamp(local.x, 0.0, double(dims.x - 1)), std::clamp(local.y, 0.0, double(dims.y - 1)),
                     std::clamp(local.z, 0.0, double(dims.z - 1))};
        const long x0 = long(std::floor(q.x)), y0 = long(std::floor(q.y)), z0 = long(std::floor(q.z));
        const double fx = q.x - double(x0), fy = q.y - double(y0), fz = q.z - double(z0);
        Vec3 acc;
        for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                    if (w == 0) continue;
                    const long x = std::min(x0 + dx, dims.x - 1), y = std::min(y0 + dy, dims.y - 1), z = std::min(z0 + dz, dims.z - 1);
                    acc += u[std::size_t(x + dims.x * (y + dims.y * z))] * w;
                }
        return acc;
    }
};

inline double radius_voxels(double r_mm, Vec3 spacing) { return r_mm / std::min({spacing.x, spacing.y, spacing.z}); }

inline SacField sac_field(const AneurysmSpec& spec, Vec3 spacing) {
    const double r_vox = radius_voxels(spec.radius_mm, spacing);
    const double alpha = spec.alpha_fraction * r_vox;
    SacField f;
    f.half = long(std::ceil(r_vox + 2 * alpha)) + 2;
    f.dims = {2 * f.half + 1, 2 * f.half + 1, 2 * f.half + 1};
    const ElasticField ef = make_elastic_field(f.dims, {3, 3, 3}, alpha, spec.sigma_e, spec.seed);
    f.u = ef.dense();
    // remove the mean displacement over the undeformed ball so the sac does not drift
    Vec3 mean;
    std::size_t n = 0;
    for (long z = 0; z < f.dims.z; ++z)
        for (long y = 0; y < f.dims.y; ++y)
            for (long x = 0; x < f.dims.x; ++x) {
                const Vec3 d = hadamard(Vec3{double(x - f.half), double(y - f.half), double(z - f.half)}, spacing);
                if (norm(d) <= spec.radius_mm) {
                    mean += f.u[std::size_t(x + f.dims.x * (y + f.dims.y * z))];
                    ++n;
                }
            }
    if (n > 0) {
        mean = mean / double(n);
        for (Vec3& v : f.u) v -= mean;
    }
    return f;
}

inline void check_spec(const AneurysmSpec& spec, Vec3 spacing) {
    if (!(spec.radius_mm > 0) || spec.radius_mm < std::min({spacing.x, spacing.y, spacing.z}) - 1e-9)
        throw Error("radius_below_voxel", "aneurysm radius is below one voxel");
    if (!(spec.growth > 0)) throw Error("invalid_argument", "growth must be positive");
    if (spec.sigma_e < 0 || spec.alpha_fraction < 0) throw Error("invalid_argument", "deformation parameters must be >= 0");
}

// Sac voxels of `grid` for a sac centred at voxel coordinate c.
inline BinaryMask render_sac(Dims dims, Geometry geom, Vec3 c, const AneurysmSpec& spec, const SacField& f) {
    BinaryMask m(dims, geom, 0);
    const Vec3 s = geom.spacing;
    const long reach = f.half;
    const long cx = long(std::lround(c.x)), cy = long(std::lround(c.y)), cz = long(std::lround(c.z));
    for (long z = cz - reach; z <= cz + reach; ++z)
        for (long y = cy - reach; y <= cy + reach; ++y)
            for (long x = cx - reach; x <= cx + reach; ++x) {
                if (!m.contains({x, y, z})) continue;
                const Vec3 rel = Vec3{double(x), double(y), double(z)} - c;
                const Vec3 u = f.at(rel + Vec3{double(f.half), double(f.half), double(f.half)});
                if (norm(hadamard(rel + u, s)) <= spec.radius_mm * (1 + 1e-9)) m(x, y, z) = 1;
            }
    return largest_component(m, 26);
}

}  // namespace detail

/// Deformed digital sphere in its own box of (2h+1)^3 voxels, sac centre at
/// voxel (h, h, h).
inline BinaryMask make_aneurysm(const AneurysmSpec& spec, Vec3 spacing) {
    detail::check_spec(spec, spacing);
    const auto f = detail::sac_field(spec, spacing);
    const double h = double(f.half);
    return detail::render_sac(f.dims, Geometry{spacing, {0, 0, 0}}, {h, h, h}, spec, f);
}

/// Radius of the sphere with the same volume as the mask, mm.
template <typename T>
double equivalent_radius_mm(const Volume<T>& m) {
    const Vec3 s = m.spacing();
    const double vol = double(count_nonzero(m)) * s.x * s.y * s.z;
    return std::cbrt(3.0 * vol / (4.0 * std::numbers::pi));
}

struct ShapeDescriptors {
    double volume_mm3 = 0;
    double surface_mm2 = 0;
    double sphericity = 0;
    double elongation = 0;  // sqrt(minor / major) principal variance
    double flatness = 0;    // sqrt(least / major)
};

/// Volume, surface, sphericity, elongation and flatness of a mask. The
/// surface is the exposed voxel-face area scaled by 2/3, the mean
/// over-count of face area for isotropically oriented surfaces.
inline ShapeDescriptors shape_descriptors(const BinaryMask& m) {
    ShapeDescriptors d;
    const Vec3 s = m.spacing();
    double faces = 0;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!m[i]) continue;
        const Index3 p = m.coord(i);
        ++n;
        mean += Eigen::Vector3d(p.x * s.x, p.y * s.y, p.z * s.z);
        const double areas[3] = {s.y * s.z, s.x * s.z, s.x * s.y};
        for (int a = 0; a < 3; ++a)
            for (long sgn : {-1L, 1L}) {
                Index3 q = p;
                q[a] += sgn;
                if (!m.at_or(q, 0)) faces += areas[a];
            }
    }
    if (n == 0) return d;
    mean /= double(n);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!m[i]) continue;
        const Index3 p = m.coord(i);
        const Eigen::Vector3d v = Eigen::Vector3d(p.x * s.x, p.y * s.y, p.z * s.z) - mean;
        cov += v * v.transpose();
    }
    cov /= double(n);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Eigen::Vector3d ev = es.eigenvalues();  // ascending
    d.volume_mm3 = double(n) * s.x * s.y * s.z;
    d.surface_mm2 = faces * 2.0 / 3.0;
    d.sphericity = std::cbrt(std::numbers::pi) * std::pow(6.0 * d.volume_mm3, 2.0 / 3.0) / d.surface_mm2;
    d.elongation = ev(2) > 0 ? std::sqrt(ev(1) / ev(2)) : 1.0;
    d.flatness = ev(2) > 0 ? std::sqrt(ev(0) / ev(2)) : 1.0;
    return d;
}

// ------------------------------------------------------------ attachment

struct PlacedAneurysm {
    Vec3 center_world;      // intended sac centre, mm
    Vec3 rendered_center;   // centroid of the rendered sac, mm
    double stand_off_mm = 0;
    Vec3 direction;
    bool fallback_direction = false;
    BinaryMask sac;         // full sac on the patch grid (before removing vessel voxels)
    double equivalent_radius_mm = 0;
    AneurysmSpec spec;
    int node = -1;
    double theta = 0;
    double locale_radius_mm = 0;
};

/// Renders a sac at the stand-off distance along the daughter bisector and
/// composites it over the vessel gray volume. Returns the composited gray,
/// the ground-truth mask (sac voxels not already vessel) and the placement.
inline std::tuple<VoxelVolume, BinaryMask, PlacedAneurysm> attach_aneurysm(const VoxelVolume& vessel_gray, const BinaryMask& vessel_mask,
                                                                            const BifurcationLocale& loc, const AneurysmSpec& spec,
                                                                            float gray, bool allow_fallback = true) {
    if (vessel_gray.dims() != vessel_mask.dims()) throw Error("dims_mismatch", "attach_aneurysm: gray/mask grids differ");
    const Geometry geom = vessel_gray.geometry();
    detail::check_spec(spec, geom.spacing);
    const Bisector b = bisector_direction(loc, allow_fallback);
    const double D = stand_off_distance(spec.radius_mm, spec.growth, loc.radius_mm, loc.theta);
    const Vec3 center = loc.node_world + b.direction * D;
    const Vec3 cv = geom.to_voxel(center);

    const auto f = detail::sac_field(spec, geom.spacing);
    const Dims d = vessel_gray.dims();
    const double reach = double(f.half);
    if (cv.x - reach < 0 || cv.y - reach < 0 || cv.z - reach < 0 || cv.x + reach > double(d.x - 1) ||
        cv.y + reach > double(d.y - 1) || cv.z + reach > double(d.z - 1))
        throw Error("sac_outside_patch", "aneurysm would exit the patch");
    BinaryMask sac = detail::render_sac(d, geom, cv, spec, f);
    if (count_nonzero(sac) == 0) throw Error("empty_sac", "aneurysm rendered no voxels");

    BinaryMask gt(d, geom, 0);
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = sac[i] && !vessel_mask[i];
    const VoxelVolume sac_gray = gray_from_mask(sac, gray);
    VoxelVolume out = vessel_gray;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], sac_gray[i]);

    PlacedAneurysm p;
    p.center_world = center;
    p.rendered_center = geom.to_world(voxel_centroid(sac));
    p.stand_off_mm = D;
    p.direction = b.direction;
    p.fallback_direction = b.fallback;
    p.equivalent_radius_mm = equivalent_radius_mm(sac);
    p.spec = spec;
    p.node = loc.node;
    p.theta = loc.theta;
    p.locale_radius_mm = loc.radius_mm;
    p.sac = std::move(sac);
    return {std::move(out), std::move(gt), std::move(p)};
}

inline nlohmann::json to_json(const AneurysmSpec& s) {
    return {{"radius_mm", s.radius_mm}, {"growth", s.growth}, {"sigma_e", s.sigma_e}, {"seed", s.seed}, {"alpha_fraction", s.alpha_fraction}};
}

inline AneurysmSpec aneurysm_spec_from_json(const nlohmann::json& j) {
    AneurysmSpec s;
    s.radius_mm = j.at("radius_mm").get<double>();
    s.growth = j.at("growth").get<double>();
    s.sigma_e = j.at("sigma_e").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.alpha_fraction = j.value("alpha_fraction", 0.3);
    return s;
}

inline nlohmann::json to_json(const PlacedAneurysm& p) {
    auto v = [](Vec3 x) { return nlohmann::json::array({x.x, x.y, x.z}); };
    return {{"center_mm", v(p.center_world)},
            {"rendered_center_mm", v(p.rendered_center)},
            {"stand_off_mm", p.stand_off_mm},
            {"direction", v(p.direction)},
            {"fallback_direction", p.fallback_direction},
            {"equivalent_radius_mm", p.equivalent_radius_mm},
            {"spec", to_json(p.spec)},
            {"node", p.node},
            {"theta_rad", p.theta},
            {"locale_radius_mm", p.locale_radius_mm}};
}

}  // namespace vamos

#endif  // VAMOS_ANEURYSM_HPP
