#ifndef VAMOS_PHANTOM_HPP
#define VAMOS_PHANTOM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vamos/aneurysm.hpp"
#include "vamos/noise.hpp"
#include "vamos/raster.hpp"
#include "vamos/random.hpp"
#include "vamos/volume.hpp"

namespace vamos {

/// Synthetic test object with known construction.
struct Phantom {
    std::string name;
    BinaryMask mask;
    VoxelVolume gray;
    std::vector<Tube> tubes;           // construction centerlines, voxel coordinates
    std::vector<Vec3> bifurcations;    // designed junction points, voxel coordinates
    int endpoints = 0;
    nlohmann::json meta = nlohmann::json::object();
};

inline constexpr float kVesselGray = 400.0f;

namespace detail {

inline Tube straight_tube(Vec3 a, Vec3 b, double r_mm, double step = 0.5) {
    Tube t;
    const int n = std::max(1, int(std::ceil(norm(b - a) / step)));
    for (int i = 0; i <= n; ++i) {
        t.points.push_back(a + (b - a) * (double(i) / n));
        t.radii_mm.push_back(r_mm);
    }
    return t;
}

inline Phantom finish(std::string name, Dims dims, Geometry geom, std::vector<Tube> tubes) {
    Phantom p;
    p.name = std::move(name);
    auto [g, m] = rasterize_tubes(tubes, dims, geom, kVesselGray);
    p.gray = std::move(g);
    p.mask = std::move(m);
    p.tubes = std::move(tubes);
    return p;
}

}  // namespace detail

/// Straight tube along x through the volume centre.
inline Phantom straight_tube_phantom(Dims dims = {128, 128, 128}, double radius_vox = 3, double length_vox = 40,
                                     Geometry geom = {}) {
    const Vec3 c{double(dims.x / 2), double(dims.y / 2), double(dims.z / 2)};
    const Vec3 h{length_vox / 2, 0, 0};
    auto p = detail::finish("straight-tube", dims, geom, {detail::straight_tube(c - h, c + h, radius_vox * geom.spacing.x)});
    p.endpoints = 2;
    p.meta = {{"radius_vox", radius_vox}, {"length_vox", length_vox}};
    return p;
}

struct YPhantomSpec {
    Dims dims{128, 128, 128};
    Geometry geom{};
    double radius_mm = 0.8;          // 2 voxels at 0.4 mm
    double half_angle = std::numbers::pi / 4;  // each daughter off the mother axis
    double mother_len_vox = 40;
    double daughter_len_vox = 40;
    Vec3 node{-1, -1, -1};           // voxel coordinates; default is the volume centre
    Vec3 axis{1, 0, 0};              // mother flows along +axis into the node
    Vec3 plane_normal{0, 0, 1};
    std::vector<double> daughter_radii_mm;  // optional per-daughter override
};

/// Mother tube ending at a junction that splits into two daughters, each at
/// `half_angle` from the mother axis in the plane orthogonal to `plane_normal`.
inline Phantom y_phantom(const YPhantomSpec& s = {}) {
    const Vec3 node = s.node.x < 0 ? Vec3{double(s.dims.x / 2), double(s.dims.y / 2), double(s.dims.z / 2)} : s.node;
    const Vec3 ax = normalized(s.axis);
    const Vec3 side = normalized(cross(s.plane_normal, ax));
    const Vec3 d1 = ax * std::cos(s.half_angle) + side * std::sin(s.half_angle);
    const Vec3 d2 = ax * std::cos(s.half_angle) - side * std::sin(s.half_angle);
    const double r1 = s.daughter_radii_mm.size() > 0 ? s.daughter_radii_mm[0] : s.radius_mm;
    const double r2 = s.daughter_radii_mm.size() > 1 ? s.daughter_radii_mm[1] : s.radius_mm;
    auto p = detail::finish("y-tube", s.dims, s.geom,
                            {detail::straight_tube(node - ax * s.mother_len_vox, node, s.radius_mm),
                             detail::straight_tube(node, node + d1 * s.daughter_len_vox, r1),
                             detail::straight_tube(node, node + d2 * s.daughter_len_vox, r2)});
    p.bifurcations = {node};
    p.endpoints = 3;
    p.meta = {{"radius_mm", s.radius_mm},
              {"half_angle_rad", s.half_angle},
              {"node_vox", {node.x, node.y, node.z}},
              {"daughters", {{d1.x, d1.y, d1.z}, {d2.x, d2.y, d2.z}}}};
    return p;
}

/// Torus in the z = centre plane.
inline Phantom ring_phantom(Dims dims = {64, 64, 64}, double ring_radius_vox = 18, double tube_radius_vox = 2.5,
                            Geometry geom = {}) {
    const Vec3 c{double(dims.x / 2), double(dims.y / 2), double(dims.z / 2)};
    Tube t;
    const int n = int(std::ceil(2 * std::numbers::pi * ring_radius_vox / 0.5));
    for (int i = 0; i <= n; ++i) {
        const double a = 2 * std::numbers::pi * i / n;
        t.points.push_back(c + Vec3{ring_radius_vox * std::cos(a), ring_radius_vox * std::sin(a), 0});
        t.radii_mm.push_back(tube_radius_vox * geom.spacing.x);
    }
    auto p = detail::finish("ring", dims, geom, {t});
    p.meta = {{"ring_radius_vox", ring_radius_vox}, {"tube_radius_vox", tube_radius_vox}};
    return p;
}

inline Phantom ball_phantom(Dims dims = {48, 48, 48}, double radius_vox = 10, Geometry geom = {}) {
    const Vec3 c{double(dims.x / 2), double(dims.y / 2), double(dims.z / 2)};
    auto p = detail::finish("ball", dims, geom, {Tube{{c}, {radius_vox * geom.spacing.x}}});
    p.meta = {{"radius_vox", radius_vox}};
    return p;
}

inline Phantom helix_phantom(Dims dims = {64, 64, 96}, double helix_radius_vox = 12, double pitch_vox = 24,
                             double tube_radius_vox = 2, double turns = 2.5, Geometry geom = {}) {
    const Vec3 c{double(dims.x / 2), double(dims.y / 2), double(dims.z / 2)};
    Tube t;
    const double total = turns * 2 * std::numbers::pi;
    const int n = int(std::ceil(total * helix_radius_vox / 0.5));
    for (int i = 0; i <= n; ++i) {
        const double a = total * i / n;
        t.points.push_back(c + Vec3{helix_radius_vox * std::cos(a), helix_radius_vox * std::sin(a), pitch_vox * (a - total / 2) / (2 * std::numbers::pi)});
        t.radii_mm.push_back(tube_radius_vox * geom.spacing.x);
    }
    auto p = detail::finish("helix", dims, geom, {t});
    p.endpoints = 2;
    p.meta = {{"helix_radius_vox", helix_radius_vox}, {"pitch_vox", pitch_vox}, {"tube_radius_vox", tube_radius_vox}};
    return p;
}

// ---------------------------------------------------------------- patients

struct PatientSpec {
    Dims dims{96, 96, 96};
    Geometry geom{};
    std::uint64_t seed = 0;
    bool aneurysm = false;
    double aneurysm_radius_mm = 1.6;
};

/// TOF-like "patient" volume: a Y bifurcation with randomised angle, radii and
/// orientation over a textured background of air, fluid and parenchyma.
struct Patient {
    VoxelVolume volume;
    BinaryMask vessels;
    BinaryMask lesions;       // aneurysm sacs outside the vessel lumen, empty when none
    BinaryMask matter;        // background class per voxel (0 air, 1 fluid, 2 parenchyma)
    Phantom geometry;
    std::vector<Vec3> bifurcations;  // voxel coordinates
    nlohmann::json meta;
};

inline Patient patient_phantom(const PatientSpec& s) {
    std::mt19937_64 rng(derive_seed(s.seed, {0x70617469656e74ULL}));
    std::uniform_real_distribution<double> U(0, 1);
    auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };

    YPhantomSpec y;
    y.dims = s.dims;
    y.geom = s.geom;
    y.radius_mm = uni(0.7, 1.1);
    y.half_angle = uni(0.45, 0.75);
    const double dx = double(s.dims.x);
    y.mother_len_vox = y.daughter_len_vox = dx;  // run out of the volume
    y.node = {dx * uni(0.42, 0.5), double(s.dims.y) * uni(0.45, 0.55), double(s.dims.z) * uni(0.45, 0.55)};
    const double tilt = uni(-0.35, 0.35), roll = uni(-0.5, 0.5);
    y.axis = {std::cos(tilt), std::sin(tilt), 0.15 * uni(-1, 1)};
    y.plane_normal = {0, -std::sin(roll), std::cos(roll)};
    Patient p;
    p.geometry = y_phantom(y);
    p.vessels = p.geometry.mask;
    p.bifurcations = p.geometry.bifurcations;

    // background layout: smooth random field cut into fluid / parenchyma, air beyond a plane
    const Dims d = s.dims;
    VoxelVolume field(d, s.geom);
    std::normal_distribution<double> N(0, 1);
    for (float& v : field.data()) v = float(N(rng));
    field = gaussian_filter(field, 5.0, FilterMode::full3d);
    std::vector<float> sorted = field.data();
    const std::size_t cut = std::size_t(double(sorted.size()) * uni(0.55, 0.7));
    std::nth_element(sorted.begin(), sorted.begin() + long(cut), sorted.end());
    const float thr = sorted[cut];
    const Vec3 air_n = normalized({uni(-1, 1), uni(-1, 1), uni(-1, 1)});
    const double air_off = uni(0.32, 0.42) * double(d.x);
    const Vec3 c{double(d.x) / 2, double(d.y) / 2, double(d.z) / 2};
    p.matter = BinaryMask(d, s.geom, kParenchyma);
    for (std::size_t i = 0; i < p.matter.size(); ++i) {
        const Vec3 q = p.matter.coord(i).to_vec();
        if (dot(q - c, air_n) > air_off) p.matter[i] = kAir;
        else if (field[i] > thr) p.matter[i] = kFluid;
    }

    std::map<std::uint8_t, ClassStats> stats{{kAir, {uni(15, 30), uni(3, 5), 1000, true}},
                                             {kFluid, {uni(55, 80), uni(6, 9), 1000, true}},
                                             {kParenchyma, {uni(130, 160), uni(9, 13), 1000, true}}};
    const NoiseRecipe recipe = make_noise_recipe(stats, FilterMode::slice2d, derive_seed(s.seed, {1}));
    const auto fields = synth_class_fields(p.matter, recipe);

    VoxelVolume geometry_gray = p.geometry.gray;
    BinaryMask fg = p.vessels;
    p.lesions = BinaryMask(d, s.geom, 0);
    nlohmann::json lesion_meta = nlohmann::json::array();
    if (s.aneurysm) {
        BifurcationLocale loc;
        const Vec3 ax = normalized(y.axis), side = normalized(cross(y.plane_normal, ax));
        loc.tangents = {ax * std::cos(y.half_angle) + side * std::sin(y.half_angle), ax * std::cos(y.half_angle) - side * std::sin(y.half_angle)};
        loc.mother_tangent = ax * -1.0;
        loc.theta = 2 * y.half_angle;
        loc.radius_mm = y.radius_mm;
        loc.node_world = s.geom.to_world(y.node);
        const AneurysmSpec a{s.aneurysm_radius_mm, uni(0.7, 1.0), uni(1.0, 4.0), derive_seed(s.seed, {2})};
        auto [g2, gt, placed] = attach_aneurysm(geometry_gray, p.vessels, loc, a, kVesselGray);
        geometry_gray = std::move(g2);
        p.lesions = std::move(gt);
        for (std::size_t i = 0; i < fg.size(); ++i) fg[i] |= placed.sac[i];
        lesion_meta.push_back(to_json(placed));
    }
    // partial-volume rim of the vessels blends into the background
    for (std::size_t i = 0; i < fg.size(); ++i)
        if (geometry_gray[i] > 0) fg[i] = 1;
    p.volume = composite(p.matter, fields, geometry_gray, fg);
    p.meta = {{"seed", s.seed},
              {"y", p.geometry.meta},
              {"recipe", to_json(recipe)},
              {"lesions", lesion_meta}};
    return p;
}

}  // namespace vamos

#endif  // VAMOS_PHANTOM_HPP
