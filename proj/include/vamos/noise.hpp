#ifndef VAMOS_NOISE_HPP
#define VAMOS_NOISE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vamos/filter.hpp"
#include "vamos/io.hpp"
#include "vamos/random.hpp"
#include "vamos/raster.hpp"
#include "vamos/threshold.hpp"
#include "vamos/volume.hpp"

namespace vamos {

/// Nominal 12-bit gray range.
inline constexpr float kGrayMax = 4095.0f;

/// Filter widths the large-sigma approximation is trusted over.
inline constexpr double kSigmaGMin = 1.0;
inline constexpr double kSigmaGMax = 8.0;
/// Smallest filter width the default sigma_0 policy lands on.
inline constexpr double kSigmaGPolicyMin = 1.5;

/// Only `gaussian` follows the filtered-noise calibration; the other two are
/// moment-matched stand-ins for ablations.
enum class NoiseFamily { gaussian, rician, perlin };

inline std::string to_string(NoiseFamily f) {
    switch (f) {
        case NoiseFamily::gaussian: return "gaussian";
        case NoiseFamily::rician: return "rician";
        default: return "perlin";
    }
}

inline NoiseFamily noise_family_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseFamily::gaussian;
    if (s == "rician") return NoiseFamily::rician;
    if (s == "perlin") return NoiseFamily::perlin;
    throw Error("invalid_config", "unknown noise family '" + s + "'");
}

struct MatterTarget {
    double mean = 0;
    double std_f = 0;
    double sigma_g = 0;       // 0 for degenerate classes
    bool degenerate = false;  // rendered as a constant field at `mean`
    bool out_of_domain = false;
};

struct NoiseRecipe {
    std::map<std::uint8_t, MatterTarget> classes;
    double sigma0 = 0;
    FilterMode mode = FilterMode::slice2d;
    NoiseFamily family = NoiseFamily::gaussian;
    std::uint64_t seed = 0;
};

// ------------------------------------------------------------- statistics

/// Mean/std of every matter class, vessel voxels excluded. Classes listed in
/// `expected` but absent from the map are reported empty and unreliable.
inline std::map<std::uint8_t, ClassStats> collect_matter_stats(const VoxelVolume& vol, const BinaryMask& labels,
                                                               std::vector<std::uint8_t> expected = {}) {
    auto out = label_stats(vol, labels, {kVessel});
    for (std::uint8_t c : expected)
        if (c != kVessel) out.try_emplace(c, ClassStats{});
    return out;
}

inline std::map<std::uint8_t, ClassStats> collect_matter_stats(const VoxelVolume& vol, const MatterMap& mm) {
    std::vector<std::uint8_t> expected;
    for (const auto& [c, s] : mm.stats) expected.push_back(c);
    return collect_matter_stats(vol, mm.labels, expected);
}

// --------------------------------------------------------- sigma_G inversion

/// Filter width that turns white noise of std sigma0 into std sigma_f.
inline double solve_sigma_g(double sigma0, double sigma_f, FilterMode mode = FilterMode::slice2d) {
    if (!(sigma0 > 0)) throw Error("invalid_argument", "sigma0 must be > 0");
    if (!(sigma_f > 0)) throw Error("degenerate_class", "sigma_f = 0 needs an infinitely wide filter");
    if (mode == FilterMode::slice2d) return sigma0 / (2.0 * sigma_f * std::sqrt(std::numbers::pi));
    return std::pow(sigma0 / (2.0 * std::sqrt(2.0) * std::pow(std::numbers::pi, 0.75) * sigma_f), 2.0 / 3.0);
}

/// White-noise std that places the widest-spread class at `sigma_g_min`.
inline double default_sigma0(double sigma_f_max, FilterMode mode, double sigma_g_min = kSigmaGPolicyMin) {
    return sigma_f_max / filtered_noise_gain(sigma_g_min, mode);
}

/// Builds a recipe from target statistics. Classes with zero std are
/// degenerate; with `sigma0` omitted the default policy is used.
inline NoiseRecipe make_noise_recipe(const std::map<std::uint8_t, ClassStats>& stats, FilterMode mode, std::uint64_t seed,
                                     std::optional<double> sigma0 = std::nullopt,
                                     NoiseFamily family = NoiseFamily::gaussian) {
    NoiseRecipe r;
    r.mode = mode;
    r.seed = seed;
    r.family = family;
    double smax = 0;
    for (const auto& [c, s] : stats)
        if (s.count > 0) smax = std::max(smax, s.std);
    r.sigma0 = sigma0 ? *sigma0 : (smax > 0 ? default_sigma0(smax, mode) : 1.0);
    if (!(r.sigma0 > 0)) throw Error("invalid_argument", "sigma0 must be > 0");
    for (const auto& [c, s] : stats) {
        if (s.count == 0) continue;
        MatterTarget t;
        t.mean = s.mean;
        t.std_f = s.std;
        if (s.std <= 0) {
            t.degenerate = true;
        } else {
            t.sigma_g = solve_sigma_g(r.sigma0, s.std, mode);
            if (t.sigma_g < kSigmaGMin) {
                t.sigma_g = kSigmaGMin;
                t.out_of_domain = true;
            } else if (t.sigma_g > kSigmaGMax) {
                t.out_of_domain = true;
            }
        }
        r.classes[c] = t;
    }
    return r;
}

// ------------------------------------------------------------- synthesis

namespace detail {

inline VoxelVolume filtered_gaussian(Dims dims, double sigma0, double sigma_g, FilterMode mode, std::uint64_t seed) {
    // synthesise on a grid padded by the kernel radius so the crop never sees a reflected border
    const long pad = std::max(1L, long(std::ceil(4.0 * sigma_g)));
    const Dims big{dims.x + 2 * pad, dims.y + 2 * pad, mode == FilterMode::full3d ? dims.z + 2 * pad : dims.z};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma0);
    VoxelVolume white(big);
    for (float& x : white.data()) x = float(n(rng));
    const VoxelVolume f = gaussian_filter(white, sigma_g, mode);
    const long pz = mode == FilterMode::full3d ? pad : 0;
    VoxelVolume out(dims);
    for (long z = 0; z < dims.z; ++z)
        for (long y = 0; y < dims.y; ++y)
            for (long x = 0; x < dims.x; ++x) out(x, y, z) = f(x + pad, y + pad, z + pz);
    return out;
}

inline double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }

// Improved gradient noise on a lattice of `cell` voxels.
inline VoxelVolume gradient_noise(Dims dims, double cell, std::uint64_t seed) {
    std::vector<int> perm(256);
    for (int i = 0; i < 256; ++i) perm[std::size_t(i)] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto P = [&](long i) { return perm[std::size_t(i & 255)]; };
    static constexpr int g[12][3] = {{1, 1, 0}, {-1, 1, 0}, {1, -1, 0}, {-1, -1, 0}, {1, 0, 1}, {-1, 0, 1},
                                     {1, 0, -1}, {-1, 0, -1}, {0, 1, 1}, {0, -1, 1}, {0, 1, -1}, {0, -1, -1}};
    auto grad = [&](long i, long j, long k, double x, double y, double z) {
        const int h = P(i + P(j + P(k))) % 12;
        return g[h][0] * x + g[h][1] * y + g[h][2] * z;
    };
    VoxelVolume out(dims);
    for (long z = 0; z < dims.z; ++z)
        for (long y = 0; y < dims.y; ++y)
            for (long x = 0; x < dims.x; ++x) {
                const double px = x / cell, py = y / cell, pz = z / cell;
                const long i = long(std::floor(px)), j = long(std::floor(py)), k = long(std::floor(pz));
                const double fx = px - double(i), fy = py - double(j), fz = pz - double(k);
                const double u = fade(fx), v = fade(fy), w = fade(fz);
                auto lerp = [](double a, double b, double t) { return a + t * (b - a); };
                const double x00 = lerp(grad(i, j, k, fx, fy, fz), grad(i + 1, j, k, fx - 1, fy, fz), u);
                const double x10 = lerp(grad(i, j + 1, k, fx, fy - 1, fz), grad(i + 1, j + 1, k, fx - 1, fy - 1, fz), u);
                const double x01 = lerp(grad(i, j, k + 1, fx, fy, fz - 1), grad(i + 1, j, k + 1, fx - 1, fy, fz - 1), u);
                const double x11 =
                    lerp(grad(i, j + 1, k + 1, fx, fy - 1, fz - 1), grad(i + 1, j + 1, k + 1, fx - 1, fy - 1, fz - 1), u);
                out(x, y, z) = float(lerp(lerp(x00, x10, v), lerp(x01, x11, v), w));
            }
    return out;
}

inline void standardize(VoxelVolume& v, double mean, double sd) {
    double m = 0, s = 0;
    for (float x : v.data()) m += x;
    m /= double(v.size());
    for (float x : v.data()) s += (x - m) * (x - m);
    s = std::sqrt(s / double(v.size()));
    for (float& x : v.data()) x = float(mean + (s > 0 ? (x - m) / s * sd : 0.0));
}

}  // namespace detail

/// Background texture of one matter class over `dims`. Deterministic in
/// (recipe.seed, cls); distinct classes draw from separate streams.
inline VoxelVolume synth_noise_field(Dims dims, const NoiseRecipe& recipe, std::uint8_t cls, Geometry geom = {}) {
    const auto it = recipe.classes.find(cls);
    if (it == recipe.classes.end()) throw Error("missing_class", "recipe has no class " + std::to_string(int(cls)));
    const MatterTarget& t = it->second;
    VoxelVolume out(dims, geom, float(t.mean));
    if (t.degenerate) return out;
    const std::uint64_t stream = derive_seed(recipe.seed, {0x6e6f697365ULL, cls});
    VoxelVolume f;
    switch (recipe.family) {
        case NoiseFamily::gaussian:
            f = detail::filtered_gaussian(dims, recipe.sigma0, t.sigma_g, recipe.mode, stream);
            for (float& x : f.data()) x += float(t.mean);
            break;
        case NoiseFamily::rician: {
            // magnitude of a complex signal whose channels carry the calibrated texture
            const VoxelVolume re = detail::filtered_gaussian(dims, recipe.sigma0, t.sigma_g, recipe.mode, stream);
            const VoxelVolume im = detail::filtered_gaussian(dims, recipe.sigma0, t.sigma_g, recipe.mode, mix64(stream));
            f = VoxelVolume(dims);
            for (std::size_t i = 0; i < f.size(); ++i) f[i] = float(std::hypot(t.mean + re[i], double(im[i])));
            break;
        }
        case NoiseFamily::perlin:
            f = detail::gradient_noise(dims, std::max(2.0, 4.0 * t.sigma_g), stream);
            detail::standardize(f, t.mean, t.std_f);
            break;
    }
    std::copy(f.data().begin(), f.data().end(), out.data().begin());
    return out;
}

// ------------------------------------------------------------ matter maps

/// Nearest-neighbour warp of the labels; statistics are carried over.
inline MatterMap deform_matter_map(const MatterMap& mm, const ElasticField& field) {
    MatterMap out = mm;
    out.labels = apply_deformation(mm.labels, field);
    return out;
}

/// Relabels every `excluded` voxel with the label of the nearest other voxel
/// (6-connected breadth-first growth, ties to the first voxel in scan order).
inline BinaryMask fill_excluded_labels(const BinaryMask& labels, std::uint8_t excluded = kVessel) {
    BinaryMask out = labels;
    std::deque<std::size_t> q;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out[i] != excluded) q.push_back(i);
    if (q.empty()) return out;
    static constexpr Index3 kFace[6] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    while (!q.empty()) {
        const std::size_t i = q.front();
        q.pop_front();
        const Index3 p = out.coord(i);
        for (const Index3& d : kFace) {
            const Index3 n = p + d;
            if (!out.contains(n)) continue;
            const std::size_t j = out.index(n);
            if (out[j] == excluded) {
                out[j] = out[i];
                q.push_back(j);
            }
        }
    }
    return out;
}

/// Stitches per-class noise into a background, then lays the geometry on top
/// with a voxelwise max inside `foreground`. Result clipped to [0, kGrayMax].
inline VoxelVolume composite(const BinaryMask& labels, const std::map<std::uint8_t, VoxelVolume>& fields,
                             const VoxelVolume& geometry_gray, const BinaryMask& foreground) {
    if (geometry_gray.dims() != labels.dims() || foreground.dims() != labels.dims())
        throw Error("dims_mismatch", "composite: grids differ");
    for (const auto& [c, f] : fields)
        if (f.dims() != labels.dims()) throw Error("dims_mismatch", "composite: noise field grid differs");
    VoxelVolume out(labels.dims(), geometry_gray.geometry());
    const VoxelVolume* lut[256] = {};
    for (const auto& [c, f] : fields) lut[c] = &f;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const VoxelVolume* f = lut[labels[i]];
        if (!f) throw Error("missing_noise_field", "no noise field for class " + std::to_string(int(labels[i])));
        float v = (*f)[i];
        if (foreground[i]) v = std::max(v, geometry_gray[i]);
        out[i] = std::clamp(v, 0.0f, kGrayMax);
    }
    return out;
}

inline VoxelVolume composite(const MatterMap& mm, const std::map<std::uint8_t, VoxelVolume>& fields,
                             const VoxelVolume& geometry_gray, const BinaryMask& foreground) {
    return composite(mm.labels, fields, geometry_gray, foreground);
}

/// One field per class present in `labels`.
inline std::map<std::uint8_t, VoxelVolume> synth_class_fields(const BinaryMask& labels, const NoiseRecipe& recipe) {
    bool present[256] = {};
    for (auto l : labels.data()) present[l] = true;
    std::map<std::uint8_t, VoxelVolume> out;
    for (int c = 0; c < 256; ++c)
        if (present[c]) out.emplace(std::uint8_t(c), synth_noise_field(labels.dims(), recipe, std::uint8_t(c), labels.geometry()));
    return out;
}

// ------------------------------------------------------------ serialization

inline nlohmann::json stats_to_json(const std::map<std::uint8_t, ClassStats>& stats) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [c, s] : stats)
        j[std::to_string(int(c))] = {{"mean", s.mean}, {"std", s.std}, {"count", s.count}, {"reliable", s.reliable}};
    return j;
}

inline std::map<std::uint8_t, ClassStats> stats_from_json(const nlohmann::json& j) {
    std::map<std::uint8_t, ClassStats> out;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            ClassStats s;
            s.mean = it.value().at("mean").get<double>();
            s.std = it.value().at("std").get<double>();
            s.count = it.value().at("count").get<std::size_t>();
            s.reliable = it.value().value("reliable", s.count >= kMinReliableVoxels);
            out[std::uint8_t(std::stoi(it.key()))] = s;
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_stats", std::string("stats JSON: ") + e.what());
    }
    return out;
}

inline nlohmann::json to_json(const NoiseRecipe& r) {
    nlohmann::json cls = nlohmann::json::object();
    for (const auto& [c, t] : r.classes)
        cls[std::to_string(int(c))] = {{"mean", t.mean},
                                       {"std_f", t.std_f},
                                       {"sigma_g", t.sigma_g},
                                       {"degenerate", t.degenerate},
                                       {"out_of_domain", t.out_of_domain}};
    return {{"sigma0", r.sigma0}, {"mode", to_string(r.mode)}, {"family", to_string(r.family)}, {"seed", r.seed}, {"classes", cls}};
}

inline NoiseRecipe noise_recipe_from_json(const nlohmann::json& j) {
    NoiseRecipe r;
    try {
        r.sigma0 = j.at("sigma0").get<double>();
        r.mode = filter_mode_from_string(j.at("mode").get<std::string>());
        r.family = noise_family_from_string(j.value("family", "gaussian"));
        r.seed = j.at("seed").get<std::uint64_t>();
        for (auto it = j.at("classes").begin(); it != j.at("classes").end(); ++it) {
            MatterTarget t;
            t.mean = it.value().at("mean").get<double>();
            t.std_f = it.value().at("std_f").get<double>();
            t.sigma_g = it.value().at("sigma_g").get<double>();
            t.degenerate = it.value().value("degenerate", false);
            t.out_of_domain = it.value().value("out_of_domain", false);
            r.classes[std::uint8_t(std::stoi(it.key()))] = t;
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_recipe", std::string("recipe JSON: ") + e.what());
    }
    return r;
}

/// u8 label grid plus a `stats` block and the thresholds in the header.
inline void write_matter_map(const MatterMap& mm, const std::filesystem::path& path) {
    write_vvol(mm.labels, path, {{"stats", stats_to_json(mm.stats)}, {"thresholds", mm.thresholds}});
}

inline MatterMap read_matter_map(const std::filesystem::path& path) {
    const VvolHeader h = read_vvol_header(path);
    MatterMap mm;
    mm.labels = read_payload<std::uint8_t>(h);
    if (h.raw.contains("stats")) mm.stats = stats_from_json(h.raw.at("stats"));
    if (h.raw.contains("thresholds")) mm.thresholds = h.raw.at("thresholds").get<std::vector<double>>();
    return mm;
}

}  // namespace vamos

#endif  // VAMOS_NOISE_HPP
