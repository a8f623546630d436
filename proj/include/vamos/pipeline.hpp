#ifndef VAMOS_PIPELINE_HPP
#define VAMOS_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vamos/aneurysm.hpp"
#include "vamos/components.hpp"
#include "vamos/graph.hpp"
#include "vamos/io.hpp"
#include "vamos/noise.hpp"
#include "vamos/parallel.hpp"
#include "vamos/phantom.hpp"
#include "vamos/random.hpp"
#include "vamos/raster.hpp"
#include "vamos/spline.hpp"
#include "vamos/threshold.hpp"

namespace vamos {

struct Range {
    double lo = 0, hi = 0;
    bool contains(double x) const { return x >= lo && x <= hi; }
    bool within(const Range& outer) const { return lo >= outer.lo && hi <= outer.hi; }
    double draw(std::mt19937_64& rng) const { return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng); }
};

enum class RadiusSampler { uniform, binned };

/// Equivalent-radius bins used for dataset and detection tables.
inline constexpr std::array<const char*, 3> kRadiusBins{"<=2", "(2,3]", ">3"};

inline int radius_bin(double r_mm) { return r_mm <= 2.0 ? 0 : (r_mm <= 3.0 ? 1 : 2); }

struct GenerationConfig {
    Dims patch{64, 64, 64};
    double spacing_mm = 0.4;
    int spline_degree = 2;
    double perturb_amplitude = 2.0;  // voxels, per control value
    Range radius_mm{0.4, 2.0};
    Range growth{0.7, 1.0};
    Range sac_sigma{1.0, 4.0};
    Range vessel_sigma{0.0, 6.0};   // elastic displacement std of the vessel and matter warps, voxels
    RadiusSampler radius_sampler = RadiusSampler::uniform;
    std::array<double, 3> bin_weights{292, 596, 110};
    double aneurysm_probability = 1.0;
    bool noise = true;
    FilterMode noise_mode = FilterMode::slice2d;
    std::optional<double> sigma0;    // default: per-patch policy
    NoiseFamily noise_family = NoiseFamily::gaussian;
    int n_classes = 3;
    std::optional<double> vessel_gray;  // default: mean of the source vessel voxels in the patch
    double tangent_window_mm = kDefaultTangentWindowMm;
    double spur_mm = kDefaultSpurLengthMm;
    std::uint64_t seed = 0;
    std::size_t count = 10;                  // used when `counts` is empty
    std::map<std::string, std::size_t> counts;  // per location label
    bool off_paper = false;
};

namespace detail {

inline const GenerationConfig& default_bounds() {
    static const GenerationConfig b = [] {
        GenerationConfig c;
        c.perturb_amplitude = 2.0;
        return c;
    }();
    return b;
}

inline nlohmann::json range_json(const Range& r) { return {r.lo, r.hi}; }

inline Range range_from_json(const nlohmann::json& j, const char* key) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw Error("invalid_config", std::string(key) + ": expected [lo, hi]");
    Range r{j[0].get<double>(), j[1].get<double>()};
    if (!(r.lo <= r.hi)) throw Error("invalid_config", std::string(key) + ": empty range");
    return r;
}

}  // namespace detail

/// Checks ranges are non-empty, physically valid and inside the published
/// bounds unless `off_paper` is set.
inline void validate(const GenerationConfig& c) {
    auto fail = [](const std::string& m) { throw Error("invalid_config", m); };
    if (c.patch.x < 8 || c.patch.y < 8 || c.patch.z < 8) fail("patch must be at least 8 voxels per axis");
    if (!(c.spacing_mm > 0)) fail("spacing_mm must be > 0");
    if (c.spline_degree < 1 || c.spline_degree > 5) fail("spline_degree must be in [1, 5]");
    if (c.perturb_amplitude < 0) fail("perturb_amplitude must be >= 0");
    for (auto [name, r] : {std::pair{"radius_mm", c.radius_mm}, std::pair{"growth", c.growth}, std::pair{"sac_sigma", c.sac_sigma},
                           std::pair{"vessel_sigma", c.vessel_sigma}})
        if (!(r.lo <= r.hi)) fail(std::string(name) + ": empty range");
    if (!(c.radius_mm.lo > 0) || !(c.growth.lo > 0) || c.sac_sigma.lo < 0 || c.vessel_sigma.lo < 0)
        fail("ranges must be positive (sigmas non-negative)");
    if (c.aneurysm_probability < 0 || c.aneurysm_probability > 1) fail("aneurysm_probability must be in [0, 1]");
    if (c.n_classes < 2 || c.n_classes > 4) fail("n_classes must be in [2, 4]");
    if (c.sigma0 && !(*c.sigma0 > 0)) fail("sigma0 must be > 0");
    if (c.vessel_gray && !(*c.vessel_gray > 0 && *c.vessel_gray <= kGrayMax)) fail("vessel_gray must be in (0, 4095]");
    if (!(c.tangent_window_mm > 0)) fail("tangent_window_mm must be > 0");
    if (c.spur_mm < 0) fail("spur_mm must be >= 0");
    double wsum = 0;
    for (double w : c.bin_weights) {
        if (w < 0) fail("bin_weights must be >= 0");
        wsum += w;
    }
    if (c.radius_sampler == RadiusSampler::binned) {
        bool any = false;
        for (int b = 0; b < 3; ++b) {
            const double lo = b == 0 ? 0.0 : (b == 1 ? 2.0 : 3.0), hi = b == 0 ? 2.0 : (b == 1 ? 3.0 : 1e300);
            any = any || (c.bin_weights[std::size_t(b)] > 0 && c.radius_mm.hi > lo && c.radius_mm.lo <= hi);
        }
        if (!any || !(wsum > 0)) fail("binned sampler: no bin with positive weight overlaps radius_mm");
    }
    if (!c.off_paper) {
        const auto& p = detail::default_bounds();
        if (!c.radius_mm.within(p.radius_mm)) fail("radius_mm outside [0.4, 2.0] requires off_paper");
        if (!c.growth.within(p.growth)) fail("growth outside [0.7, 1.0] requires off_paper");
        if (!c.sac_sigma.within(p.sac_sigma)) fail("sac_sigma outside [1, 4] requires off_paper");
        if (!c.vessel_sigma.within(p.vessel_sigma)) fail("vessel_sigma outside [0, 6] requires off_paper");
        if (c.perturb_amplitude > p.perturb_amplitude) fail("perturb_amplitude above 2 requires off_paper");
    }
}

inline nlohmann::json to_json(const GenerationConfig& c) {
    nlohmann::json j{{"patch", {c.patch.x, c.patch.y, c.patch.z}},
                     {"spacing_mm", c.spacing_mm},
                     {"spline_degree", c.spline_degree},
                     {"perturb_amplitude", c.perturb_amplitude},
                     {"radius_mm", detail::range_json(c.radius_mm)},
                     {"growth", detail::range_json(c.growth)},
                     {"sac_sigma", detail::range_json(c.sac_sigma)},
                     {"vessel_sigma", detail::range_json(c.vessel_sigma)},
                     {"radius_sampler", c.radius_sampler == RadiusSampler::uniform ? "uniform" : "binned"},
                     {"bin_weights", c.bin_weights},
                     {"aneurysm_probability", c.aneurysm_probability},
                     {"noise", c.noise},
                     {"noise_mode", to_string(c.noise_mode)},
                     {"sigma0", c.sigma0 ? nlohmann::json(*c.sigma0) : nlohmann::json("auto")},
                     {"noise_family", to_string(c.noise_family)},
                     {"n_classes", c.n_classes},
                     {"vessel_gray", c.vessel_gray ? nlohmann::json(*c.vessel_gray) : nlohmann::json("auto")},
                     {"tangent_window_mm", c.tangent_window_mm},
                     {"spur_mm", c.spur_mm},
                     {"seed", c.seed},
                     {"count", c.count},
                     {"counts", c.counts},
                     {"off_paper", c.off_paper}};
    return j;
}

/// Parses a config document. Missing keys keep their defaults; unknown keys
/// are rejected. `preset` may be "default" or "table5"
/// (binned radii up to 4 mm, sets off_paper).
inline GenerationConfig generation_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("invalid_config", "config must be a JSON object");
    GenerationConfig c;
    try {
        if (j.contains("preset")) {
            const auto p = j.at("preset").get<std::string>();
            if (p == "table5") {
                c.radius_mm = {0.4, 4.0};
                c.radius_sampler = RadiusSampler::binned;
                c.off_paper = true;
            } else if (p != "default") {
                throw Error("invalid_config", "unknown preset '" + p + "'");
            }
        }
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "preset") continue;
            else if (k == "patch") {
                if (v.is_number_integer()) c.patch = {v.get<long>(), v.get<long>(), v.get<long>()};
                else c.patch = {v.at(0).get<long>(), v.at(1).get<long>(), v.at(2).get<long>()};
            } else if (k == "spacing_mm") c.spacing_mm = v.get<double>();
            else if (k == "spline_degree") c.spline_degree = v.get<int>();
            else if (k == "perturb_amplitude") c.perturb_amplitude = v.get<double>();
            else if (k == "radius_mm") c.radius_mm = detail::range_from_json(v, "radius_mm");
            else if (k == "growth") c.growth = detail::range_from_json(v, "growth");
            else if (k == "sac_sigma") c.sac_sigma = detail::range_from_json(v, "sac_sigma");
            else if (k == "vessel_sigma") c.vessel_sigma = detail::range_from_json(v, "vessel_sigma");
            else if (k == "radius_sampler") {
                const auto s = v.get<std::string>();
                if (s == "uniform") c.radius_sampler = RadiusSampler::uniform;
                else if (s == "binned") c.radius_sampler = RadiusSampler::binned;
                else throw Error("invalid_config", "radius_sampler must be uniform or binned");
            } else if (k == "bin_weights") c.bin_weights = v.get<std::array<double, 3>>();
            else if (k == "aneurysm_probability") c.aneurysm_probability = v.get<double>();
            else if (k == "noise") c.noise = v.get<bool>();
            else if (k == "noise_mode") c.noise_mode = filter_mode_from_string(v.get<std::string>());
            else if (k == "sigma0") {
                if (v.is_string() && v.get<std::string>() == "auto") c.sigma0.reset();
                else c.sigma0 = v.get<double>();
            } else if (k == "noise_family") c.noise_family = noise_family_from_string(v.get<std::string>());
            else if (k == "n_classes") c.n_classes = v.get<int>();
            else if (k == "vessel_gray") {
                if (v.is_string() && v.get<std::string>() == "auto") c.vessel_gray.reset();
                else c.vessel_gray = v.get<double>();
            } else if (k == "tangent_window_mm") c.tangent_window_mm = v.get<double>();
            else if (k == "spur_mm") c.spur_mm = v.get<double>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "count") c.count = v.get<std::size_t>();
            else if (k == "counts") c.counts = v.get<std::map<std::string, std::size_t>>();
            else if (k == "off_paper") c.off_paper = v.get<bool>();
            else throw Error("invalid_config", "unknown config key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_config", std::string("config: ") + e.what());
    }
    validate(c);
    return c;
}

// ----------------------------------------------------------------- sources

/// A segmented volume with its extracted graph and the bifurcations offered
/// for synthesis. `labels` optionally names the location of each node.
struct Source {
    std::string id;
    VoxelVolume volume;
    BinaryMask vessels;
    VesselGraph graph;
    std::vector<int> nodes;
    std::map<int, std::string> labels;
    nlohmann::json origin = nlohmann::json::object();  // how to rebuild this source
};

/// Extracts the graph; with `nodes` empty every degree-3 node is offered.
inline Source make_source(std::string id, VoxelVolume volume, BinaryMask vessels, double spur_mm = kDefaultSpurLengthMm,
                          std::vector<int> nodes = {}) {
    if (volume.dims() != vessels.dims()) throw Error("dims_mismatch", "source volume and vessel mask grids differ");
    Source s;
    s.id = std::move(id);
    s.graph = extract_graph(vessels, spur_mm);
    if (nodes.empty()) {
        for (const GraphNode& n : s.graph.nodes)
            if (n.degree == 3) nodes.push_back(n.id);
    }
    for (int n : nodes) s.graph.node(n);
    s.nodes = std::move(nodes);
    s.volume = std::move(volume);
    s.vessels = std::move(vessels);
    return s;
}

/// Phantom "patient" as a source; rebuildable from its seed.
inline Source phantom_source(std::uint64_t seed, Dims dims = {96, 96, 96}, double spacing_mm = 0.4) {
    PatientSpec ps;
    ps.dims = dims;
    ps.geom.spacing = {spacing_mm, spacing_mm, spacing_mm};
    ps.seed = seed;
    Patient p = patient_phantom(ps);
    Source s = make_source("phantom-" + std::to_string(seed), std::move(p.volume), std::move(p.vessels));
    s.origin = {{"kind", "phantom"}, {"seed", seed}, {"dims", {dims.x, dims.y, dims.z}}, {"spacing_mm", spacing_mm}};
    return s;
}

inline Source file_source(const std::filesystem::path& volume, const std::filesystem::path& vessels, std::string id = {},
                          double spur_mm = kDefaultSpurLengthMm) {
    if (id.empty()) id = volume.stem().stem().string();
    Source s = make_source(id, read_volume(volume), read_mask(vessels), spur_mm);
    s.origin = {{"kind", "files"}, {"volume", volume.string()}, {"vessels", vessels.string()}};
    return s;
}

inline Source source_from_origin(const nlohmann::json& o, const std::string& id) {
    const std::string kind = o.at("kind").get<std::string>();
    if (kind == "phantom") {
        const auto& d = o.at("dims");
        Source s = phantom_source(o.at("seed").get<std::uint64_t>(), {d[0].get<long>(), d[1].get<long>(), d[2].get<long>()},
                                  o.at("spacing_mm").get<double>());
        s.id = id;
        return s;
    }
    if (kind == "files") return file_source(o.at("volume").get<std::string>(), o.at("vessels").get<std::string>(), id);
    throw Error("invalid_manifest", "unknown source kind '" + kind + "'");
}

// ------------------------------------------------------------------ patches

struct PatchSample {
    VoxelVolume patch;
    BinaryMask gt;
    nlohmann::json meta;
};

namespace detail {

inline constexpr int kMaxAttempts = 8;

enum SeedTag : std::uint64_t {
    kTagAneurysmDraw = 1,
    kTagSplines = 2,
    kTagVesselField = 3,
    kTagMatterField = 4,
    kTagNoise = 5,
    kTagSac = 6,
};

inline double draw_radius(const GenerationConfig& c, std::mt19937_64& rng) {
    if (c.radius_sampler == RadiusSampler::uniform) return c.radius_mm.draw(rng);
    std::array<Range, 3> bins{Range{0, 2}, Range{2, 3}, Range{3, 1e300}};
    std::array<double, 3> w{};
    for (std::size_t b = 0; b < 3; ++b) {
        const Range r{std::max(bins[b].lo, c.radius_mm.lo), std::min(bins[b].hi, c.radius_mm.hi)};
        bins[b] = r;
        w[b] = r.lo < r.hi ? c.bin_weights[b] : 0.0;
    }
    std::discrete_distribution<int> pick(w.begin(), w.end());
    return bins[std::size_t(pick(rng))].draw(rng);
}

/// Tubes along the fitted (and perturbed) splines of every branch of `g`,
/// sampled at most half a voxel apart. Radii follow the branch radii.
inline std::vector<Tube> model_tubes(const VesselGraph& g, int degree, double amplitude, std::uint64_t seed,
                                     nlohmann::json* splines_out = nullptr) {
    std::vector<Tube> tubes;
    for (const Branch& b : g.branches) {
        std::vector<Vec3> pts;
        for (const Index3& p : b.points) pts.push_back(p.to_vec());
        const auto distinct = collapse_duplicates(pts);
        Tube t;
        if (distinct.size() < 2) continue;
        const int k = std::min<int>(degree, int(distinct.size()) - 1);
        const BranchSpline s = perturb_spline(fit_spline(pts, k), amplitude, derive_seed(seed, {std::uint64_t(b.id)}));
        if (splines_out) splines_out->push_back(spline_to_json(s));
        const double len = polyline_length(evaluate_spline(s, std::max<std::size_t>(8, b.points.size() * 2)));
        const std::size_t n = std::max<std::size_t>(2, std::size_t(std::ceil(len / 0.5)) + 1);
        t.points = evaluate_spline(s, n);
        for (std::size_t i = 0; i < n; ++i) {
            const double f = double(i) / double(n - 1) * double(b.radii_mm.size() - 1);
            const std::size_t i0 = std::size_t(std::floor(f)), i1 = std::min(i0 + 1, b.radii_mm.size() - 1);
            t.radii_mm.push_back(b.radii_mm[i0] * (1 - (f - double(i0))) + b.radii_mm[i1] * (f - double(i0)));
        }
        tubes.push_back(std::move(t));
    }
    return tubes;
}

inline ElasticField warp_field(Dims dims, double sigma, std::uint64_t seed) {
    // uniform control displacements with standard deviation sigma
    return make_elastic_field(dims, {3, 3, 3}, sigma * std::sqrt(3.0), 0.0, seed);
}

}  // namespace detail

/// Runs the full synthesis for one bifurcation of `src`: crop around the
/// node, restrict the graph, fit and perturb splines, rasterize, warp,
/// optionally attach an aneurysm, then rebuild the background from the
/// source's matter statistics. Deterministic in (cfg.seed, index).
inline PatchSample gen_patch(const Source& src, int node, const GenerationConfig& cfg, std::uint64_t index) {
    validate(cfg);
    const std::uint64_t seed = derive_seed(cfg.seed, {index});
    const GraphNode& gn = src.graph.node(node);
    const BifurcationLocale loc = bifurcation_locale(src.graph, node, cfg.tangent_window_mm);

    // crop
    const auto [gray, sub, nid] = crop_around_node(src.volume, src.graph, node, cfg.patch, 0.0f);
    const Index3 start = gn.pos - Index3{cfg.patch.x / 2, cfg.patch.y / 2, cfg.patch.z / 2};
    const BinaryMask src_vessels = crop_at(src.vessels, start, cfg.patch, std::uint8_t{0});
    const Geometry geom = gray.geometry();

    // geometry
    nlohmann::json splines = nlohmann::json::array();
    const auto tubes = detail::model_tubes(sub, cfg.spline_degree, cfg.perturb_amplitude, derive_seed(seed, {detail::kTagSplines}), &splines);
    double vessel_gray = 0;
    if (cfg.vessel_gray) {
        vessel_gray = *cfg.vessel_gray;
    } else {
        double s = 0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < gray.size(); ++i)
            if (src_vessels[i]) {
                s += gray[i];
                ++n;
            }
        vessel_gray = n ? s / double(n) : 400.0;
    }
    auto [vgray, vmask] = rasterize_tubes(tubes, cfg.patch, geom, float(vessel_gray));

    std::mt19937_64 draw(derive_seed(seed, {detail::kTagAneurysmDraw}));
    const double vessel_sigma = cfg.vessel_sigma.draw(draw);
    const ElasticField vfield = detail::warp_field(cfg.patch, vessel_sigma, derive_seed(seed, {detail::kTagVesselField}));
    vgray = apply_deformation(vgray, vfield);
    vmask = apply_deformation(vmask, vfield);

    // aneurysm
    const bool want_aneurysm = std::uniform_real_distribution<double>(0, 1)(draw) < cfg.aneurysm_probability;
    VoxelVolume geometry_gray = vgray;
    BinaryMask foreground = vmask;
    BinaryMask gt(cfg.patch, geom, 0);
    nlohmann::json aneurysm = nullptr;
    if (want_aneurysm) {
        BifurcationLocale l = loc;
        const Vec3 node_vox = gn.pos.to_vec() - start.to_vec();
        l.node_world = geom.to_world(forward_map(vfield, vfield.is_identity() ? std::vector<Vec3>{} : vfield.dense(), node_vox));
        std::string last_error;
        for (int attempt = 0; attempt < detail::kMaxAttempts; ++attempt) {
            std::mt19937_64 rng(derive_seed(seed, {detail::kTagSac, std::uint64_t(attempt)}));
            AneurysmSpec a;
            a.radius_mm = detail::draw_radius(cfg, rng);
            a.growth = cfg.growth.draw(rng);
            a.sigma_e = cfg.sac_sigma.draw(rng);
            a.seed = rng();
            try {
                auto [g2, gt2, placed] = attach_aneurysm(vgray, vmask, l, a, float(vessel_gray));
                if (count_nonzero(gt2) == 0) {
                    last_error = "sac hidden inside the vessel";
                    continue;
                }
                geometry_gray = std::move(g2);
                gt = std::move(gt2);
                for (std::size_t i = 0; i < foreground.size(); ++i) foreground[i] |= placed.sac[i];
                aneurysm = to_json(placed);
                aneurysm["attempt"] = attempt;
                aneurysm["gt_voxels"] = count_nonzero(gt);
                aneurysm["node_voxel"] = to_json(geom.to_voxel(l.node_world));
                break;
            } catch (const Error& e) {
                last_error = e.code() + ": " + e.what();
            }
        }
        if (aneurysm.is_null()) throw Error("patch_rejected", "no admissible aneurysm after retries (" + last_error + ")");
    }
    for (std::size_t i = 0; i < foreground.size(); ++i)
        if (geometry_gray[i] > 0) foreground[i] = 1;

    // background
    VoxelVolume out;
    nlohmann::json noise = {{"enabled", cfg.noise}};
    if (cfg.noise) {
        MatterMap mm = multi_threshold(gray, src_vessels, cfg.n_classes);
        const auto stats = collect_matter_stats(gray, mm);
        mm.labels = fill_excluded_labels(mm.labels);
        const ElasticField mfield = detail::warp_field(cfg.patch, vessel_sigma, derive_seed(seed, {detail::kTagMatterField}));
        mm = deform_matter_map(mm, mfield);
        const NoiseRecipe recipe = make_noise_recipe(stats, cfg.noise_mode, derive_seed(seed, {detail::kTagNoise}), cfg.sigma0, cfg.noise_family);
        out = composite(mm, synth_class_fields(mm.labels, recipe), geometry_gray, foreground);
        noise["recipe"] = to_json(recipe);
        noise["thresholds"] = mm.thresholds;
    } else {
        out = VoxelVolume(cfg.patch, geom);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(geometry_gray[i], 0.0f, kGrayMax);
    }

    PatchSample ps;
    ps.patch = std::move(out);
    ps.gt = std::move(gt);
    char id[32];
    std::snprintf(id, sizeof id, "%06llu", static_cast<unsigned long long>(index));
    const auto label = src.labels.count(node) ? src.labels.at(node) : std::string("unlabeled");
    ps.meta = {{"id", id},
               {"index", index},
               {"seed", seed},
               {"source", src.id},
               {"node", node},
               {"location", label},
               {"patch_start", to_json(start)},
               {"locale", {{"theta_rad", loc.theta}, {"radius_mm", loc.radius_mm}, {"node_world_mm", to_json(loc.node_world)}}},
               {"branches", sub.branches.size()},
               {"splines", {{"degree", cfg.spline_degree}, {"amplitude", cfg.perturb_amplitude}, {"count", splines.size()}}},
               {"vessel", {{"gray", vessel_gray}, {"sigma", vessel_sigma}, {"voxels", count_nonzero(vmask)}}},
               {"aneurysm_present", !aneurysm.is_null()},
               {"aneurysm", aneurysm},
               {"noise", noise}};
    return ps;
}

// ------------------------------------------------------------------ dataset

struct Assignment {
    std::size_t source = 0;
    int node = -1;
    std::string label;
};

/// Resolves per-label counts into an ordered list of (source, node) pairs,
/// cycling through the admissible bifurcations of each label. Bifurcations
/// whose locale cannot be computed are skipped and listed in `rejected`.
inline std::vector<Assignment> plan_dataset(const std::vector<Source>& sources, const GenerationConfig& cfg,
                                            nlohmann::json* rejected = nullptr) {
    std::map<std::string, std::vector<Assignment>> pool;
    for (std::size_t s = 0; s < sources.size(); ++s)
        for (int n : sources[s].nodes) {
            try {
                bifurcation_locale(sources[s].graph, n, cfg.tangent_window_mm);
            } catch (const Error& e) {
                if (rejected) rejected->push_back({{"source", sources[s].id}, {"node", n}, {"reason", e.code()}});
                continue;
            }
            const auto label = sources[s].labels.count(n) ? sources[s].labels.at(n) : std::string("unlabeled");
            pool[label].push_back({s, n, label});
        }
    std::vector<Assignment> plan;
    auto take = [&](const std::vector<Assignment>& from, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) plan.push_back(from[i % from.size()]);
    };
    if (cfg.counts.empty()) {
        std::vector<Assignment> all;
        for (const auto& [l, v] : pool) all.insert(all.end(), v.begin(), v.end());
        if (all.empty() && cfg.count > 0) throw Error("insufficient_bifurcations", "no admissible bifurcation in the sources");
        if (cfg.count > 0) take(all, cfg.count);
    } else {
        for (const auto& [label, count] : cfg.counts) {
            if (count == 0) continue;
            auto it = pool.find(label);
            if (it == pool.end() || it->second.empty())
                throw Error("insufficient_bifurcations", "no admissible bifurcation labelled '" + label + "'");
            take(it->second, count);
        }
    }
    return plan;
}

struct DatasetResult {
    nlohmann::json manifest;
    std::size_t written = 0;
    std::size_t rejected = 0;
};

/// Generates the planned samples and writes `patches/<id>.vvol.*`,
/// `masks/<id>.vvol.*` and `manifest.json` under `out`.
inline DatasetResult gen_dataset(const std::vector<Source>& sources, const GenerationConfig& cfg, const std::filesystem::path& out,
                                 std::size_t threads = 0) {
    validate(cfg);
    nlohmann::json rejected_nodes = nlohmann::json::array();
    const auto plan = plan_dataset(sources, cfg, &rejected_nodes);
    std::filesystem::create_directories(out / "patches");
    std::filesystem::create_directories(out / "masks");

    nlohmann::json samples = nlohmann::json::array(), rejected = nlohmann::json::array();
    std::map<std::string, std::size_t> per_location;
    std::array<std::size_t, 3> bins{};
    std::size_t with_aneurysm = 0;
    ordered_parallel_map<PatchSample>(
        plan.size(), worker_count(threads),
        [&](std::size_t i) { return gen_patch(sources[plan[i].source], plan[i].node, cfg, i); },
        [&](std::size_t i, std::variant<PatchSample, std::string> r) {
            if (auto* err = std::get_if<std::string>(&r)) {
                rejected.push_back({{"index", i}, {"source", sources[plan[i].source].id}, {"node", plan[i].node}, {"reason", *err}});
                return;
            }
            PatchSample& s = std::get<PatchSample>(r);
            const std::string id = s.meta.at("id").get<std::string>();
            write_volume(s.patch, out / "patches" / (id + ".vvol"));
            write_mask(s.gt, out / "masks" / (id + ".vvol"));
            ++per_location[plan[i].label];
            if (s.meta.at("aneurysm_present").get<bool>()) {
                ++with_aneurysm;
                ++bins[std::size_t(radius_bin(s.meta["aneurysm"]["spec"]["radius_mm"].get<double>()))];
            }
            samples.push_back(std::move(s.meta));
        });

    nlohmann::json src = nlohmann::json::array();
    for (const Source& s : sources) {
        nlohmann::json labels = nlohmann::json::object();
        for (const auto& [n, l] : s.labels) labels[std::to_string(n)] = l;
        src.push_back({{"id", s.id}, {"origin", s.origin}, {"nodes", s.nodes}, {"labels", labels}});
    }
    nlohmann::json radius_bins = nlohmann::json::object();
    for (std::size_t b = 0; b < 3; ++b) radius_bins[kRadiusBins[b]] = bins[b];
    DatasetResult res;
    res.written = samples.size();
    res.rejected = rejected.size();
    res.manifest = {{"format", "vamos-dataset/1"},
                    {"config", to_json(cfg)},
                    {"sources", src},
                    {"samples", std::move(samples)},
                    {"rejected", std::move(rejected)},
                    {"rejected_nodes", std::move(rejected_nodes)},
                    {"counts", {{"patches", res.written}, {"with_aneurysm", with_aneurysm}, {"per_location", per_location},
                                {"per_radius_bin", radius_bins}}}};
    detail::write_json_file(out / "manifest.json", res.manifest);
    return res;
}

/// Rebuilds the sources recorded in a manifest (phantoms from their seeds,
/// file sources from their paths).
inline std::vector<Source> sources_from_manifest(const nlohmann::json& manifest) {
    std::vector<Source> out;
    for (const auto& s : manifest.at("sources")) {
        Source src = source_from_origin(s.at("origin"), s.at("id").get<std::string>());
        src.nodes = s.at("nodes").get<std::vector<int>>();
        for (auto it = s.at("labels").begin(); it != s.at("labels").end(); ++it) src.labels[std::stoi(it.key())] = it.value();
        out.push_back(std::move(src));
    }
    return out;
}

/// Regenerates one sample from its manifest record.
inline PatchSample replay_sample(const std::vector<Source>& sources, const GenerationConfig& cfg, const nlohmann::json& meta) {
    const std::string sid = meta.at("source").get<std::string>();
    for (const Source& s : sources)
        if (s.id == sid) return gen_patch(s, meta.at("node").get<int>(), cfg, meta.at("index").get<std::uint64_t>());
    throw Error("invalid_manifest", "unknown source '" + sid + "'");
}

inline DatasetResult replay_dataset(const nlohmann::json& manifest, const std::filesystem::path& out, std::size_t threads = 0) {
    const GenerationConfig cfg = generation_config_from_json(manifest.at("config"));
    return gen_dataset(sources_from_manifest(manifest), cfg, out, threads);
}

// ------------------------------------------------------- training patches

struct ExtractionConfig {
    Dims patch{64, 64, 64};
    std::size_t positives_per_lesion = 10;
    std::size_t negatives_per_volume = 20;
    std::uint64_t seed = 0;
};

struct TrainingPatch {
    VoxelVolume image;
    BinaryMask lesions;
    Index3 start;
    bool positive = false;
    int lesion = -1;  // component index for positives
};

namespace detail {

// Summed-area table with a zero border: S(x+1, y+1, z+1) = count in [0..x]x[0..y]x[0..z].
struct CountTable {
    Dims d;
    std::vector<long> s;
    explicit CountTable(const BinaryMask& m) : d(m.dims()), s(std::size_t((d.x + 1) * (d.y + 1) * (d.z + 1)), 0) {
        for (long z = 0; z < d.z; ++z)
            for (long y = 0; y < d.y; ++y)
                for (long x = 0; x < d.x; ++x)
                    at(x + 1, y + 1, z + 1) = (m(x, y, z) ? 1 : 0) + at(x, y + 1, z + 1) + at(x + 1, y, z + 1) + at(x + 1, y + 1, z) -
                                              at(x, y, z + 1) - at(x, y + 1, z) - at(x + 1, y, z) + at(x, y, z);
    }
    long& at(long x, long y, long z) { return s[std::size_t(x + (d.x + 1) * (y + (d.y + 1) * z))]; }
    long get(long x, long y, long z) const { return s[std::size_t(x + (d.x + 1) * (y + (d.y + 1) * z))]; }
    // voxels in [lo, hi) after clipping to the grid
    long count(Index3 lo, Index3 hi) const {
        const long x0 = std::clamp(lo.x, 0L, d.x), y0 = std::clamp(lo.y, 0L, d.y), z0 = std::clamp(lo.z, 0L, d.z);
        const long x1 = std::clamp(hi.x, 0L, d.x), y1 = std::clamp(hi.y, 0L, d.y), z1 = std::clamp(hi.z, 0L, d.z);
        if (x1 <= x0 || y1 <= y0 || z1 <= z0) return 0;
        return get(x1, y1, z1) - get(x0, y1, z1) - get(x1, y0, z1) - get(x1, y1, z0) + get(x0, y0, z1) + get(x0, y1, z0) +
               get(x1, y0, z0) - get(x0, y0, z0);
    }
};

}  // namespace detail

/// Positive patches: for each 26-connected lesion, random crops that contain
/// the whole lesion. Negative patches: crops centred on random vessel voxels
/// whose box holds no lesion voxel.
inline std::vector<TrainingPatch> extract_training_patches(const VoxelVolume& vol, const BinaryMask& lesions, const BinaryMask& vessels,
                                                           const ExtractionConfig& cfg) {
    if (vol.dims() != lesions.dims() || vol.dims() != vessels.dims()) throw Error("dims_mismatch", "extract_training_patches: grids differ");
    std::mt19937_64 rng(derive_seed(cfg.seed, {0x747261696eULL}));
    std::vector<TrainingPatch> out;
    auto emit = [&](Index3 start, bool positive, int lesion) {
        TrainingPatch t;
        t.image = crop_at(vol, start, cfg.patch, 0.0f);
        t.lesions = crop_at(lesions, start, cfg.patch, std::uint8_t{0});
        t.start = start;
        t.positive = positive;
        t.lesion = lesion;
        out.push_back(std::move(t));
    };

    const Components comps = connected_components(lesions, 26);
    for (std::size_t c = 0; c < comps.count(); ++c) {
        Index3 lo{vol.dims().x, vol.dims().y, vol.dims().z}, hi{-1, -1, -1};
        for (std::size_t i : comps.voxels[c]) {
            const Index3 p = lesions.coord(i);
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], p[a]);
                hi[a] = std::max(hi[a], p[a]);
            }
        }
        std::array<std::uniform_int_distribution<long>, 3> shift;
        for (int a = 0; a < 3; ++a) {
            const long smin = hi[a] - cfg.patch[a] + 1, smax = lo[a];
            if (smin > smax) throw Error("lesion_too_large", "lesion " + std::to_string(c) + " does not fit in the patch");
            shift[std::size_t(a)] = std::uniform_int_distribution<long>(smin, smax);
        }
        for (std::size_t k = 0; k < cfg.positives_per_lesion; ++k) {
            Index3 s;
            for (int a = 0; a < 3; ++a) s[a] = shift[std::size_t(a)](rng);
            emit(s, true, int(c));
        }
    }

    if (cfg.negatives_per_volume > 0) {
        const detail::CountTable table(lesions);
        std::vector<Index3> candidates;
        bool any_vessel = false;
        const Index3 half{cfg.patch.x / 2, cfg.patch.y / 2, cfg.patch.z / 2};
        for (std::size_t i = 0; i < vessels.size(); ++i) {
            if (!vessels[i]) continue;
            any_vessel = true;
            const Index3 s = vessels.coord(i) - half;
            if (table.count(s, s + Index3{cfg.patch.x, cfg.patch.y, cfg.patch.z}) == 0) candidates.push_back(s);
        }
        if (!any_vessel) throw Error("no_vessels", "negative extraction needs vessel voxels");
        if (candidates.empty()) throw Error("no_negative_location", "every vessel-centred patch overlaps a lesion");
        std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
        for (std::size_t k = 0; k < cfg.negatives_per_volume; ++k) emit(candidates[pick(rng)], false, -1);
    }
    return out;
}

}  // namespace vamos

#endif  // VAMOS_PIPELINE_HPP
