// Desk-scale acceptance checks. One PASS/FAIL line per criterion; exit status
// is nonzero when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "detection_oracle.hpp"
#include "test_support.hpp"
#include "vamos/aneurysm.hpp"
#include "vamos/detection.hpp"
#include "vamos/fidelity.hpp"
#include "vamos/pipeline.hpp"

using namespace vamos;
namespace fs = std::filesystem;
namespace vt = vamos::testing;

namespace {

constexpr double kPi = std::numbers::pi;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    std::string failures;
    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            failures += " [failed: " + what + "]";
        }
    }
};

// ------------------------------------------------------------------ 1

Outcome noise_calibration() {
    Outcome o;
    double worst_mean = 0, worst_std = 0, slowest = 0;
    for (double mu : {40.0, 60.0}) {
        std::map<std::uint8_t, ClassStats> stats;
        const std::array<double, 3> targets{1, 2, 4};
        for (std::uint8_t c = 0; c < 3; ++c) stats[c] = ClassStats{mu, targets[c], 100000, true};
        const NoiseRecipe r = make_noise_recipe(stats, FilterMode::slice2d, std::uint64_t(mu));
        for (std::uint8_t c = 0; c < 3; ++c) {
            const auto t0 = std::chrono::steady_clock::now();
            const VoxelVolume f = synth_noise_field({64, 64, 64}, r, c);
            slowest = std::max(slowest, seconds_since(t0));
            const double em = std::abs(vt::mean_of(f) / mu - 1), es = std::abs(vt::std_of(f) / targets[c] - 1);
            worst_mean = std::max(worst_mean, em);
            worst_std = std::max(worst_std, es);
        }
    }
    o.require(worst_mean <= 0.01, "mean within 1%");
    o.require(worst_std <= 0.10, "std within 10%");
    o.require(slowest < 1.0, "under 1 s per field");
    o.detail << "max |mean err| " << worst_mean * 100 << "%, max |std err| " << worst_std * 100 << "%, slowest field " << slowest << " s";
    return o;
}

// ------------------------------------------------------------------ 2

Outcome stand_off() {
    Outcome o;
    const double c1 = stand_off_distance(1.0, 1.0, 1.0, kPi / 2), c2 = stand_off_distance(1.2, 0.7, 0.8, kPi / 3);
    o.require(std::abs(c1 - 2.41421356237) < 1e-9, "case 1 = 1 + sqrt(2)");
    o.require(std::abs(c2 - 2.44) < 1e-9, "case 2 = 2.44");

    YPhantomSpec y;
    y.dims = {64, 64, 64};
    const Phantom p = y_phantom(y);
    const VesselGraph g = extract_graph(p.mask);
    int node = -1;
    for (const GraphNode& n : g.nodes)
        if (n.degree == 3) node = n.id;
    o.require(node >= 0, "Y phantom has a bifurcation");
    if (node < 0) return o;
    const BifurcationLocale loc = bifurcation_locale(g, node);
    const double half_voxel = 0.5 * p.mask.spacing().x;
    double worst = 0;
    int placed = 0;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        std::mt19937_64 rng(seed);
        AneurysmSpec a;
        a.radius_mm = std::uniform_real_distribution<double>(0.4, 2.0)(rng);
        a.growth = std::uniform_real_distribution<double>(0.7, 1.0)(rng);
        a.sigma_e = std::uniform_real_distribution<double>(1.0, 4.0)(rng);
        a.seed = rng();
        const auto [gray, gt, placed_sac] = attach_aneurysm(p.gray, p.mask, loc, a, kVesselGray);
        const double expect = a.radius_mm * a.growth + std::sqrt(std::pow(loc.radius_mm / std::tan(loc.theta / 2), 2) + loc.radius_mm * loc.radius_mm);
        worst = std::max(worst, std::abs(norm(placed_sac.rendered_center - loc.node_world) - expect));
        ++placed;
    }
    o.require(placed == 25, "25 placements");
    o.require(worst <= half_voxel, "rendered centre within half a voxel");
    o.detail << "cases " << c1 << " / " << c2 << " mm; max |rendered - D| over 25 seeds " << worst << " mm (limit " << half_voxel << ")";
    return o;
}

// ------------------------------------------------------------------ 3

Outcome derivation_consistency() {
    Outcome o;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> R(0.1, 5.0), th(0.0, kPi / 2);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        const double r = R(rng);
        double t = th(rng);
        while (t <= 0) t = th(rng);
        const double H = node_to_wall(r, t);
        const double res = H * H - std::pow(r / std::tan(t), 2) - r * r;
        worst = std::max(worst, std::abs(res) / std::max(1.0, H * H));
    }
    o.require(worst <= 1e-9, "residual within 1e-9");
    o.detail << "max |H^2 - (R/tan)^2 - R^2| / max(1, H^2) = " << worst;
    return o;
}

// ------------------------------------------------------------------ 4

Outcome skeleton_graph() {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    const Phantom y = y_phantom();
    const VesselGraph gy = extract_graph(y.mask);
    const double ty = seconds_since(t0);
    double worst = 0;
    for (const Branch& b : gy.branches) worst = std::max(worst, std::abs(b.radii_mm[b.radii_mm.size() / 2] / 0.8 - 1));
    o.require(gy.count(NodeKind::bifurcation) == 1 && gy.count(NodeKind::endpoint) == 3, "Y: 1 bifurcation + 3 endpoints");

    t0 = std::chrono::steady_clock::now();
    const Phantom s = straight_tube_phantom();
    const VesselGraph gs = extract_graph(s.mask);
    const double ts = seconds_since(t0);
    o.require(gs.count(NodeKind::endpoint) == 2 && gs.branches.size() == 1, "tube: 2 endpoints, 1 branch");
    if (!gs.branches.empty()) {
        const auto& r = gs.branches[0].radii_mm;
        worst = std::max(worst, std::abs(r[r.size() / 2] / 1.2 - 1));
    }
    o.require(worst <= 0.15, "mid-branch radii within 15%");
    o.require(ty < 5 && ts < 5, "under 5 s per phantom");
    o.detail << "Y " << gy.count(NodeKind::bifurcation) << " bif / " << gy.count(NodeKind::endpoint) << " end in " << ty << " s; tube "
             << gs.count(NodeKind::endpoint) << " end / " << gs.branches.size() << " branch in " << ts << " s; max radius err " << worst * 100
             << "%";
    return o;
}

// ------------------------------------------------------------------ 5

Outcome spline_round_trip() {
    Outcome o;
    std::vector<Vec3> pts;
    for (int i = 0; i < 50; ++i) {
        const double t = 4 * kPi * i / 49.0;
        pts.push_back({5 * std::cos(t), 5 * std::sin(t), 2 * t / (2 * kPi)});
    }
    const BranchSpline s = fit_spline(pts, 3);
    const double res = max_fit_residual(s, pts);
    // independent check: distance of every sample to a dense polyline of the curve
    const auto dense = evaluate_spline(s, 20000);
    double curve = 0;
    for (const Vec3& p : pts) {
        double best = 1e300;
        for (const Vec3& q : dense) best = std::min(best, norm(p - q));
        curve = std::max(curve, best);
    }
    o.require(res <= 0.5 && curve <= 0.5, "helix residual within 0.5 voxel");
    o.require(perturb_spline(s, 0.0, 9) == s, "amplitude 0 is identity");
    double end_err = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const BranchSpline q = perturb_spline(s, 2.0, seed, true);
        end_err = std::max({end_err, norm(evaluate(q, q.t_begin()) - evaluate(s, s.t_begin())), norm(evaluate(q, q.t_end()) - evaluate(s, s.t_end()))});
    }
    o.require(end_err <= 1e-9, "endpoints fixed to 1e-9");
    o.detail << "helix max residual " << res << " vox (point-to-curve " << curve << "), endpoint drift " << end_err;
    return o;
}

// ------------------------------------------------------------------ 6

Outcome noise_law() {
    Outcome o;
    const double sigma0 = 20;
    double lo = 1e9, hi = 0;
    for (double sg : {1.5, 2.0, 3.0, 4.0}) {
        NoiseRecipe r;
        r.sigma0 = sigma0;
        r.seed = 6;
        r.classes[1] = MatterTarget{0.0, sigma0 * filtered_noise_gain(sg, FilterMode::slice2d), sg};
        const VoxelVolume f = synth_noise_field({64, 64, 64}, r, 1);
        const double ratio = vt::std_of(f) / (sigma0 / (2 * sg * std::sqrt(kPi)));
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
    }
    o.require(lo >= 0.9 && hi <= 1.1, "ratio in [0.9, 1.1]");
    o.detail << "measured/law ratio in [" << lo << ", " << hi << "] for sigma_G in {1.5, 2, 3, 4}";
    return o;
}

// ------------------------------------------------------------------ 7

Outcome detection_oracle_equivalence() {
    Outcome o;
    std::mt19937 rng(77);
    int agree = 0;
    std::vector<MatchTable> tables;
    std::size_t otp = 0, ofn = 0, ofp = 0;
    for (int k = 0; k < 50; ++k) {
        const Vec3 sp = k % 4 == 0 ? Vec3{0.4, 0.4, 0.7} : Vec3{0.4, 0.4, 0.4};
        const auto gt = vt::blobs({32, 32, 32}, k % 5, 4.0, rng, sp);
        auto pred = vt::blobs({32, 32, 32}, (k * 7) % 4, 3.5, rng, sp);
        // shifted copy of the reference so true positives occur alongside misses
        const Index3 shift{k % 3, (k / 3) % 3 - 1, 0};
        for (long z = 0; z < 32; ++z)
            for (long y = 0; y < 32; ++y)
                for (long x = 0; x < 32; ++x)
                    if (gt[{x, y, z}] && pred.contains(Index3{x, y, z} + shift)) pred[Index3{x, y, z} + shift] = 1;
        const MatchTable t = match_lesions(pred, gt);
        const auto ref = vt::detection_oracle(pred, gt);
        const auto dice = dice_true_positives(t);
        bool same = t.tp() == ref.tp && t.fn() == ref.fn && t.fp() == ref.fp && dice.size() == ref.dice.size();
        for (std::size_t i = 0; same && i < dice.size(); ++i) same = dice[i].dice == ref.dice[i];
        agree += same;
        otp += ref.tp;
        ofn += ref.fn;
        ofp += ref.fp;
        tables.push_back(t);
    }
    const auto s = sensitivity_fp(tables);
    const bool agg = s.tp == otp && s.fn == ofn && s.fp == ofp && s.fp_per_case == double(ofp) / 50.0 &&
                     (otp + ofn == 0 ? !s.sensitivity : (s.sensitivity && *s.sensitivity == double(otp) / double(otp + ofn)));
    o.require(agree == 50, "all instances agree");
    o.require(agg, "aggregate agrees");
    o.detail << agree << "/50 instances identical; pooled TP " << s.tp << " FN " << s.fn << " FP " << s.fp;
    return o;
}

// ------------------------------------------------------------------ 8

Outcome fidelity_ordering() {
    Outcome o;
    std::vector<VoxelVolume> gt, models;
    std::vector<int> owner;
    GenerationConfig cfg;
    cfg.aneurysm_probability = 0;
    cfg.seed = 8;
    for (std::uint64_t p = 0; p < 10; ++p) {
        const Source s = phantom_source(100 + p);
        if (s.nodes.empty()) {
            o.require(false, "patient " + std::to_string(p) + " has a bifurcation");
            continue;
        }
        const auto [patch, sub, nid] = crop_around_node(s.volume, s.graph, s.nodes[0], cfg.patch, 0.0f);
        gt.push_back(patch);
        models.push_back(gen_patch(s, s.nodes[0], cfg, p).patch);
        owner.push_back(int(gt.size() - 1));
    }
    FidelityOptions fo;
    fo.seed = 8;
    const FidelityReport r = fidelity_experiment(gt, models, owner, fo);
    const auto& own = r.summaries.at(kOwnModel);
    const auto& inter = r.summaries.at(kInterPatient);
    const double p_own = own.at("PSNR").median, p_inter = inter.at("PSNR").median;
    const double s_own = own.at("SSIM").median, s_inter = inter.at("SSIM").median;
    o.require(p_own > p_inter, "PSNR own > inter");
    o.require(s_own > s_inter, "SSIM own > inter");
    o.detail << "median PSNR own " << p_own << " vs inter " << p_inter << " dB; median SSIM own " << s_own << " vs inter " << s_inter;
    return o;
}

// ------------------------------------------------------------------ 9

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) {
            std::ifstream f(e.path(), std::ios::binary);
            out[fs::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
        }
    return out;
}

Outcome determinism_throughput(const fs::path& work) {
    Outcome o;
    GenerationConfig cfg;
    cfg.seed = 9;
    cfg.count = 100;
    auto run = [&](const std::string& name, std::size_t workers) {
        const fs::path dir = work / name;
        fs::remove_all(dir);
        const auto t0 = std::chrono::steady_clock::now();
        const Source s = phantom_source(cfg.seed);
        gen_dataset({s}, cfg, dir, workers);
        return seconds_since(t0);
    };
    const double t1 = run("w1_a", 1);
    const double t1b = run("w1_b", 1);
    const double t4 = run("w4", 4);
    const auto a = tree(work / "w1_a");
    const bool runs_equal = a == tree(work / "w1_b");
    const bool workers_equal = a == tree(work / "w4");
    o.require(a.size() == 100 * 4 + 1, "100 patch/mask pairs + manifest");
    o.require(runs_equal, "identical across runs");
    o.require(workers_equal, "identical across 1 vs 4 workers");
    o.require(std::min(t1, t1b) < 120, "100 patches under 120 s single-worker");
    const unsigned hw = std::thread::hardware_concurrency();
    const double speedup = std::min(t1, t1b) / t4;
    if (hw < 4) o.require(false, "4-worker scaling not measurable on " + std::to_string(hw) + " hardware thread(s)");
    else o.require(speedup >= 3.0, "near-linear scaling to 4 workers (speedup >= 3)");
    o.detail << "1 worker " << std::min(t1, t1b) << " s, 4 workers " << t4 << " s (speedup " << speedup << ", " << hw
             << " hardware threads); files " << a.size();
    return o;
}

// ------------------------------------------------------------------ 10

Outcome training_contracts() {
    Outcome o;
    std::size_t pos = 0, neg = 0, bad_pos = 0, bad_neg = 0, lesions = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        PatientSpec ps;
        ps.seed = 200 + seed;
        ps.aneurysm = true;
        ps.aneurysm_radius_mm = 1.2 + 0.3 * double(seed);
        const Patient p = patient_phantom(ps);
        const Components comps = connected_components(p.lesions, 26);
        lesions += comps.count();
        ExtractionConfig c;
        c.seed = seed;
        std::map<int, std::size_t> per_lesion;
        std::size_t vol_neg = 0;
        for (const TrainingPatch& t : extract_training_patches(p.volume, p.lesions, p.vessels, c)) {
            if (t.positive) {
                ++pos;
                ++per_lesion[t.lesion];
                // every voxel of this lesion must fall inside the crop box
                for (std::size_t i : comps.voxels[std::size_t(t.lesion)]) {
                    const Index3 q = p.lesions.coord(i) - t.start;
                    if (!c.patch.contains(q)) {
                        ++bad_pos;
                        break;
                    }
                }
            } else {
                ++neg;
                ++vol_neg;
                const auto v = crop_at(p.vessels, t.start, c.patch, std::uint8_t{0});
                const auto l = crop_at(p.lesions, t.start, c.patch, std::uint8_t{0});
                if (count_nonzero(v) == 0 || count_nonzero(l) != 0) ++bad_neg;
            }
        }
        for (const auto& [id, n] : per_lesion) o.require(n == 10, "10 positives per lesion");
        o.require(per_lesion.size() == comps.count(), "every lesion sampled");
        o.require(vol_neg == 20, "20 negatives per volume");
    }
    o.require(lesions > 0, "phantoms carry lesions");
    o.require(bad_pos == 0, "positives contain whole lesion");
    o.require(bad_neg == 0, "negatives: >= 1 vessel voxel, 0 lesion voxels");
    o.detail << lesions << " lesions in 5 phantoms; " << pos << " positives (" << bad_pos << " violations), " << neg << " negatives (" << bad_neg
             << " violations)";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "vamos_acceptance";
    fs::create_directories(work);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"noise calibration closure", noise_calibration},
        {"stand-off distance", stand_off},
        {"hypotenuse derivation consistency", derivation_consistency},
        {"skeleton/graph phantoms", skeleton_graph},
        {"spline round trip", spline_round_trip},
        {"filtered noise law", noise_law},
        {"detection protocol oracle equivalence", detection_oracle_equivalence},
        {"fidelity ordering", fidelity_ordering},
        {"determinism and throughput", [&] { return determinism_throughput(work); }},
        {"training patch contracts", training_contracts},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        failed += !o.pass;
        std::printf("criterion %zu %s: %s -- %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(), (o.detail.str() + o.failures).c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
