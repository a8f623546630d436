#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vamos/detection.hpp"
#include "vamos/fidelity.hpp"
#include "vamos/pipeline.hpp"
#include "vamos/skeleton.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vamos;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "master seed");
}

json load_config(const Common& c) {
    if (c.config.empty()) return json::object();
    try {
        json j = detail::read_json_file(c.config);
        if (!j.is_object()) throw Error("invalid_config", "config must be a JSON object");
        return j;
    } catch (const Error& e) {
        throw Error("invalid_config", e.what());
    }
}

// Config value for `key` unless the flag was given on the command line.
template <typename T>
void from_config(const json& cfg, const char* key, T& value, const CLI::App* app, const char* flag) {
    if (app->count(flag) || !cfg.contains(key)) return;
    try {
        value = cfg.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error("invalid_config", std::string(key) + ": " + e.what());
    }
}

void reject_unknown(const json& cfg, std::initializer_list<const char*> known) {
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw Error("invalid_config", "unknown config key '" + it.key() + "'");
    }
}

void print(const json& j) { std::cout << j.dump(2) << '\n'; }

Dims parse_dims(const std::vector<long>& v) {
    if (v.size() == 1) return {v[0], v[0], v[0]};
    if (v.size() == 3) return {v[0], v[1], v[2]};
    throw Error("invalid_argument", "dims take 1 or 3 integers");
}

std::vector<std::string> vvol_ids(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error("missing_file", "no directory " + dir.string());
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string n = e.path().filename().string();
        if (n.size() > 10 && n.compare(n.size() - 10, 10, ".vvol.json") == 0) ids.push_back(n.substr(0, n.size() - 10));
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

// ------------------------------------------------------------ phantom

struct PhantomArgs {
    Common c;
    std::string kind, out;
    std::vector<long> dims;
    double spacing = 0.4;
    bool aneurysm = false;
};

void run_phantom(PhantomArgs& a, const CLI::App* app) {
    const json cfg = load_config(a.c);
    reject_unknown(cfg, {"dims", "spacing_mm", "aneurysm", "seed"});
    from_config(cfg, "dims", a.dims, app, "--dims");
    from_config(cfg, "spacing_mm", a.spacing, app, "--spacing");
    from_config(cfg, "aneurysm", a.aneurysm, app, "--aneurysm");
    std::uint64_t seed = a.c.seed.value_or(cfg.value("seed", std::uint64_t{0}));
    Geometry g;
    g.spacing = {a.spacing, a.spacing, a.spacing};
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    json info{{"kind", a.kind}};
    auto emit = [&](const Phantom& p) {
        write_volume(p.gray, out.string() + ".vvol");
        write_mask(p.mask, out.string() + "_mask.vvol");
        json b = json::array();
        for (const Vec3& v : p.bifurcations) b.push_back(to_json(v));
        info["dims"] = {p.mask.dims().x, p.mask.dims().y, p.mask.dims().z};
        info["bifurcations_vox"] = b;
        info["endpoints"] = p.endpoints;
        info["meta"] = p.meta;
    };
    if (a.kind == "y-tube") {
        YPhantomSpec s;
        s.geom = g;
        if (!a.dims.empty()) s.dims = parse_dims(a.dims);
        emit(y_phantom(s));
    } else if (a.kind == "straight-tube") {
        emit(straight_tube_phantom(a.dims.empty() ? Dims{128, 128, 128} : parse_dims(a.dims), 3, 40, g));
    } else if (a.kind == "ring") {
        emit(ring_phantom(a.dims.empty() ? Dims{64, 64, 64} : parse_dims(a.dims)));
    } else if (a.kind == "ball") {
        emit(ball_phantom(a.dims.empty() ? Dims{48, 48, 48} : parse_dims(a.dims)));
    } else if (a.kind == "helix") {
        emit(helix_phantom(a.dims.empty() ? Dims{64, 64, 96} : parse_dims(a.dims)));
    } else if (a.kind == "patient") {
        PatientSpec s;
        s.geom = g;
        s.seed = seed;
        s.aneurysm = a.aneurysm;
        if (!a.dims.empty()) s.dims = parse_dims(a.dims);
        const Patient p = patient_phantom(s);
        write_volume(p.volume, out.string() + ".vvol");
        write_mask(p.vessels, out.string() + "_vessels.vvol");
        write_mask(p.lesions, out.string() + "_lesions.vvol");
        info["seed"] = seed;
        info["meta"] = p.meta;
    } else {
        throw Error("invalid_argument", "unknown phantom kind '" + a.kind + "'");
    }
    info["out"] = out.string();
    print(info);
}

// ------------------------------------------------------- skeleton / graph

struct SkelArgs {
    Common c;
    std::string mask, out;
    double spur_mm = kDefaultSpurLengthMm;
};

void run_skeletonize(SkelArgs& a) {
    reject_unknown(load_config(a.c), {});
    const BinaryMask s = skeletonize(read_mask(a.mask));
    write_mask(s, a.out);
    print({{"voxels", count_nonzero(s)}, {"out", a.out}});
}

void run_graph(SkelArgs& a, const CLI::App* app) {
    const json cfg = load_config(a.c);
    reject_unknown(cfg, {"spur_mm"});
    from_config(cfg, "spur_mm", a.spur_mm, app, "--spur-mm");
    const VesselGraph g = extract_graph(read_mask(a.mask), a.spur_mm);
    detail::write_json_file(a.out, graph_to_json(g));
    print({{"nodes", g.nodes.size()},
           {"branches", g.branches.size()},
           {"bifurcations", g.count(NodeKind::bifurcation)},
           {"endpoints", g.count(NodeKind::endpoint)},
           {"out", a.out}});
}

struct SplineArgs {
    Common c;
    std::string graph, out;
    int degree = 2;
    double smoothing = 0, amplitude = 0;
};

void run_fit_splines(SplineArgs& a, const CLI::App* app) {
    const json cfg = load_config(a.c);
    reject_unknown(cfg, {"degree", "smoothing", "amplitude", "seed"});
    from_config(cfg, "degree", a.degree, app, "--degree");
    from_config(cfg, "smoothing", a.smoothing, app, "--smoothing");
    from_config(cfg, "amplitude", a.amplitude, app, "--amplitude");
    const std::uint64_t seed = a.c.seed.value_or(cfg.value("seed", std::uint64_t{0}));
    const VesselGraph g = graph_from_json(detail::read_json_file(a.graph));
    json out = json::array();
    double worst = 0;
    for (const Branch& b : g.branches) {
        std::vector<Vec3> pts;
        for (const Index3& p : b.points) pts.push_back(p.to_vec());
        const int k = std::min<int>(a.degree, int(collapse_duplicates(pts).size()) - 1);
        if (k < 1) continue;
        BranchSpline s = fit_spline(pts, k, a.smoothing);
        const double res = max_fit_residual(s, pts);
        worst = std::max(worst, res);
        if (a.amplitude > 0) s = perturb_spline(s, a.amplitude, derive_seed(seed, {std::uint64_t(b.id)}));
        out.push_back({{"branch", b.id}, {"max_residual_vox", res}, {"spline", spline_to_json(s)}});
    }
    detail::write_json_file(a.out, {{"splines", out}});
    print({{"splines", out.size()}, {"max_residual_vox", worst}, {"out", a.out}});
}

// ------------------------------------------------------------- synthesis

struct SourceArgs {
    std::vector<std::string> sources;  // "volume,vessels"
    std::size_t phantoms = 0;
    std::vector<long> phantom_dims{96};
};

std::vector<Source> build_sources(const SourceArgs& s, std::uint64_t seed, double spacing) {
    std::vector<Source> out;
    for (const std::string& spec : s.sources) {
        const auto comma = spec.find(',');
        if (comma == std::string::npos) throw Error("invalid_argument", "--source expects VOLUME,VESSELS");
        out.push_back(file_source(spec.substr(0, comma), spec.substr(comma + 1)));
    }
    for (std::size_t i = 0; i < s.phantoms; ++i) out.push_back(phantom_source(derive_seed(seed, {0x70686eULL, i}), parse_dims(s.phantom_dims), spacing));
    if (out.empty()) throw Error("invalid_argument", "no sources: pass --source or --phantoms");
    return out;
}

struct SynthArgs {
    Common c;
    SourceArgs src;
    int node = -1;
    std::uint64_t index = 0;
    std::string out;
};

GenerationConfig generation_config(const Common& c) {
    json j = load_config(c);
    if (c.seed) j["seed"] = *c.seed;
    return generation_config_from_json(j);
}

void run_synth_patch(SynthArgs& a) {
    const GenerationConfig cfg = generation_config(a.c);
    SourceArgs sa = a.src;
    if (sa.sources.empty() && sa.phantoms == 0) sa.phantoms = 1;
    const auto sources = build_sources(sa, cfg.seed, cfg.spacing_mm);
    const Source& s = sources.front();
    const int node = a.node >= 0 ? a.node : (s.nodes.empty() ? -1 : s.nodes.front());
    if (node < 0) throw Error("insufficient_bifurcations", "source has no bifurcation");
    const PatchSample ps = gen_patch(s, node, cfg, a.index);
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_volume(ps.patch, out.string() + ".vvol");
    write_mask(ps.gt, out.string() + "_gt.vvol");
    json meta = ps.meta;
    meta["config"] = to_json(cfg);
    detail::write_json_file(out.string() + ".json", meta);
    print({{"out", out.string()}, {"aneurysm_present", ps.meta["aneurysm_present"]}, {"gt_voxels", count_nonzero(ps.gt)}});
}

struct DatasetArgs {
    Common c;
    SourceArgs src;
    std::string out, replay;
    std::optional<std::size_t> count;
    std::size_t threads = 0;
};

void run_gen_dataset(DatasetArgs& a) {
    DatasetResult r;
    if (!a.replay.empty()) {
        r = replay_dataset(detail::read_json_file(a.replay), a.out, a.threads);
    } else {
        GenerationConfig cfg = generation_config(a.c);
        if (a.count) {
            cfg.count = *a.count;
            cfg.counts.clear();
        }
        SourceArgs sa = a.src;
        if (sa.sources.empty() && sa.phantoms == 0) sa.phantoms = 1;
        r = gen_dataset(build_sources(sa, cfg.seed, cfg.spacing_mm), cfg, a.out, a.threads);
    }
    print({{"out", a.out}, {"written", r.written}, {"rejected", r.rejected}, {"counts", r.manifest["counts"]}});
}

struct ExtractArgs {
    Common c;
    std::string volume, lesions, vessels, out;
    std::vector<long> patch{64};
    std::size_t positives = 10, negatives = 20;
};

void run_extract(ExtractArgs& a, const CLI::App* app) {
    const json cfg = load_config(a.c);
    reject_unknown(cfg, {"patch", "positives_per_lesion", "negatives_per_volume", "seed"});
    from_config(cfg, "patch", a.patch, app, "--patch");
    from_config(cfg, "positives_per_lesion", a.positives, app, "--positives");
    from_config(cfg, "negatives_per_volume", a.negatives, app, "--negatives");
    ExtractionConfig ec;
    ec.patch = parse_dims(a.patch);
    ec.positives_per_lesion = a.positives;
    ec.negatives_per_volume = a.negatives;
    ec.seed = a.c.seed.value_or(cfg.value("seed", std::uint64_t{0}));
    const auto patches = extract_training_patches(read_volume(a.volume), read_mask(a.lesions), read_mask(a.vessels), ec);
    fs::create_directories(a.out);
    json index = json::array();
    std::size_t np = 0, nn = 0;
    for (const TrainingPatch& t : patches) {
        char id[32];
        std::snprintf(id, sizeof id, "%s_%04zu", t.positive ? "pos" : "neg", t.positive ? np++ : nn++);
        write_volume(t.image, fs::path(a.out) / (std::string(id) + ".vvol"));
        write_mask(t.lesions, fs::path(a.out) / (std::string(id) + "_lesions.vvol"));
        index.push_back({{"id", id}, {"positive", t.positive}, {"lesion", t.lesion}, {"start", to_json(t.start)}});
    }
    detail::write_json_file(fs::path(a.out) / "index.json", {{"seed", ec.seed}, {"patches", index}});
    print({{"out", a.out}, {"positives", np}, {"negatives", nn}});
}

// ---------------------------------------------------------- evaluation

struct FidelityArgs {
    Common c;
    std::string gt, models, csv, summary;
    double data_range = 4095;
    bool volumes = false;
};

void run_fidelity(FidelityArgs& a, const CLI::App* app) {
    const json cfg = load_config(a.c);
    reject_unknown(cfg, {"data_range", "volumes", "seed"});
    from_config(cfg, "data_range", a.data_range, app, "--data-range");
    from_config(cfg, "volumes", a.volumes, app, "--volumes");
    const auto gt_ids = vvol_ids(a.gt);
    if (gt_ids.empty()) throw Error("no_volumes", "no volumes in " + a.gt);
    std::vector<VoxelVolume> gt, models;
    std::vector<int> owner;
    for (const auto& id : gt_ids) gt.push_back(read_volume(fs::path(a.gt) / (id + ".vvol")));
    if (!a.models.empty())
        for (const auto& id : vvol_ids(a.models)) {
            // model files are named after their patient, optionally with a suffix after '__'
            const std::string patient = id.substr(0, id.find("__"));
            const auto it = std::find(gt_ids.begin(), gt_ids.end(), patient);
            if (it == gt_ids.end()) throw Error("invalid_argument", "model '" + id + "' has no matching patient");
            models.push_back(read_volume(fs::path(a.models) / (id + ".vvol")));
            owner.push_back(int(it - gt_ids.begin()));
        }
    FidelityOptions o;
    o.data_range = a.data_range;
    o.slices = !a.volumes;
    o.seed = a.c.seed.value_or(cfg.value("seed", std::uint64_t{0}));
    const auto r = fidelity_experiment(gt, models, owner, o);
    if (!a.csv.empty()) {
        std::ofstream f(a.csv);
        if (!f) throw Error("io_error", "cannot write " + a.csv);
        write_fidelity_csv(r, f);
    }
    const json s = fidelity_summary_json(r);
    if (!a.summary.empty()) detail::write_json_file(a.summary, s);
    print(s);
}

struct EvalArgs {
    Common c;
    std::string pred, gt, metadata, report, strata;
    std::size_t threads = 0;
};

void run_eval(EvalArgs& a) {
    reject_unknown(load_config(a.c), {});
    const auto tables = evaluate_directories(a.pred, a.gt, a.threads);
    std::optional<std::vector<Stratum>> strata;
    if (!a.metadata.empty()) strata = stratify(tables, read_lesion_metadata(fs::path(a.metadata)));
    const json rep = report_json(tables, strata ? &*strata : nullptr);
    if (!a.report.empty()) detail::write_json_file(a.report, rep);
    if (strata && !a.strata.empty()) {
        std::ofstream f(a.strata);
        if (!f) throw Error("io_error", "cannot write " + a.strata);
        write_strata_csv(*strata, f);
    }
    print(rep["summary"]);
}

int fail(const std::string& code, const std::string& message, int status) {
    std::cerr << json{{"error", code}, {"message", message}}.dump() << '\n';
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic aneurysm patch generator and evaluation tools"};
    app.require_subcommand(1);

    PhantomArgs pa;
    auto* ph = app.add_subcommand("phantom", "write a test phantom");
    add_common(ph, pa.c);
    ph->add_option("kind", pa.kind, "y-tube | straight-tube | ring | ball | helix | patient")->required();
    ph->add_option("--out", pa.out, "output stem")->required();
    ph->add_option("--dims", pa.dims, "grid size (1 or 3 integers)");
    ph->add_option("--spacing", pa.spacing, "isotropic spacing, mm");
    ph->add_flag("--aneurysm", pa.aneurysm, "patient: attach an aneurysm");

    SkelArgs sk;
    auto* skc = app.add_subcommand("skeletonize", "thin a vessel mask to its centerlines");
    add_common(skc, sk.c);
    skc->add_option("--mask", sk.mask)->required();
    skc->add_option("--out", sk.out)->required();

    SkelArgs gr;
    auto* grc = app.add_subcommand("graph", "extract the vessel graph of a mask as JSON");
    add_common(grc, gr.c);
    grc->add_option("--mask", gr.mask)->required();
    grc->add_option("--out", gr.out)->required();
    grc->add_option("--spur-mm", gr.spur_mm, "prune terminal branches shorter than this");

    SplineArgs sp;
    auto* spc = app.add_subcommand("fit-splines", "fit B-splines to every branch of a graph");
    add_common(spc, sp.c);
    spc->add_option("--graph", sp.graph)->required();
    spc->add_option("--out", sp.out)->required();
    spc->add_option("--degree", sp.degree);
    spc->add_option("--smoothing", sp.smoothing);
    spc->add_option("--amplitude", sp.amplitude, "random coefficient perturbation, voxels");

    auto add_sources = [](CLI::App* c, SourceArgs& s) {
        c->add_option("--source", s.sources, "VOLUME,VESSELS pair (repeatable)");
        c->add_option("--phantoms", s.phantoms, "number of phantom patients to use as sources");
        c->add_option("--phantom-dims", s.phantom_dims);
    };

    SynthArgs sy;
    auto* syc = app.add_subcommand("synth-patch", "synthesize one patch at a bifurcation");
    add_common(syc, sy.c);
    add_sources(syc, sy.src);
    syc->add_option("--node", sy.node, "bifurcation node id (default: first)");
    syc->add_option("--index", sy.index, "sample index");
    syc->add_option("--out", sy.out, "output stem")->required();

    DatasetArgs ds;
    auto* dsc = app.add_subcommand("gen-dataset", "generate a dataset of patches with a manifest");
    add_common(dsc, ds.c);
    add_sources(dsc, ds.src);
    dsc->add_option("--out", ds.out)->required();
    dsc->add_option("--count", ds.count, "total number of patches");
    dsc->add_option("--threads", ds.threads, "worker count (0: all cores, capped by VAMOS_THREADS)");
    dsc->add_option("--replay", ds.replay, "regenerate from a manifest")->check(CLI::ExistingFile);

    ExtractArgs ex;
    auto* exc = app.add_subcommand("extract-patches", "positive and negative training crops");
    add_common(exc, ex.c);
    exc->add_option("--volume", ex.volume)->required();
    exc->add_option("--lesions", ex.lesions)->required();
    exc->add_option("--vessels", ex.vessels)->required();
    exc->add_option("--out", ex.out)->required();
    exc->add_option("--patch", ex.patch);
    exc->add_option("--positives", ex.positives);
    exc->add_option("--negatives", ex.negatives);

    FidelityArgs fi;
    auto* fic = app.add_subcommand("fidelity", "PSNR/SSIM/NRMSE/MSE/UQI between patients and models");
    add_common(fic, fi.c);
    fic->add_option("--gt", fi.gt, "directory of patient volumes")->required();
    fic->add_option("--models", fi.models, "directory of model volumes named <patient>[__suffix]");
    fic->add_option("--csv", fi.csv);
    fic->add_option("--summary", fi.summary);
    fic->add_option("--data-range", fi.data_range);
    fic->add_flag("--volumes", fi.volumes, "compare whole volumes instead of axial slices");

    EvalArgs ev;
    auto* evc = app.add_subcommand("eval-detections", "lesion-level sensitivity, FP/case and Dice");
    add_common(evc, ev.c);
    evc->add_option("--pred", ev.pred)->required();
    evc->add_option("--gt", ev.gt)->required();
    evc->add_option("--metadata", ev.metadata, "lesion metadata CSV");
    evc->add_option("--report", ev.report);
    evc->add_option("--strata", ev.strata);
    evc->add_option("--threads", ev.threads);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        if (*ph) run_phantom(pa, ph);
        else if (*skc) run_skeletonize(sk);
        else if (*grc) run_graph(gr, grc);
        else if (*spc) run_fit_splines(sp, spc);
        else if (*syc) run_synth_patch(sy);
        else if (*dsc) run_gen_dataset(ds);
        else if (*exc) run_extract(ex, exc);
        else if (*fic) run_fidelity(fi, fic);
        else if (*evc) run_eval(ev);
    } catch (const Error& e) {
        return fail(e.code(), e.what(), 1);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
    return 0;
}
