#ifndef VAMOS_DETECTION_HPP
#define VAMOS_DETECTION_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vamos/components.hpp"
#include "vamos/io.hpp"
#include "vamos/parallel.hpp"
#include "vamos/volume.hpp"

namespace vamos {

struct LesionRecord {
    int id = 0;  // component label, 1-based, scan order of the first voxel
    std::size_t voxels = 0;
    Vec3 centroid_mm;
    double max_radius_mm = 0;
    bool detected = false;
    std::vector<int> matched;  // predicted component ids assigned here
};

struct PredictionRecord {
    int id = 0;
    std::size_t voxels = 0;
    Vec3 center_mm;
    int lesion = 0;  // 0 = false positive
    double distance_mm = std::numeric_limits<double>::infinity();
};

struct MatchTable {
    std::string volume_id;
    std::vector<LesionRecord> lesions;
    std::vector<PredictionRecord> predictions;
    LabelVolume gt_labels;
    LabelVolume pred_labels;

    std::size_t tp() const { return std::size_t(std::count_if(lesions.begin(), lesions.end(), [](const auto& l) { return l.detected; })); }
    std::size_t fn() const { return lesions.size() - tp(); }
    std::size_t fp() const {
        return std::size_t(std::count_if(predictions.begin(), predictions.end(), [](const auto& p) { return p.lesion == 0; }));
    }
};

namespace detail {

inline Vec3 mean_world(const std::vector<std::size_t>& voxels, const LabelVolume& grid) {
    Vec3 s;
    for (std::size_t i : voxels) s += grid.world_of(grid.coord(i));
    return s / double(voxels.size());
}

}  // namespace detail

/// Matches 26-connected predicted components against labelled lesions.
/// A component matches lesion L when its centre of mass lies within the
/// largest centroid-to-voxel distance of L; it is assigned to the nearest
/// matching centroid, ties to the lower lesion id. Distances in mm.
inline MatchTable match_lesions(const BinaryMask& pred, const LabelVolume& gt_labels, std::string volume_id = {}) {
    if (!pred.same_grid(gt_labels)) throw Error("grid_mismatch", "match_lesions: prediction and ground truth grids differ");
    MatchTable t;
    t.volume_id = std::move(volume_id);
    t.gt_labels = gt_labels;

    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < gt_labels.size(); ++i)
        if (gt_labels[i] > 0) by_label[gt_labels[i]].push_back(i);
    for (const auto& [label, vox] : by_label) {
        LesionRecord l;
        l.id = label;
        l.voxels = vox.size();
        l.centroid_mm = detail::mean_world(vox, gt_labels);
        for (std::size_t i : vox) l.max_radius_mm = std::max(l.max_radius_mm, norm(gt_labels.world_of(gt_labels.coord(i)) - l.centroid_mm));
        t.lesions.push_back(std::move(l));
    }

    Components pc = connected_components(pred, 26);
    for (std::size_t k = 0; k < pc.count(); ++k) {
        PredictionRecord p;
        p.id = int(k + 1);
        p.voxels = pc.voxels[k].size();
        p.center_mm = detail::mean_world(pc.voxels[k], pc.labels);
        for (LesionRecord& l : t.lesions) {
            const double d = norm(p.center_mm - l.centroid_mm);
            if (d <= l.max_radius_mm && d < p.distance_mm) {  // strict: earlier (lower) id wins ties
                p.distance_mm = d;
                p.lesion = l.id;
            }
        }
        if (p.lesion != 0)
            for (LesionRecord& l : t.lesions)
                if (l.id == p.lesion) {
                    l.detected = true;
                    l.matched.push_back(p.id);
                }
        t.predictions.push_back(p);
    }
    t.pred_labels = std::move(pc.labels);
    return t;
}

/// Overload labelling the lesions as 26-connected components of `gt`.
inline MatchTable match_lesions(const BinaryMask& pred, const BinaryMask& gt, std::string volume_id = {}) {
    if (!pred.same_grid(gt)) throw Error("grid_mismatch", "match_lesions: prediction and ground truth grids differ");
    return match_lesions(pred, connected_components(gt, 26).labels, std::move(volume_id));
}

struct DetectionSummary {
    std::size_t volumes = 0, lesions = 0, tp = 0, fn = 0, fp = 0;
    std::optional<double> sensitivity;  // undefined without lesions
    double fp_per_case = 0;
};

inline DetectionSummary sensitivity_fp(const std::vector<MatchTable>& tables) {
    if (tables.empty()) throw Error("no_volumes", "sensitivity_fp needs at least one volume");
    DetectionSummary s;
    s.volumes = tables.size();
    for (const MatchTable& t : tables) {
        s.lesions += t.lesions.size();
        s.tp += t.tp();
        s.fp += t.fp();
    }
    s.fn = s.lesions - s.tp;
    if (s.lesions > 0) s.sensitivity = double(s.tp) / double(s.lesions);
    s.fp_per_case = double(s.fp) / double(s.volumes);
    return s;
}

struct LesionDice {
    int lesion = 0;
    double dice = 0;
};

/// Dice of each detected lesion against the union of its matched components.
inline std::vector<LesionDice> dice_true_positives(const MatchTable& t) {
    std::vector<LesionDice> out;
    for (const LesionRecord& l : t.lesions) {
        if (!l.detected) continue;
        std::vector<char> mine(t.predictions.size() + 1, 0);
        for (int id : l.matched) mine[std::size_t(id)] = 1;
        std::size_t a = 0, inter = 0;
        for (std::size_t i = 0; i < t.pred_labels.size(); ++i) {
            const bool in_pred = mine[std::size_t(t.pred_labels[i])] != 0;
            a += in_pred;
            inter += in_pred && t.gt_labels[i] == l.id;
        }
        out.push_back({l.id, 2.0 * double(inter) / double(a + l.voxels)});
    }
    return out;
}

// ------------------------------------------------------------- strata

inline constexpr std::array<const char*, 6> kLocationGroups{"A-B", "C-D", "E-F-I-J", "G-H", "K-L", "M-N-O"};
inline constexpr std::array<const char*, 3> kSizeBins{"<=2", "(2,3]", ">3"};

/// Maps a bifurcation letter or a group name onto its group; empty when unknown.
inline std::string location_group(const std::string& label) {
    for (const char* g : kLocationGroups)
        if (label == g) return g;
    if (label.size() == 1 && std::isalpha(static_cast<unsigned char>(label[0]))) {
        const char c = char(std::toupper(static_cast<unsigned char>(label[0])));
        for (const char* g : kLocationGroups)
            if (std::string(g).find(c) != std::string::npos) return g;
    }
    return {};
}

struct LesionMeta {
    std::string volume_id;
    int lesion_id = 0;
    double radius_mm = std::numeric_limits<double>::quiet_NaN();
    std::string location;
};

using LesionMetaTable = std::map<std::pair<std::string, int>, LesionMeta>;

struct Stratum {
    std::string kind;  // "size" or "location"
    std::string name;
    std::size_t lesions = 0, detected = 0;
    std::optional<double> sensitivity;
};

inline std::vector<Stratum> stratify(const std::vector<MatchTable>& tables, const LesionMetaTable& meta) {
    std::vector<Stratum> out;
    for (const char* b : kSizeBins) out.push_back({"size", b});
    for (const char* g : kLocationGroups) out.push_back({"location", g});
    for (const MatchTable& t : tables)
        for (const LesionRecord& l : t.lesions) {
            auto it = meta.find({t.volume_id, l.id});
            if (it == meta.end() || !std::isfinite(it->second.radius_mm))
                throw Error("missing_radius", "no radius for lesion " + std::to_string(l.id) + " of volume '" + t.volume_id + "'");
            const double r = it->second.radius_mm;
            Stratum& s = out[r <= 2.0 ? 0 : (r <= 3.0 ? 1 : 2)];
            ++s.lesions;
            s.detected += l.detected;
            const std::string g = location_group(it->second.location);
            for (std::size_t k = 0; k < kLocationGroups.size(); ++k)
                if (g == kLocationGroups[k]) {
                    ++out[3 + k].lesions;
                    out[3 + k].detected += l.detected;
                }
        }
    for (Stratum& s : out)
        if (s.lesions > 0) s.sensitivity = double(s.detected) / double(s.lesions);
    return out;
}

// ------------------------------------------------------------- files

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline nlohmann::json rate_json(const std::optional<double>& r) { return r ? nlohmann::json(*r) : nlohmann::json(nullptr); }

}  // namespace detail

/// Reads `lesion_id,volume_id,radius_mm,location_group` (header required,
/// columns in any order, location optional).
inline LesionMetaTable read_lesion_metadata(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("invalid_metadata", "empty lesion metadata");
    const auto head = detail::split_csv_line(line);
    auto col = [&](const std::string& name, bool required) {
        for (std::size_t i = 0; i < head.size(); ++i)
            if (head[i] == name) return long(i);
        if (required) throw Error("invalid_metadata", "missing column '" + name + "'");
        return -1L;
    };
    const long cl = col("lesion_id", true), cv = col("volume_id", true), cr = col("radius_mm", true), cg = col("location_group", false);
    LesionMetaTable out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \r\t") == std::string::npos) continue;
        const auto c = detail::split_csv_line(line);
        auto get = [&](long i) { return i >= 0 && std::size_t(i) < c.size() ? c[std::size_t(i)] : std::string(); };
        LesionMeta m;
        try {
            m.lesion_id = std::stoi(get(cl));
            const std::string r = get(cr);
            m.radius_mm = r.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(r);
        } catch (const std::exception&) {
            throw Error("invalid_metadata", "row " + std::to_string(row) + ": bad number");
        }
        m.volume_id = get(cv);
        m.location = get(cg);
        out[{m.volume_id, m.lesion_id}] = m;
    }
    return out;
}

inline LesionMetaTable read_lesion_metadata(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw Error("missing_file", "cannot open " + p.string());
    return read_lesion_metadata(f);
}

inline void write_strata_csv(const std::vector<Stratum>& strata, std::ostream& os) {
    os << "kind,stratum,lesions,detected,sensitivity\n";
    for (const Stratum& s : strata) {
        os << s.kind << ',' << s.name << ',' << s.lesions << ',' << s.detected << ',';
        if (s.sensitivity) {
            std::ostringstream v;
            v.precision(6);
            v << *s.sensitivity;
            os << v.str();
        } else {
            os << "NA";
        }
        os << '\n';
    }
}

inline nlohmann::json report_json(const std::vector<MatchTable>& tables, const std::vector<Stratum>* strata = nullptr) {
    using nlohmann::json;
    const DetectionSummary s = sensitivity_fp(tables);
    json vols = json::array(), dices = json::array();
    for (const MatchTable& t : tables) {
        const auto d = dice_true_positives(t);
        std::map<int, double> dmap;
        for (const auto& x : d) {
            dmap[x.lesion] = x.dice;
            dices.push_back(x.dice);
        }
        json ls = json::array(), ps = json::array();
        for (const LesionRecord& l : t.lesions)
            ls.push_back({{"id", l.id}, {"voxels", l.voxels}, {"centroid_mm", to_json(l.centroid_mm)}, {"max_radius_mm", l.max_radius_mm},
                          {"detected", l.detected}, {"matched", l.matched}, {"dice", l.detected ? json(dmap[l.id]) : json(nullptr)}});
        for (const PredictionRecord& p : t.predictions)
            ps.push_back({{"id", p.id}, {"voxels", p.voxels}, {"center_mm", to_json(p.center_mm)}, {"lesion", p.lesion}});
        vols.push_back({{"volume_id", t.volume_id}, {"tp", t.tp()}, {"fn", t.fn()}, {"fp", t.fp()}, {"lesions", ls}, {"predictions", ps}});
    }
    json out{{"volumes", vols},
             {"summary",
              {{"volumes", s.volumes}, {"lesions", s.lesions}, {"tp", s.tp}, {"fn", s.fn}, {"fp", s.fp},
               {"sensitivity", detail::rate_json(s.sensitivity)}, {"fp_per_case", s.fp_per_case}}},
             {"dice_true_positives", dices}};
    if (strata) {
        json st = json::array();
        for (const Stratum& x : *strata)
            st.push_back({{"kind", x.kind}, {"stratum", x.name}, {"lesions", x.lesions}, {"detected", x.detected},
                          {"sensitivity", detail::rate_json(x.sensitivity)}});
        out["strata"] = st;
    }
    return out;
}

/// Scores every ground-truth mask in `gt_dir` against the mask of the same
/// name in `pred_dir`. Volume id = file stem without `.vvol`.
inline std::vector<MatchTable> evaluate_directories(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                                    std::size_t threads = 0) {
    std::vector<std::string> ids;
    if (!std::filesystem::is_directory(gt_dir)) throw Error("missing_file", "no directory " + gt_dir.string());
    for (const auto& e : std::filesystem::directory_iterator(gt_dir)) {
        const std::string n = e.path().filename().string();
        const std::string suffix = ".vvol.json";
        if (n.size() > suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0)
            ids.push_back(n.substr(0, n.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw Error("no_volumes", "no ground-truth masks in " + gt_dir.string());
    for (const auto& id : ids)
        if (!std::filesystem::exists(pred_dir / (id + ".vvol.json")))
            throw Error("missing_prediction", "no prediction for volume '" + id + "'");
    std::vector<MatchTable> out;
    ordered_parallel_map<MatchTable>(
        ids.size(), worker_count(threads),
        [&](std::size_t i) {
            return match_lesions(read_mask(pred_dir / (ids[i] + ".vvol")), read_mask(gt_dir / (ids[i] + ".vvol")), ids[i]);
        },
        [&](std::size_t, std::variant<MatchTable, std::string> r) {
            if (auto* e = std::get_if<std::string>(&r)) throw Error("evaluation_failed", *e);
            out.push_back(std::move(std::get<MatchTable>(r)));
        });
    return out;
}

}  // namespace vamos

#endif  // VAMOS_DETECTION_HPP
