#ifndef VAMOS_FIDELITY_HPP
#define VAMOS_FIDELITY_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vamos/random.hpp"
#include "vamos/volume.hpp"

namespace vamos {

namespace detail {

inline void require_same_dims(const VoxelVolume& a, const VoxelVolume& b, const char* what) {
    if (a.dims() != b.dims()) throw Error("dims_mismatch", std::string(what) + ": volumes differ in size");
}

inline void require_range(double data_range) {
    if (!(data_range > 0) || !std::isfinite(data_range)) throw Error("invalid_data_range", "data_range must be positive");
}

}  // namespace detail

inline double mse(const VoxelVolume& a, const VoxelVolume& b) {
    detail::require_same_dims(a, b, "mse");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s / double(a.size());
}

/// Root-mean-square error divided by the data range.
inline double nrmse(const VoxelVolume& a, const VoxelVolume& b, double data_range) {
    detail::require_range(data_range);
    return std::sqrt(mse(a, b)) / data_range;
}

/// +infinity for identical inputs.
inline double psnr(const VoxelVolume& a, const VoxelVolume& b, double data_range) {
    detail::require_range(data_range);
    const double m = mse(a, b);
    if (m == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / m);
}

namespace detail {

// Box sums through a 3D summed-area table.
class BoxSums {
public:
    BoxSums(const std::vector<double>& v, Dims d) : d_(d), t_(std::size_t((d.x + 1) * (d.y + 1) * (d.z + 1)), 0.0) {
        for (long z = 0; z < d.z; ++z)
            for (long y = 0; y < d.y; ++y)
                for (long x = 0; x < d.x; ++x)
                    at(x + 1, y + 1, z + 1) = v[std::size_t(x + d.x * (y + d.y * z))] + at(x, y + 1, z + 1) + at(x + 1, y, z + 1) +
                                              at(x + 1, y + 1, z) - at(x, y, z + 1) - at(x, y + 1, z) - at(x + 1, y, z) + at(x, y, z);
    }
    // sum over [x0, x0+w) x [y0, y0+h) x [z0, z0+dpt)
    double sum(long x0, long y0, long z0, long w, long h, long dpt) const {
        const long x1 = x0 + w, y1 = y0 + h, z1 = z0 + dpt;
        return at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0) + at(x1, y0, z0) -
               at(x0, y0, z0);
    }

private:
    double& at(long x, long y, long z) { return t_[std::size_t(x + (d_.x + 1) * (y + (d_.y + 1) * z))]; }
    double at(long x, long y, long z) const { return t_[std::size_t(x + (d_.x + 1) * (y + (d_.y + 1) * z))]; }
    Dims d_;
    std::vector<double> t_;
};

inline double ssim_index(double ma, double mb, double va, double vb, double cab, double c1, double c2) {
    const double num = (2 * ma * mb + c1) * (2 * cab + c2);
    const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
    if (den != 0) return num / den;
    // only reachable without stabilisers (UQI): both windows flat at zero
    return 1.0;
}

inline double uqi_index(double ma, double mb, double va, double vb, double cab) {
    const double sv = va + vb, sm = ma * ma + mb * mb;
    if (sv == 0 && sm == 0) return 1.0;
    if (sv == 0) return 2 * ma * mb / sm;
    if (sm == 0) return 2 * cab / sv;
    return 4 * cab * ma * mb / (sv * sm);
}

// Mean of the local index over every window position that fits in the grid.
// Axes of extent 1 use a window of 1, so 2D slices get a w x w window.
template <typename Index>
double windowed_mean(const VoxelVolume& a, const VoxelVolume& b, long window, Index index) {
    require_same_dims(a, b, "ssim");
    if (window < 2) throw Error("invalid_window", "window must be >= 2");
    const Dims d = a.dims();
    std::array<long, 3> w{};
    for (int ax = 0; ax < 3; ++ax) {
        if (d[ax] == 1) w[std::size_t(ax)] = 1;
        else if (d[ax] < window) throw Error("volume_too_small", "volume is smaller than the SSIM window");
        else w[std::size_t(ax)] = window;
    }
    std::vector<double> va(a.size()), vb(a.size()), aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        va[i] = a[i];
        vb[i] = b[i];
        aa[i] = va[i] * va[i];
        bb[i] = vb[i] * vb[i];
        ab[i] = va[i] * vb[i];
    }
    const BoxSums sa(va, d), sb(vb, d), saa(aa, d), sbb(bb, d), sab(ab, d);
    const double n = double(w[0] * w[1] * w[2]);
    const double corr = n > 1 ? n / (n - 1) : 1.0;  // sample covariance
    double total = 0;
    std::size_t count = 0;
    for (long z = 0; z + w[2] <= d.z; ++z)
        for (long y = 0; y + w[1] <= d.y; ++y)
            for (long x = 0; x + w[0] <= d.x; ++x) {
                const double ma = sa.sum(x, y, z, w[0], w[1], w[2]) / n;
                const double mb = sb.sum(x, y, z, w[0], w[1], w[2]) / n;
                const double vaa = std::max(0.0, (saa.sum(x, y, z, w[0], w[1], w[2]) / n - ma * ma) * corr);
                const double vbb = std::max(0.0, (sbb.sum(x, y, z, w[0], w[1], w[2]) / n - mb * mb) * corr);
                const double cab = (sab.sum(x, y, z, w[0], w[1], w[2]) / n - ma * mb) * corr;
                total += index(ma, mb, vaa, vbb, cab);
                ++count;
            }
    return total / double(count);
}

}  // namespace detail

/// Mean structural similarity over all full windows (uniform weights),
/// stabilisers C1 = (0.01 L)^2, C2 = (0.03 L)^2.
inline double ssim(const VoxelVolume& a, const VoxelVolume& b, double data_range, long window = 7) {
    detail::require_range(data_range);
    const double c1 = std::pow(0.01 * data_range, 2), c2 = std::pow(0.03 * data_range, 2);
    return detail::windowed_mean(a, b, window, [&](double ma, double mb, double va, double vb, double cab) {
        return detail::ssim_index(ma, mb, va, vb, cab, c1, c2);
    });
}

/// Universal quality index: SSIM without stabilisers.
inline double uqi(const VoxelVolume& a, const VoxelVolume& b, long window = 7) {
    return detail::windowed_mean(a, b, window, detail::uqi_index);
}

// ---------------------------------------------------------------- experiment

inline const std::vector<std::string>& fidelity_metrics() {
    static const std::vector<std::string> m{"MSE", "NRMSE", "PSNR", "SSIM", "UQI"};
    return m;
}

inline std::map<std::string, double> all_metrics(const VoxelVolume& a, const VoxelVolume& b, double data_range, long window = 7) {
    return {{"MSE", mse(a, b)},
            {"NRMSE", nrmse(a, b, data_range)},
            {"PSNR", psnr(a, b, data_range)},
            {"SSIM", ssim(a, b, data_range, window)},
            {"UQI", uqi(a, b, window)}};
}

inline const char* kInterPatient = "inter_patient";
inline const char* kOwnModel = "gt_vs_own_model";
inline const char* kOtherModel = "gt_vs_other_model";

struct FidelityOptions {
    double data_range = 4095.0;
    long window = 7;
    bool slices = true;     // sample axial 2D slices instead of full volumes
    int n_slices = 5;
    std::uint64_t seed = 0;
};

struct FidelityPair {
    int pair_id = 0;
    std::string group;
    int gt = -1;
    int other = -1;       // second gt (inter-patient) or model index
    std::map<std::string, double> metrics;
};

struct Summary {
    std::size_t count = 0;
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

struct FidelityReport {
    std::vector<FidelityPair> pairs;
    std::map<std::string, std::map<std::string, Summary>> summaries;  // group -> metric -> summary
};

/// Linear-interpolated quantile of a non-empty sample (q in [0, 1]).
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw Error("empty_sample", "quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * double(v.size() - 1);
    const auto lo = std::size_t(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double f = pos - double(lo);
    if (f == 0 || std::isinf(v[lo]) || std::isinf(v[hi])) return f < 0.5 ? v[lo] : v[hi];
    return v[lo] + (v[hi] - v[lo]) * f;
}

inline Summary summarize(const std::vector<double>& v) {
    Summary s;
    s.count = v.size();
    if (v.empty()) return s;
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    s.q1 = quantile(v, 0.25);
    s.median = quantile(v, 0.5);
    s.q3 = quantile(v, 0.75);
    return s;
}

namespace detail {

inline VoxelVolume axial_slice(const VoxelVolume& v, long z) {
    VoxelVolume s({v.dims().x, v.dims().y, 1}, v.geometry());
    for (long y = 0; y < v.dims().y; ++y)
        for (long x = 0; x < v.dims().x; ++x) s(x, y, 0) = v(x, y, z);
    return s;
}

inline std::map<std::string, double> pair_metrics(const VoxelVolume& a, const VoxelVolume& b, const FidelityOptions& o, int pair_id) {
    require_same_dims(a, b, "fidelity_experiment");
    if (!o.slices) return all_metrics(a, b, o.data_range, o.window);
    if (o.n_slices < 1) throw Error("invalid_argument", "n_slices must be >= 1");
    std::mt19937_64 rng(derive_seed(o.seed, {std::uint64_t(pair_id)}));
    std::uniform_int_distribution<long> pick(0, a.dims().z - 1);
    std::map<std::string, double> acc;
    for (int k = 0; k < o.n_slices; ++k) {
        const long z = pick(rng);
        for (const auto& [name, val] : all_metrics(axial_slice(a, z), axial_slice(b, z), o.data_range, o.window)) acc[name] += val;
    }
    for (auto& [name, val] : acc) val /= o.n_slices;
    return acc;
}

}  // namespace detail

/// Scores every GT pair (inter-patient), every model against its own source
/// GT, and every model against every other GT. `source_of_model[m]` is the GT
/// index model m was built from.
inline FidelityReport fidelity_experiment(const std::vector<VoxelVolume>& gt, const std::vector<VoxelVolume>& models,
                                          const std::vector<int>& source_of_model, const FidelityOptions& opt = {}) {
    if (models.size() != source_of_model.size())
        throw Error("manifest_mismatch", "one source index per model patch required");
    for (int s : source_of_model)
        if (s < 0 || std::size_t(s) >= gt.size()) throw Error("manifest_mismatch", "model source index out of range");
    FidelityReport r;
    auto add = [&](const char* group, int g, int other, const VoxelVolume& a, const VoxelVolume& b) {
        FidelityPair p;
        p.pair_id = int(r.pairs.size());
        p.group = group;
        p.gt = g;
        p.other = other;
        p.metrics = detail::pair_metrics(a, b, opt, p.pair_id);
        r.pairs.push_back(std::move(p));
    };
    for (std::size_t i = 0; i < gt.size(); ++i)
        for (std::size_t j = i + 1; j < gt.size(); ++j) add(kInterPatient, int(i), int(j), gt[i], gt[j]);
    for (std::size_t m = 0; m < models.size(); ++m) add(kOwnModel, source_of_model[m], int(m), gt[std::size_t(source_of_model[m])], models[m]);
    for (std::size_t m = 0; m < models.size(); ++m)
        for (std::size_t g = 0; g < gt.size(); ++g)
            if (int(g) != source_of_model[m]) add(kOtherModel, int(g), int(m), gt[g], models[m]);
    std::map<std::string, std::map<std::string, std::vector<double>>> by;
    for (const auto& p : r.pairs)
        for (const auto& [name, val] : p.metrics) by[p.group][name].push_back(val);
    for (const auto& [group, metrics] : by)
        for (const auto& [name, vals] : metrics) r.summaries[group][name] = summarize(vals);
    return r;
}

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

/// Long-format CSV: pair_id,group,metric,value.
inline void write_fidelity_csv(const FidelityReport& r, std::ostream& os) {
    os << "pair_id,group,metric,value\n";
    for (const auto& p : r.pairs)
        for (const auto& name : fidelity_metrics()) os << p.pair_id << ',' << p.group << ',' << name << ',' << format_metric(p.metrics.at(name)) << '\n';
}

inline nlohmann::json fidelity_summary_json(const FidelityReport& r) {
    auto num = [](double v) -> nlohmann::json {
        if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
        return v;
    };
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [group, metrics] : r.summaries)
        for (const auto& [name, s] : metrics)
            j[group][name] = {{"count", s.count}, {"min", num(s.min)}, {"q1", num(s.q1)}, {"median", num(s.median)},
                              {"q3", num(s.q3)}, {"max", num(s.max)}};
    return {{"groups", j}, {"pairs", r.pairs.size()}};
}

}  // namespace vamos

#endif  // VAMOS_FIDELITY_HPP
