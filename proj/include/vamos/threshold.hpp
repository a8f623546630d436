#ifndef VAMOS_THRESHOLD_HPP
#define VAMOS_THRESHOLD_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "vamos/volume.hpp"

namespace vamos {

/// Matter labels. Class 3 is reserved for excluded (vessel) voxels.
enum MatterClass : std::uint8_t { kAir = 0, kFluid = 1, kParenchyma = 2, kVessel = 3, kBright = 4 };

struct ClassStats {
    double mean = 0;
    double std = 0;
    std::size_t count = 0;
    bool reliable = false;  // enough voxels for the stats to mean something

    bool degenerate() const { return count == 0 || std == 0; }
};

inline constexpr std::size_t kMinReliableVoxels = 32;

struct MatterMap {
    BinaryMask labels;  // reused container: one u8 label per voxel
    std::map<std::uint8_t, ClassStats> stats;
    std::vector<double> thresholds;  // gray-level boundaries between consecutive classes
};

/// Label values assigned to `n` threshold classes, darkest first.
inline std::vector<std::uint8_t> class_labels(int n_classes) {
    switch (n_classes) {
        case 2: return {kFluid, kParenchyma};
        case 3: return {kAir, kFluid, kParenchyma};
        case 4: return {kAir, kFluid, kParenchyma, kBright};
        default: throw Error("invalid_classes", "n_classes must be 2, 3 or 4");
    }
}

/// Per-label mean/std over the voxels carrying that label. Labels listed in
/// `skip` are not reported.
inline std::map<std::uint8_t, ClassStats> label_stats(const VoxelVolume& vol, const BinaryMask& labels,
                                                      std::initializer_list<std::uint8_t> skip = {kVessel}) {
    if (vol.dims() != labels.dims()) throw Error("dims_mismatch", "label_stats: grid dimensions differ");
    std::map<std::uint8_t, std::array<double, 3>> acc;  // n, sum, sum of squares
    for (std::size_t i = 0; i < vol.size(); ++i) {
        const std::uint8_t l = labels[i];
        if (std::find(skip.begin(), skip.end(), l) != skip.end()) continue;
        auto& a = acc[l];
        const double x = vol[i];
        a[0] += 1;
        a[1] += x;
        a[2] += x * x;
    }
    std::map<std::uint8_t, ClassStats> out;
    for (const auto& [l, a] : acc) {
        ClassStats s;
        s.count = std::size_t(a[0]);
        s.mean = a[1] / a[0];
        // second pass-free variance; clamp tiny negative rounding
        s.std = std::sqrt(std::max(0.0, a[2] / a[0] - s.mean * s.mean));
        s.reliable = s.count >= kMinReliableVoxels;
        out[l] = s;
    }
    return out;
}

/// Minimum cross-entropy multilevel thresholding over a 256-bin histogram of
/// the voxels outside `exclude`, searched exhaustively. Excluded voxels get
/// label 3.
inline MatterMap multi_threshold(const VoxelVolume& vol, const BinaryMask& exclude, int n_classes = 3) {
    constexpr int kBins = 256;
    const auto labels_for = class_labels(n_classes);
    if (exclude.dims() != vol.dims()) throw Error("dims_mismatch", "multi_threshold: exclude mask grid differs");

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < vol.size(); ++i) {
        if (exclude[i]) continue;
        lo = std::min(lo, double(vol[i]));
        hi = std::max(hi, double(vol[i]));
    }
    if (!(hi > lo)) throw Error("degenerate_histogram", "multi_threshold: fewer distinct levels than classes");
    const double width = (hi - lo) / kBins;
    auto bin_of = [&](double x) { return std::clamp(int((x - lo) / width), 0, kBins - 1); };

    std::array<double, kBins> hist{};
    for (std::size_t i = 0; i < vol.size(); ++i)
        if (!exclude[i]) hist[std::size_t(bin_of(vol[i]))] += 1;
    if (std::count_if(hist.begin(), hist.end(), [](double h) { return h > 0; }) < n_classes)
        throw Error("degenerate_histogram", "multi_threshold: fewer distinct levels than classes");

    // Prefix sums of counts and first moments; bin b has level b + 1.
    std::array<double, kBins + 1> m0{}, m1{};
    for (int b = 0; b < kBins; ++b) {
        m0[std::size_t(b + 1)] = m0[std::size_t(b)] + hist[std::size_t(b)];
        m1[std::size_t(b + 1)] = m1[std::size_t(b)] + hist[std::size_t(b)] * double(b + 1);
    }
    auto term = [&](int a, int b) {  // class covering bins [a, b)
        const double n = m0[std::size_t(b)] - m0[std::size_t(a)];
        if (n <= 0) return std::numeric_limits<double>::infinity();
        const double s = m1[std::size_t(b)] - m1[std::size_t(a)];
        return -s * std::log(s / n);
    };

    const int n_thr = n_classes - 1;
    std::vector<int> best(static_cast<std::size_t>(n_thr)), cur(static_cast<std::size_t>(n_thr));
    double best_cost = std::numeric_limits<double>::infinity();
    // Exhaustive enumeration of increasing threshold tuples.
    auto search = [&](auto&& self, int depth, int start, double cost) -> void {
        if (depth == n_thr) {
            const double total = cost + term(depth == 0 ? 0 : cur[std::size_t(depth - 1)], kBins);
            if (total < best_cost) {
                best_cost = total;
                best = cur;
            }
            return;
        }
        const int prev = depth == 0 ? 0 : cur[std::size_t(depth - 1)];
        for (int t = start; t <= kBins - (n_thr - depth); ++t) {
            const double c = term(prev, t);
            if (!std::isfinite(c)) continue;
            cur[std::size_t(depth)] = t;
            self(self, depth + 1, t + 1, cost + c);
        }
    };
    search(search, 0, 1, 0.0);
    if (!std::isfinite(best_cost)) throw Error("degenerate_histogram", "multi_threshold: no admissible partition");

    MatterMap mm;
    mm.labels = BinaryMask(vol.dims(), vol.geometry(), kVessel);
    for (int t : best) mm.thresholds.push_back(lo + width * t);
    for (std::size_t i = 0; i < vol.size(); ++i) {
        if (exclude[i]) continue;
        const int b = bin_of(vol[i]);
        std::size_t cls = 0;
        while (cls < best.size() && b >= best[cls]) ++cls;
        mm.labels[i] = labels_for[cls];
    }
    mm.stats = label_stats(vol, mm.labels);
    return mm;
}

}  // namespace vamos

#endif  // VAMOS_THRESHOLD_HPP
