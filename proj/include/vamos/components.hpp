#ifndef VAMOS_COMPONENTS_HPP
#define VAMOS_COMPONENTS_HPP

#include <algorithm>
#include <cstdint>
#include <vector>

#include "vamos/volume.hpp"

namespace vamos {

struct Components {
    LabelVolume labels;                          // 0 = background, 1..K
    std::vector<std::vector<std::size_t>> voxels;  // voxels[k-1] = linear indices of component k

    std::size_t count() const { return voxels.size(); }
};

inline std::vector<Index3> neighbor_offsets(int connectivity) {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26)
        throw Error("invalid_connectivity", "connectivity must be 6, 18 or 26");
    std::vector<Index3> out;
    for (const Index3& d : neighbors26())
        if (is_neighbor_offset(d, connectivity)) out.push_back(d);
    return out;
}

/// Labels foreground components. Labels are numbered in order of each
/// component's first voxel in x-fastest scan order.
template <typename T>
Components connected_components(const Volume<T>& mask, int connectivity = 26) {
    const auto offs = neighbor_offsets(connectivity);
    Components out{LabelVolume(mask.dims(), mask.geometry(), 0), {}};
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] == T{} || out.labels[i] != 0) continue;
        const auto label = std::int32_t(out.voxels.size() + 1);
        std::vector<std::size_t> comp;
        out.labels[i] = label;
        stack.assign(1, i);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            comp.push_back(cur);
            const Index3 p = mask.coord(cur);
            for (const Index3& d : offs) {
                const Index3 q = p + d;
                if (!mask.contains(q)) continue;
                const std::size_t j = mask.index(q);
                if (mask[j] != T{} && out.labels[j] == 0) {
                    out.labels[j] = label;
                    stack.push_back(j);
                }
            }
        }
        std::sort(comp.begin(), comp.end());
        out.voxels.push_back(std::move(comp));
    }
    return out;
}

/// Keeps only the largest component (ties: lowest label).
template <typename T>
Volume<T> largest_component(const Volume<T>& mask, int connectivity = 26) {
    const Components cc = connected_components(mask, connectivity);
    Volume<T> out(mask.dims(), mask.geometry(), T{});
    if (cc.count() == 0) return out;
    std::size_t best = 0;
    for (std::size_t k = 1; k < cc.count(); ++k)
        if (cc.voxels[k].size() > cc.voxels[best].size()) best = k;
    for (std::size_t i : cc.voxels[best]) out[i] = mask[i];
    return out;
}

}  // namespace vamos

#endif  // VAMOS_COMPONENTS_HPP
