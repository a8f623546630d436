#ifndef VAMOS_SKELETON_HPP
#define VAMOS_SKELETON_HPP

#include <algorithm>
#include <array>
#include <bitset>
#include <cstdint>
#include <vector>

#include "vamos/volume.hpp"

namespace vamos {

namespace detail {

// 3x3x3 neighbourhood packed as bit (dz+1)*9 + (dy+1)*3 + (dx+1); bit 13 is the centre.
using Cube = std::bitset<27>;

constexpr int cube_bit(int dx, int dy, int dz) { return (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1); }

template <typename T>
Cube gather_cube(const Volume<T>& v, Index3 p) {
    Cube c;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const Index3 q{p.x + dx, p.y + dy, p.z + dz};
                if (v.contains(q) && v[q] != T{}) c.set(std::size_t(cube_bit(dx, dy, dz)));
            }
    return c;
}

struct CubeTables {
    std::array<std::vector<int>, 27> adj26;
    std::array<std::vector<int>, 27> adj6_in18;
    std::array<bool, 27> in18{};
    std::array<bool, 27> face{};  // 6-neighbour of the centre
};

inline const CubeTables& cube_tables() {
    static const CubeTables t = [] {
        CubeTables t;
        auto decode = [](int b) { return std::array<int, 3>{b % 3 - 1, (b / 3) % 3 - 1, b / 9 - 1}; };
        for (int a = 0; a < 27; ++a) {
            const auto pa = decode(a);
            const int ma = std::abs(pa[0]) + std::abs(pa[1]) + std::abs(pa[2]);
            t.in18[std::size_t(a)] = ma >= 1 && ma <= 2;
            t.face[std::size_t(a)] = ma == 1;
            for (int b = 0; b < 27; ++b) {
                if (a == b || a == 13 || b == 13) continue;
                const auto pb = decode(b);
                const int dx = std::abs(pa[0] - pb[0]), dy = std::abs(pa[1] - pb[1]), dz = std::abs(pa[2] - pb[2]);
                if (dx > 1 || dy > 1 || dz > 1) continue;
                t.adj26[std::size_t(a)].push_back(b);
                const int mb = std::abs(pb[0]) + std::abs(pb[1]) + std::abs(pb[2]);
                if (dx + dy + dz == 1 && ma >= 1 && ma <= 2 && mb >= 1 && mb <= 2)
                    t.adj6_in18[std::size_t(a)].push_back(b);
            }
        }
        return t;
    }();
    return t;
}

// Simple point test for (26, 6) topology: the foreground neighbours form
// exactly one 26-component and the background in N18 has exactly one
// 6-component touching a face neighbour of the centre.
inline bool is_simple(const Cube& c) {
    const auto& t = cube_tables();
    std::array<int, 27> stack{};
    // foreground
    {
        Cube seen;
        int comps = 0;
        for (int s = 0; s < 27; ++s) {
            if (s == 13 || !c.test(std::size_t(s)) || seen.test(std::size_t(s))) continue;
            if (++comps > 1) return false;
            int top = 0;
            stack[std::size_t(top++)] = s;
            seen.set(std::size_t(s));
            while (top) {
                const int a = stack[std::size_t(--top)];
                for (int b : t.adj26[std::size_t(a)])
                    if (c.test(std::size_t(b)) && !seen.test(std::size_t(b))) {
                        seen.set(std::size_t(b));
                        stack[std::size_t(top++)] = b;
                    }
            }
        }
        if (comps != 1) return false;
    }
    // background
    {
        Cube seen;
        int comps = 0;
        for (int s = 0; s < 27; ++s) {
            if (!t.face[std::size_t(s)] || c.test(std::size_t(s)) || seen.test(std::size_t(s))) continue;
            if (++comps > 1) return false;
            int top = 0;
            stack[std::size_t(top++)] = s;
            seen.set(std::size_t(s));
            while (top) {
                const int a = stack[std::size_t(--top)];
                for (int b : t.adj6_in18[std::size_t(a)])
                    if (!c.test(std::size_t(b)) && !seen.test(std::size_t(b))) {
                        seen.set(std::size_t(b));
                        stack[std::size_t(top++)] = b;
                    }
            }
        }
        return comps == 1;
    }
}

}  // namespace detail

/// True when removing p from the foreground of v preserves topology.
template <typename T>
bool is_simple_point(const Volume<T>& v, Index3 p) {
    return detail::is_simple(detail::gather_cube(v, p));
}

/// Number of 26-neighbours of p in the foreground.
template <typename T>
int foreground_degree(const Volume<T>& v, Index3 p) {
    int n = 0;
    for (const Index3& d : neighbors26()) {
        const Index3 q = p + d;
        n += v.contains(q) && v[q] != T{};
    }
    return n;
}

namespace detail {

// Six directional sub-iterations removing simple border voxels that are not
// curve endpoints, re-checking each candidate sequentially.
inline BinaryMask thin(const BinaryMask& mask) {
    BinaryMask img(mask.dims(), mask.geometry(), 0);
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            img[i] = 1;
            alive.push_back(i);
        }
    static constexpr std::array<Index3, 6> dirs{{{0, -1, 0}, {0, 1, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 0, 1}, {0, 0, -1}}};
    std::vector<std::size_t> cands;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const Index3& d : dirs) {
            cands.clear();
            for (std::size_t i : alive) {
                const Index3 p = img.coord(i);
                if (img.at_or(p + d, 0) != 0) continue;
                if (foreground_degree(img, p) <= 1) continue;
                if (is_simple_point(img, p)) cands.push_back(i);
            }
            for (std::size_t i : cands) {
                const Index3 p = img.coord(i);
                if (foreground_degree(img, p) <= 1) continue;
                if (!is_simple_point(img, p)) continue;
                img[i] = 0;
                changed = true;
            }
            if (!cands.empty())
                std::erase_if(alive, [&img](std::size_t i) { return img[i] == 0; });
        }
    }
    return img;
}

}  // namespace detail

/// Signed axis permutation of a box: output axis i reads input axis perm[i],
/// mirrored when flip[i] is set.
struct CubeSymmetry {
    std::array<int, 3> perm{0, 1, 2};
    std::array<bool, 3> flip{false, false, false};

    Dims apply(Dims d) const { return {d[perm[0]], d[perm[1]], d[perm[2]]}; }
    Index3 apply(Index3 p, Dims d) const {
        Index3 q;
        for (int i = 0; i < 3; ++i) q[i] = flip[std::size_t(i)] ? d[perm[std::size_t(i)]] - 1 - p[perm[std::size_t(i)]] : p[perm[std::size_t(i)]];
        return q;
    }
    // d is the source box, q a point of the transformed box
    Index3 invert(Index3 q, Dims d) const {
        Index3 p;
        for (int i = 0; i < 3; ++i) {
            const int a = perm[std::size_t(i)];
            p[a] = flip[std::size_t(i)] ? d[a] - 1 - q[i] : q[i];
        }
        return p;
    }
};

/// The 48 symmetries of the cube, identity first.
inline const std::vector<CubeSymmetry>& cube_symmetries() {
    static const std::vector<CubeSymmetry> all = [] {
        std::vector<CubeSymmetry> out;
        std::array<int, 3> perm{0, 1, 2};
        do {
            for (int f = 0; f < 8; ++f) out.push_back({perm, {bool(f & 1), bool(f & 2), bool(f & 4)}});
        } while (std::next_permutation(perm.begin(), perm.end()));
        return out;
    }();
    return all;
}

template <typename T>
Volume<T> transform(const Volume<T>& v, const CubeSymmetry& s) {
    const Dims d = v.dims();
    Volume<T> out(s.apply(d), v.geometry());
    for (std::size_t i = 0; i < v.size(); ++i) out[s.apply(v.coord(i), d)] = v[i];
    return out;
}

/// Box around the foreground (one voxel of margin) together with the cube
/// symmetry that maps the boxed mask to its lexicographically smallest
/// image. Only symmetries preserving the voxel spacing are considered.
struct CanonicalFrame {
    Index3 start;
    Dims box;
    CubeSymmetry sym;
};

inline CanonicalFrame canonical_frame(const BinaryMask& mask) {
    Index3 lo{mask.dims().x, mask.dims().y, mask.dims().z}, hi{-1, -1, -1};
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            const Index3 p = mask.coord(i);
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], p[a]);
                hi[a] = std::max(hi[a], p[a]);
            }
        }
    CanonicalFrame f;
    if (hi.x < 0) return f;
    f.start = {lo.x - 1, lo.y - 1, lo.z - 1};
    f.box = {hi.x - lo.x + 3, hi.y - lo.y + 3, hi.z - lo.z + 3};
    const BinaryMask boxed = crop_at(mask, f.start, f.box, std::uint8_t{0});
    const Vec3 sp = mask.spacing();
    std::vector<std::uint8_t> best;
    Dims best_dims;
    bool have = false;
    for (const CubeSymmetry& s : cube_symmetries()) {
        if (sp[s.perm[0]] != sp[0] || sp[s.perm[1]] != sp[1] || sp[s.perm[2]] != sp[2]) continue;
        const Dims d = s.apply(f.box);
        const std::array<long, 3> dk{d.x, d.y, d.z}, bk{best_dims.x, best_dims.y, best_dims.z};
        if (have && dk > bk) continue;
        const BinaryMask t = transform(boxed, s);
        if (!have || dk < bk || t.data() < best) {
            best = t.data();
            best_dims = d;
            f.sym = s;
            have = true;
        }
    }
    return f;
}

/// Topology-preserving thinning to a unit-width curve skeleton. The thinning
/// runs in the canonical frame of the mask, so the result commutes with
/// quarter turns and mirrors of the grid (for masks without self-symmetry).
inline BinaryMask skeletonize(const BinaryMask& mask) {
    BinaryMask out(mask.dims(), mask.geometry(), 0);
    if (count_nonzero(mask) == 0) return out;
    const CanonicalFrame f = canonical_frame(mask);
    const BinaryMask local = detail::thin(transform(crop_at(mask, f.start, f.box, std::uint8_t{0}), f.sym));
    for (std::size_t i = 0; i < local.size(); ++i)
        if (local[i]) out[f.sym.invert(local.coord(i), f.box) + f.start] = 1;
    return out;
}

}  // namespace vamos

#endif  // VAMOS_SKELETON_HPP
