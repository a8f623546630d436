// Shared helpers and independent oracles for the test suites.
#ifndef VAMOS_TEST_SUPPORT_HPP
#define VAMOS_TEST_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "vamos/volume.hpp"

namespace vamos::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("vamos_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline BinaryMask random_mask(Dims d, double density, unsigned seed, Vec3 spacing = {1, 1, 1}) {
    std::mt19937 rng(seed);
    std::bernoulli_distribution on(density);
    BinaryMask m(d, Geometry{spacing, {0, 0, 0}});
    for (auto& b : m.data()) b = on(rng) ? 1 : 0;
    return m;
}

inline VoxelVolume white_noise(Dims d, double mean, double sd, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(mean, sd);
    VoxelVolume v(d);
    for (auto& x : v.data()) x = float(n(rng));
    return v;
}

inline double mean_of(const VoxelVolume& v) {
    double s = 0;
    for (float x : v.data()) s += x;
    return s / double(v.size());
}

inline double std_of(const VoxelVolume& v) {
    const double m = mean_of(v);
    double s = 0;
    for (float x : v.data()) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size()));
}

/// Union-find labelling over explicit neighbour pairs; returns, for every
/// voxel, the smallest linear index in its component (or -1 for background).
inline std::vector<long> union_find_roots(const BinaryMask& m, int connectivity) {
    std::vector<long> parent(m.size());
    std::iota(parent.begin(), parent.end(), 0L);
    auto find = [&](long x) {
        while (parent[std::size_t(x)] != x) x = parent[std::size_t(x)] = parent[std::size_t(parent[std::size_t(x)])];
        return x;
    };
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!m[i]) continue;
        const Index3 p = m.coord(i);
        for (long dz = -1; dz <= 1; ++dz)
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                    const long l1 = std::labs(dx) + std::labs(dy) + std::labs(dz);
                    if (l1 == 0 || (connectivity == 6 && l1 > 1) || (connectivity == 18 && l1 > 2)) continue;
                    const Index3 q{p.x + dx, p.y + dy, p.z + dz};
                    if (!m.contains(q) || !m[q]) continue;
                    const long a = find(long(i)), b = find(long(m.index(q)));
                    if (a != b) parent[std::size_t(std::max(a, b))] = std::min(a, b);
                }
    }
    std::vector<long> out(m.size(), -1);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) out[i] = find(long(i));
    return out;
}

/// Brute-force distance transform: min distance over all background voxels
/// plus the virtual background shell surrounding the grid.
inline std::vector<double> brute_force_edt(const BinaryMask& m) {
    const Dims d = m.dims();
    const Vec3 s = m.spacing();
    std::vector<Index3> bg;
    for (long z = -1; z <= d.z; ++z)
        for (long y = -1; y <= d.y; ++y)
            for (long x = -1; x <= d.x; ++x) {
                const Index3 p{x, y, z};
                if (!d.contains(p) || !m[p]) bg.push_back(p);
            }
    std::vector<double> out(m.size(), 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!m[i]) continue;
        const Index3 p = m.coord(i);
        double best = std::numeric_limits<double>::infinity();
        for (const Index3& q : bg) {
            const double dx = double(p.x - q.x) * s.x, dy = double(p.y - q.y) * s.y, dz = double(p.z - q.z) * s.z;
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        out[i] = std::sqrt(best);
    }
    return out;
}

/// Digital tube: voxels within `radius` (voxels) of the segment a-b.
inline void paint_segment(BinaryMask& m, Vec3 a, Vec3 b, double radius) {
    const Vec3 ab = b - a;
    const double len2 = dot(ab, ab);
    const long r = long(std::ceil(radius)) + 1;
    const long x0 = long(std::floor(std::min(a.x, b.x))) - r, x1 = long(std::ceil(std::max(a.x, b.x))) + r;
    const long y0 = long(std::floor(std::min(a.y, b.y))) - r, y1 = long(std::ceil(std::max(a.y, b.y))) + r;
    const long z0 = long(std::floor(std::min(a.z, b.z))) - r, z1 = long(std::ceil(std::max(a.z, b.z))) + r;
    for (long z = z0; z <= z1; ++z)
        for (long y = y0; y <= y1; ++y)
            for (long x = x0; x <= x1; ++x) {
                if (!m.contains({x, y, z})) continue;
                const Vec3 p{double(x), double(y), double(z)};
                double t = len2 > 0 ? dot(p - a, ab) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                if (norm(p - (a + ab * t)) <= radius) m(x, y, z) = 1;
            }
}

}  // namespace vamos::testing

#endif  // VAMOS_TEST_SUPPORT_HPP
