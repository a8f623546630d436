#ifndef VAMOS_DISTANCE_HPP
#define VAMOS_DISTANCE_HPP

#include <cmath>
#include <limits>
#include <vector>

#include "vamos/volume.hpp"

namespace vamos {

namespace detail {

// 1D lower envelope of parabolas (Felzenszwalb & Huttenlocher) over sites at
// physical positions w*i, i in [-1, n], where the two virtual end sites are
// background (f = 0).
inline void edt_line(const double* f_in, double* f_out, long n, double w, std::vector<double>& pos,
                     std::vector<double>& val, std::vector<int>& v, std::vector<double>& z) {
    const double inf = std::numeric_limits<double>::infinity();
    const long m = n + 2;
    pos.resize(std::size_t(m));
    val.resize(std::size_t(m));
    for (long i = 0; i < m; ++i) {
        pos[std::size_t(i)] = w * double(i - 1);
        val[std::size_t(i)] = (i == 0 || i == m - 1) ? 0.0 : f_in[i - 1];
    }
    v.assign(std::size_t(m), 0);
    z.assign(std::size_t(m + 1), 0);
    int k = -1;
    for (long q = 0; q < m; ++q) {
        if (val[std::size_t(q)] == inf) continue;
        if (k < 0) {
            k = 0;
            v[0] = int(q);
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        double s = 0;
        while (true) {
            const long p = v[std::size_t(k)];
            s = ((val[std::size_t(q)] + pos[std::size_t(q)] * pos[std::size_t(q)]) -
                 (val[std::size_t(p)] + pos[std::size_t(p)] * pos[std::size_t(p)])) /
                (2.0 * (pos[std::size_t(q)] - pos[std::size_t(p)]));
            if (s <= z[std::size_t(k)] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[std::size_t(k)] = int(q);
        z[std::size_t(k)] = s;
        z[std::size_t(k + 1)] = inf;
    }
    int j = 0;
    for (long i = 1; i <= n; ++i) {
        const double x = pos[std::size_t(i)];
        while (z[std::size_t(j + 1)] < x) ++j;
        const double d = x - pos[std::size_t(v[std::size_t(j)])];
        f_out[i - 1] = d * d + val[std::size_t(v[std::size_t(j)])];
    }
}

}  // namespace detail

/// Exact Euclidean distance (mm) from every foreground voxel centre to the
/// nearest background voxel centre. Everything outside the grid counts as
/// background, so a voxel on the border face is at most one step away.
template <typename T>
VoxelVolume distance_transform(const Volume<T>& mask) {
    const Dims d = mask.dims();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> f(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) f[i] = mask[i] != T{} ? inf : 0.0;

    std::vector<double> pos, val, z, in, out;
    std::vector<int> v;
    for (int axis = 0; axis < 3; ++axis) {
        const long n = d[axis];
        const long stride = axis == 0 ? 1 : (axis == 1 ? d.x : d.x * d.y);
        const double w = mask.spacing()[axis];
        in.resize(std::size_t(n));
        out.resize(std::size_t(n));
        for (long c = 0; c < d.z; ++c) {
            for (long b = 0; b < d.y; ++b) {
                for (long a = 0; a < d.x; ++a) {
                    // visit each line once: the coordinate along `axis` must be 0
                    const long along = axis == 0 ? a : (axis == 1 ? b : c);
                    if (along != 0) continue;
                    const long base = a + d.x * (b + d.y * c);
                    for (long i = 0; i < n; ++i) in[std::size_t(i)] = f[std::size_t(base + stride * i)];
                    detail::edt_line(in.data(), out.data(), n, w, pos, val, v, z);
                    for (long i = 0; i < n; ++i) f[std::size_t(base + stride * i)] = out[std::size_t(i)];
                }
            }
        }
    }
    VoxelVolume dist(mask.dims(), mask.geometry());
    for (std::size_t i = 0; i < f.size(); ++i) dist[i] = float(std::sqrt(f[i]));
    return dist;
}

}  // namespace vamos

#endif  // VAMOS_DISTANCE_HPP
