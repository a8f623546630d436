#ifndef VAMOS_FILTER_HPP
#define VAMOS_FILTER_HPP

#include <cmath>
#include <string>
#include <vector>

#include "vamos/volume.hpp"

namespace vamos {

/// slice2d blurs each axial (z) slice independently in x and y; full3d also blurs along z.
enum class FilterMode { slice2d, full3d };

inline std::string to_string(FilterMode m) { return m == FilterMode::slice2d ? "slice2d" : "full3d"; }
inline FilterMode filter_mode_from_string(const std::string& s) {
    if (s == "slice2d") return FilterMode::slice2d;
    if (s == "full3d") return FilterMode::full3d;
    throw Error("invalid_config", "unknown filter mode '" + s + "'");
}

/// Sampled Gaussian normalised to unit sum, truncated at 4 sigma.
inline std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, int(std::ceil(4.0 * sigma)));
    std::vector<double> k(std::size_t(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
        k[std::size_t(i + radius)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

/// Half-sample symmetric reflection (d c b a | a b c d | d c b a).
inline long reflect_index(long i, long n) {
    if (n == 1) return 0;
    const long period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

namespace detail {

inline void convolve_axis(std::vector<double>& data, Dims d, int axis, const std::vector<double>& k) {
    const long radius = long(k.size() / 2);
    const long n = d[axis];
    const long stride = axis == 0 ? 1 : (axis == 1 ? d.x : d.x * d.y);
    const long lines_outer = axis == 2 ? d.y : d.z;
    const long lines_inner = axis == 0 ? d.y : d.x;
    std::vector<double> line(std::size_t(n + 2 * radius));
    for (long o = 0; o < lines_outer; ++o) {
        for (long in = 0; in < lines_inner; ++in) {
            long base = 0;
            if (axis == 0) base = d.x * (in + d.y * o);
            else if (axis == 1) base = in + d.x * d.y * o;
            else base = in + d.x * o;
            for (long i = -radius; i < n + radius; ++i)
                line[std::size_t(i + radius)] = data[std::size_t(base + stride * reflect_index(i, n))];
            for (long i = 0; i < n; ++i) {
                double acc = 0;
                const double* src = &line[std::size_t(i)];
                for (std::size_t t = 0; t < k.size(); ++t) acc += k[t] * src[t];
                data[std::size_t(base + stride * i)] = acc;
            }
        }
    }
}

}  // namespace detail

/// Separable Gaussian blur with reflective borders. sigma is in voxels.
inline VoxelVolume gaussian_filter(const VoxelVolume& vol, double sigma, FilterMode mode = FilterMode::slice2d) {
    if (!(sigma >= 0)) throw Error("negative_sigma", "gaussian_filter: sigma must be >= 0");
    if (sigma == 0) return vol;
    const auto k = gaussian_kernel(sigma);
    std::vector<double> buf(vol.data().begin(), vol.data().end());
    detail::convolve_axis(buf, vol.dims(), 0, k);
    detail::convolve_axis(buf, vol.dims(), 1, k);
    if (mode == FilterMode::full3d) detail::convolve_axis(buf, vol.dims(), 2, k);
    VoxelVolume out(vol.dims(), vol.geometry());
    for (std::size_t i = 0; i < buf.size(); ++i) out[i] = float(buf[i]);
    return out;
}

/// Std of filtered unit-variance white noise predicted by the continuous
/// approximation of the squared-kernel sum.
inline double filtered_noise_gain(double sigma_g, FilterMode mode) {
    constexpr double pi = 3.14159265358979323846;
    if (mode == FilterMode::slice2d) return 1.0 / (2.0 * sigma_g * std::sqrt(pi));
    return 1.0 / (2.0 * std::sqrt(2.0) * std::pow(pi, 0.75) * std::pow(sigma_g, 1.5));
}

}  // namespace vamos

#endif  // VAMOS_FILTER_HPP
