#include "canmap/slices.hpp"

#include <algorithm>
#include <cmath>

#include "canmap/common.hpp"
#include "canmap/kernels.hpp"

namespace canmap {

std::pair<int, int> middle_window(int depth, int n) {
    if (n < 1) throw std::invalid_argument("middle_window: n must be >= 1");
    if (depth < n) return {0, depth};
    return {(depth - n) / 2, n};
}

float percentile(std::vector<float> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile of empty data");
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return static_cast<float>(values[lo] + frac * (values[lo + 1] - values[lo]));
}

VolumeScale volume_scale(const Volume& v) {
    VolumeScale sc;
    sc.p1 = percentile(v.voxels, 1.0);
    sc.p99 = percentile(v.voxels, 99.0);
    if (sc.p1 == sc.p99)
        throw std::runtime_error("zero dynamic range in volume" +
                                 (v.subject_id.empty() ? "" : " (subject " + v.subject_id + ")"));
    return sc;
}

namespace {

Tensorf clamp_resize(const std::vector<float>& plane, int h, int w, int out_size) {
    Tensorf out({out_size, out_size});
    kern::bilinear_resize(plane.data(), h, w, out.ptr(), out_size, out_size);
    return out;
}

} // namespace

Tensorf normalize_slice(const float* raw, int h, int w, VolumeScale sc, int out_size) {
    const double scale = 2.0 / (static_cast<double>(sc.p99) - sc.p1);
    std::vector<float> plane(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < plane.size(); ++i) {
        double t = (static_cast<double>(raw[i]) - sc.p1) * scale - 1.0;
        plane[i] = static_cast<float>(t < -1.0 ? -1.0 : (t > 1.0 ? 1.0 : t));
    }
    return clamp_resize(plane, h, w, out_size);
}

namespace {

// model-space volumes skip percentile mapping; values are clamped only
Tensorf model_space_slice(const float* raw, int h, int w, int out_size) {
    std::vector<float> plane(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < plane.size(); ++i) {
        float t = raw[i];
        plane[i] = t < -1.f ? -1.f : (t > 1.f ? 1.f : t);
    }
    return clamp_resize(plane, h, w, out_size);
}

} // namespace

std::vector<Slice> extract_middle_slices(const Volume& v, int n, int out_size) {
    auto [z0, count] = middle_window(v.depth, n);
    if (count < n)
        warn("volume " + (v.subject_id.empty() ? std::string("<anon>") : v.subject_id) + " has " +
             std::to_string(v.depth) + " slices, fewer than the requested " + std::to_string(n));
    const bool model_space = v.intensity_space == "model";
    VolumeScale sc{};
    if (!model_space) sc = volume_scale(v);

    std::vector<Slice> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const int z = z0 + i;
        Slice s;
        s.subject_id = v.subject_id;
        s.z = z;
        s.pixels = model_space ? model_space_slice(v.slice_ptr(z), v.height, v.width, out_size)
                               : normalize_slice(v.slice_ptr(z), v.height, v.width, sc, out_size);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Tensorf> normalize_all_slices(const Volume& v, int out_size) {
    const bool model_space = v.intensity_space == "model";
    VolumeScale sc{};
    if (!model_space) sc = volume_scale(v);
    std::vector<Tensorf> out;
    out.reserve(v.depth);
    for (int z = 0; z < v.depth; ++z)
        out.push_back(model_space ? model_space_slice(v.slice_ptr(z), v.height, v.width, out_size)
                                  : normalize_slice(v.slice_ptr(z), v.height, v.width, sc, out_size));
    return out;
}

} // namespace canmap
