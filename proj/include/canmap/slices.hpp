#pragma once

// Axial slice extraction and intensity normalization: volumes come in with
// arbitrary scanner units, the models consume [-1,1] squares of a fixed size.

#include <string>
#include <utility>
#include <vector>

#include "canmap/tensor.hpp"
#include "canmap/volume.hpp"

namespace canmap {

struct Slice {
    Tensorf pixels; // [H,W] in [-1,1]
    std::string subject_id;
    int z = 0;
};

// start index and count of the centered window (floor biases to the low side)
std::pair<int, int> middle_window(int depth, int n);

// linearly interpolated percentile (p in [0,100]) of a copy of the data
float percentile(std::vector<float> values, double p);

struct VolumeScale {
    float p1 = 0.f, p99 = 0.f;
};

// p1/p99 of the whole volume; throws "zero dynamic range" when p1 == p99
VolumeScale volume_scale(const Volume& v);

// map [p1,p99] -> [-1,1] with clamping, then bilinear-resize to out_size
Tensorf normalize_slice(const float* raw, int h, int w, VolumeScale sc, int out_size);

// ready-to-train slices for the centered window; volumes already in the
// model intensity space are clamped and resized but not re-normalized.
// D < n yields all D slices plus a warning.
std::vector<Slice> extract_middle_slices(const Volume& v, int n, int out_size);

// normalized volume: every slice of v, processed like extract_middle_slices
// processes window slices. Used when reassembling harmonized volumes.
std::vector<Tensorf> normalize_all_slices(const Volume& v, int out_size);

} // namespace canmap
