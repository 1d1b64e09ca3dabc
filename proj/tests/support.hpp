#pragma once

// shared helpers for the test binaries

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "canmap/common.hpp"
#include "canmap/volume.hpp"

namespace testsup {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<uint64_t> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("canmap_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string str() const { return path_.string(); }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

// collect warnings for the duration of a scope
class WarnCapture {
public:
    WarnCapture() {
        prev_ = canmap::set_warn_handler([this](const std::string& m) { messages.push_back(m); });
    }
    ~WarnCapture() { canmap::set_warn_handler(prev_); }
    std::vector<std::string> messages;

private:
    canmap::WarnHandler prev_;
};

// independent product-moment correlation (test oracle)
inline double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

// cortical band width estimate, in voxels, from the mid-slice center-row
// profile: the band is the only tissue brighter than 0.70
inline double band_thickness(const canmap::Volume& v) {
    const int z = v.depth / 2, y = v.height / 2;
    double width = 0.0;
    for (int x = 0; x < v.width; ++x) {
        double val = v.at(x, y, z);
        double t = (val - 0.70) / 0.10;
        width += t < 0 ? 0 : (t > 1 ? 1 : t);
    }
    return width / 2.0; // band crossed twice along the row
}

} // namespace testsup
