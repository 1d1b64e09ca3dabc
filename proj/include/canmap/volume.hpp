#pragma once

// Volume and cohort-manifest model: the .json/.raw volume container, the CSV
// manifest, one-hot site codes, and cohort-level QC flagging.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace canmap {

struct Volume {
    int width = 0, height = 0, depth = 0;
    std::vector<float> voxels; // x fastest, then y, then z
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    bool has_spacing = false;
    // "raw": scanner-unit intensities, normalized at slice extraction;
    // "model": already in the [-1,1] model domain (harmonizer output)
    std::string intensity_space = "raw";

    std::string subject_id; // populated from the manifest, not the header
    int site = -1;

    int64_t size() const { return static_cast<int64_t>(width) * height * depth; }
    float& at(int x, int y, int z) {
        return voxels[(static_cast<int64_t>(z) * height + y) * width + x];
    }
    float at(int x, int y, int z) const {
        return voxels[(static_cast<int64_t>(z) * height + y) * width + x];
    }
    const float* slice_ptr(int z) const {
        return voxels.data() + static_cast<int64_t>(z) * height * width;
    }
};

// path may point at the .json header, the .raw payload, or the common stem
Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& path);

struct SiteCode {
    int index = 0;
    int count = 0;
    std::vector<float> encoding() const {
        std::vector<float> e(count, 0.f);
        e[index] = 1.f;
        return e;
    }
};

SiteCode one_hot(int k, int K);

struct ManifestRecord {
    std::string subject_id;
    std::string volume_path; // as stored in the CSV, relative to the CSV dir
    std::string site_name;
    int site_index = -1; // dense 0..K-1, first-appearance order
    std::optional<double> age;
    std::optional<int> label;
    std::string split; // train | val | test
};

struct Manifest {
    std::vector<ManifestRecord> records;
    std::vector<std::string> site_names;
    std::string dir; // directory of the CSV, used to resolve volume paths

    static Manifest load(const std::string& csv_path);
    void save(const std::string& csv_path) const;

    // rebuild the dense site index from the records (first appearance wins)
    void reindex_sites();

    std::string resolve(const ManifestRecord& r) const;
    Volume load_record(const ManifestRecord& r) const;

    int site_count() const { return static_cast<int>(site_names.size()); }
    int site_index_of(const std::string& name) const; // -1 when unknown

    std::vector<const ManifestRecord*> rows(const std::string& site_name,
                                            const std::string& split) const; // "" = any
};

struct QCFlag {
    std::string subject_id;
    std::string statistic; // "mean" | "std"
    double z = 0.0;
    bool flagged = false;
};

// Per site: z-score each volume's mean and std intensity against the site
// cohort; |z| > threshold flags it. Sites with fewer than 3 volumes are
// skipped with a warning and contribute no entries.
std::vector<QCFlag> qc_flag(const Manifest& m, double threshold = 3.0);

} // namespace canmap
