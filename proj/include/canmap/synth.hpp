#pragma once

// Synthetic multi-site phantom cohorts: ellipsoid "brain" with an age-thinned
// cortical band and age-grown ventricle, optional focal lesions, and a
// parameterized acquisition effect (gain, contrast, bias field, blur, noise).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "canmap/rng.hpp"
#include "canmap/volume.hpp"

namespace canmap {

struct SiteEffect {
    double gain = 1.0;       // multiplicative, > 0
    double gamma = 1.0;      // contrast exponent on [0,1] intensities, > 0
    double bias_amp = 0.0;   // amplitude of the multiplicative Gaussian blob
    std::array<double, 3> bias_center{0.5, 0.5, 0.5}; // normalized [0,1] coords
    double bias_width = 0.35;                         // normalized std dev
    double noise_sigma = 0.0; // additive Gaussian, applied last
    double blur_sigma = 0.0;  // Gaussian blur in voxels

    void validate() const;
    bool is_identity() const {
        return gain == 1.0 && gamma == 1.0 && bias_amp == 0.0 && noise_sigma == 0.0 &&
               blur_sigma == 0.0;
    }

    static nlohmann::json to_json(const SiteEffect& e);
    static SiteEffect from_json(const nlohmann::json& j);
};

struct AnatomyCoeffs {
    double band_thick_young = 0.30; // cortical band, fraction of brain radius
    double band_thick_old = 0.10;
    double vent_r_young = 0.10; // ventricle radius, fraction of brain radius
    double vent_r_old = 0.28;
    double jitter = 0.04;          // per-subject relative shape jitter
    double lesion_contrast = 0.55; // intensity dip inside lesions
    double lesion_radius_vox = 3.0;
};

struct SiteSpec {
    std::string name;
    SiteEffect effect;
    int n_subjects = 0;
};

struct CohortConfig {
    uint64_t seed = 1;
    int image_size = 64;
    int depth = 12;
    std::array<double, 2> age_range{20.0, 80.0};
    double disease_prevalence = 0.0;
    AnatomyCoeffs anatomy;
    std::vector<SiteSpec> sites;

    void validate() const;
    static CohortConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// deterministic in (subject_seed, age, label); intensities in [0,1].
// label=1 adds 1..3 compact hypointense blobs inside the band, and the volume
// is bit-identical to the label=0 volume outside those blobs.
Volume generate_anatomy(const CohortConfig& cfg, uint64_t subject_seed, double age, int label);

// out = clamp(gain * bias * v^gamma, 0, 4), then blur, then additive noise.
// Identity-parameter stages are skipped, so the identity effect is bitwise.
Volume apply_site_effect(const Volume& v, const SiteEffect& e, Rng& rng);

// writes volumes/<subject>.json|.raw plus manifest.csv under out_dir;
// 70/10/20 train/val/test split stratified by site.
Manifest generate_cohort(const CohortConfig& cfg, const std::string& out_dir);

} // namespace canmap
