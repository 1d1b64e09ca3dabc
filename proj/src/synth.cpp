#include "canmap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "canmap/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace canmap {

void SiteEffect::validate() const {
    if (!(gain > 0.0)) throw std::invalid_argument("site effect: gain must be > 0");
    if (!(gamma > 0.0)) throw std::invalid_argument("site effect: gamma must be > 0");
    if (bias_amp < 0.0) throw std::invalid_argument("site effect: bias amplitude must be >= 0");
    if (!(bias_width > 0.0)) throw std::invalid_argument("site effect: bias width must be > 0");
    if (noise_sigma < 0.0) throw std::invalid_argument("site effect: noise sigma must be >= 0");
    if (blur_sigma < 0.0) throw std::invalid_argument("site effect: blur sigma must be >= 0");
}

json SiteEffect::to_json(const SiteEffect& e) {
    return json{{"gain", e.gain},
                {"gamma", e.gamma},
                {"bias_amp", e.bias_amp},
                {"bias_center", {e.bias_center[0], e.bias_center[1], e.bias_center[2]}},
                {"bias_width", e.bias_width},
                {"noise_sigma", e.noise_sigma},
                {"blur_sigma", e.blur_sigma}};
}

SiteEffect SiteEffect::from_json(const json& j) {
    SiteEffect e;
    e.gain = j.value("gain", 1.0);
    e.gamma = j.value("gamma", 1.0);
    e.bias_amp = j.value("bias_amp", 0.0);
    if (j.contains("bias_center")) {
        auto c = j["bias_center"].get<std::vector<double>>();
        if (c.size() != 3) throw std::invalid_argument("bias_center must have 3 entries");
        e.bias_center = {c[0], c[1], c[2]};
    }
    e.bias_width = j.value("bias_width", 0.35);
    e.noise_sigma = j.value("noise_sigma", 0.0);
    e.blur_sigma = j.value("blur_sigma", 0.0);
    return e;
}

void CohortConfig::validate() const {
    if (image_size < 8) throw std::invalid_argument("cohort: image_size must be >= 8");
    if (depth < 1) throw std::invalid_argument("cohort: depth must be >= 1");
    if (!(age_range[1] > age_range[0])) throw std::invalid_argument("cohort: empty age range");
    if (disease_prevalence < 0.0 || disease_prevalence > 1.0)
        throw std::invalid_argument("cohort: prevalence must be in [0,1]");
    if (sites.empty()) throw std::invalid_argument("cohort: no sites configured");
    for (const auto& s : sites) {
        if (s.name.empty()) throw std::invalid_argument("cohort: empty site name");
        if (s.n_subjects < 1)
            throw std::invalid_argument("cohort: site '" + s.name + "' needs n_subjects >= 1");
        s.effect.validate();
    }
}

CohortConfig CohortConfig::from_json(const json& j) {
    CohortConfig c;
    c.seed = j.value("seed", uint64_t(1));
    c.image_size = j.value("image_size", 64);
    c.depth = j.value("depth", 12);
    if (j.contains("age_range")) {
        auto r = j["age_range"].get<std::vector<double>>();
        if (r.size() != 2) throw std::invalid_argument("age_range must have 2 entries");
        c.age_range = {r[0], r[1]};
    }
    c.disease_prevalence = j.value("disease_prevalence", 0.0);
    if (j.contains("anatomy")) {
        const auto& a = j["anatomy"];
        c.anatomy.band_thick_young = a.value("band_thick_young", c.anatomy.band_thick_young);
        c.anatomy.band_thick_old = a.value("band_thick_old", c.anatomy.band_thick_old);
        c.anatomy.vent_r_young = a.value("vent_r_young", c.anatomy.vent_r_young);
        c.anatomy.vent_r_old = a.value("vent_r_old", c.anatomy.vent_r_old);
        c.anatomy.jitter = a.value("jitter", c.anatomy.jitter);
        c.anatomy.lesion_contrast = a.value("lesion_contrast", c.anatomy.lesion_contrast);
        c.anatomy.lesion_radius_vox = a.value("lesion_radius_vox", c.anatomy.lesion_radius_vox);
    }
    for (const auto& s : j.value("sites", json::array())) {
        SiteSpec spec;
        spec.name = s.at("name").get<std::string>();
        spec.n_subjects = s.value("n_subjects", 1);
        if (s.contains("effect")) spec.effect = SiteEffect::from_json(s["effect"]);
        c.sites.push_back(std::move(spec));
    }
    return c;
}

json CohortConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["image_size"] = image_size;
    j["depth"] = depth;
    j["age_range"] = {age_range[0], age_range[1]};
    j["disease_prevalence"] = disease_prevalence;
    j["anatomy"] = {{"band_thick_young", anatomy.band_thick_young},
                    {"band_thick_old", anatomy.band_thick_old},
                    {"vent_r_young", anatomy.vent_r_young},
                    {"vent_r_old", anatomy.vent_r_old},
                    {"jitter", anatomy.jitter},
                    {"lesion_contrast", anatomy.lesion_contrast},
                    {"lesion_radius_vox", anatomy.lesion_radius_vox}};
    j["sites"] = json::array();
    for (const auto& s : sites)
        j["sites"].push_back(
            {{"name", s.name}, {"n_subjects", s.n_subjects}, {"effect", SiteEffect::to_json(s.effect)}});
    return j;
}

namespace {

// increasing smoothstep on [e0, e1]
double smoothstep(double e0, double e1, double x) {
    double t = (x - e0) / (e1 - e0);
    t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
    return t * t * (3.0 - 2.0 * t);
}

constexpr double kWhite = 0.55;
constexpr double kBand = 0.85;
constexpr double kVentricle = 0.15;
constexpr double kEdge = 0.04; // transition half-width in rho units

struct LesionBall {
    double cx, cy, cz; // normalized [-1,1] coords
    double radius;     // normalized
};

} // namespace

Volume generate_anatomy(const CohortConfig& cfg, uint64_t subject_seed, double age, int label) {
    const auto& an = cfg.anatomy;
    const int S = cfg.image_size, D = cfg.depth;

    Rng shape_rng = Rng(subject_seed).child(1);
    // per-subject shape jitter; identical for both labels of the same subject
    const double rx = 0.80 * (1.0 + an.jitter * shape_rng.normal());
    const double ry = 0.80 * (1.0 + an.jitter * shape_rng.normal());
    const double rz = 0.95 * (1.0 + an.jitter * shape_rng.normal());
    const double cx = 0.05 * an.jitter / 0.04 * shape_rng.normal() * 0.5;
    const double cy = 0.05 * an.jitter / 0.04 * shape_rng.normal() * 0.5;

    const double age_n =
        (age - cfg.age_range[0]) / (cfg.age_range[1] - cfg.age_range[0]);
    const double band_t = an.band_thick_young + (an.band_thick_old - an.band_thick_young) * age_n;
    const double vent_r = an.vent_r_young + (an.vent_r_old - an.vent_r_young) * age_n;

    std::vector<LesionBall> lesions;
    if (label == 1) {
        Rng lesion_rng = Rng(subject_seed).child(2);
        const int n_lesions = 1 + static_cast<int>(lesion_rng.index(3));
        for (int i = 0; i < n_lesions; ++i) {
            const double theta = lesion_rng.uniform(0.0, 2.0 * M_PI);
            const double rho = 1.0 - band_t * 0.5; // mid-band
            LesionBall b;
            b.cx = cx + std::cos(theta) * rx * rho;
            b.cy = cy + std::sin(theta) * ry * rho;
            b.cz = lesion_rng.uniform(-0.25, 0.25) * rz;
            b.radius = an.lesion_radius_vox / (S / 2.0);
            lesions.push_back(b);
        }
    }

    Volume v;
    v.width = S;
    v.height = S;
    v.depth = D;
    v.voxels.resize(static_cast<size_t>(v.size()));
    for (int z = 0; z < D; ++z) {
        const double w = (z + 0.5) / D * 2.0 - 1.0;
        for (int y = 0; y < S; ++y) {
            const double vv = (y + 0.5) / S * 2.0 - 1.0;
            for (int x = 0; x < S; ++x) {
                const double uu = (x + 0.5) / S * 2.0 - 1.0;
                const double du = (uu - cx) / rx, dv = (vv - cy) / ry, dw = w / rz;
                const double rho = std::sqrt(du * du + dv * dv + dw * dw);

                const double inside = 1.0 - smoothstep(1.0 - kEdge, 1.0 + kEdge, rho);
                const double band = smoothstep(1.0 - band_t - kEdge, 1.0 - band_t + kEdge, rho);
                const double vent = 1.0 - smoothstep(vent_r - kEdge, vent_r + kEdge, rho);
                double val = inside * (kWhite + (kBand - kWhite) * band +
                                       (kVentricle - kWhite) * vent);

                // multiplicative dips with compact support: zero influence
                // outside the ball, so label flips change nothing elsewhere
                for (const auto& b : lesions) {
                    const double dx = uu - b.cx, dy = vv - b.cy, dz = w - b.cz;
                    const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
                    if (d < b.radius) {
                        const double fall = 1.0 - smoothstep(b.radius * 0.5, b.radius, d);
                        val *= 1.0 - an.lesion_contrast * fall;
                    }
                }
                v.at(x, y, z) = static_cast<float>(val);
            }
        }
    }
    return v;
}

namespace {

std::vector<float> gaussian_taps(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> taps(2 * radius + 1);
    double s = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        taps[i + radius] = static_cast<float>(w);
        s += w;
    }
    for (auto& t : taps) t = static_cast<float>(t / s);
    return taps;
}

// separable blur along one axis with edge clamping
void blur_axis(std::vector<float>& vox, int W, int H, int D, int axis,
               const std::vector<float>& taps) {
    const int radius = static_cast<int>(taps.size()) / 2;
    const int dims[3] = {W, H, D};
    const int64_t strides[3] = {1, W, static_cast<int64_t>(W) * H};
    const int n = dims[axis];
    const int64_t stride = strides[axis];
    std::vector<float> line(n);
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (int i2 = 0; i2 < dims[a2]; ++i2) {
        for (int i1 = 0; i1 < dims[a1]; ++i1) {
            const int64_t base = i1 * strides[a1] + i2 * strides[a2];
            for (int i = 0; i < n; ++i) line[i] = vox[base + i * stride];
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    int j = i + t;
                    j = j < 0 ? 0 : (j >= n ? n - 1 : j);
                    acc += static_cast<double>(taps[t + radius]) * line[j];
                }
                vox[base + i * stride] = static_cast<float>(acc);
            }
        }
    }
}

} // namespace

Volume apply_site_effect(const Volume& v, const SiteEffect& e, Rng& rng) {
    e.validate();
    Volume out = v;
    const int W = v.width, H = v.height, D = v.depth;

    const bool do_gamma = e.gamma != 1.0;
    const bool do_gain_bias = e.gain != 1.0 || e.bias_amp != 0.0;
    if (do_gamma || do_gain_bias) {
        const double inv2w2 = 1.0 / (2.0 * e.bias_width * e.bias_width);
        for (int z = 0; z < D; ++z) {
            const double pz = (z + 0.5) / D;
            for (int y = 0; y < H; ++y) {
                const double py = (y + 0.5) / H;
                for (int x = 0; x < W; ++x) {
                    double val = out.at(x, y, z);
                    if (do_gamma) val = std::pow(std::max(val, 0.0), e.gamma);
                    if (do_gain_bias) {
                        const double px = (x + 0.5) / W;
                        const double dx = px - e.bias_center[0], dy = py - e.bias_center[1],
                                     dz = pz - e.bias_center[2];
                        const double bias =
                            1.0 + e.bias_amp * std::exp(-(dx * dx + dy * dy + dz * dz) * inv2w2);
                        val *= e.gain * bias;
                    }
                    val = val < 0.0 ? 0.0 : (val > 4.0 ? 4.0 : val);
                    out.at(x, y, z) = static_cast<float>(val);
                }
            }
        }
    }

    if (e.blur_sigma > 0.0) {
        auto taps = gaussian_taps(e.blur_sigma);
        blur_axis(out.voxels, W, H, D, 0, taps);
        blur_axis(out.voxels, W, H, D, 1, taps);
        if (D > 1) blur_axis(out.voxels, W, H, D, 2, taps);
    }

    if (e.noise_sigma > 0.0) {
        for (auto& f : out.voxels) f = static_cast<float>(f + rng.normal(0.0, e.noise_sigma));
    }
    return out;
}

Manifest generate_cohort(const CohortConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(fs::path(out_dir) / "volumes");

    Manifest m;
    m.dir = out_dir;

    for (size_t si = 0; si < cfg.sites.size(); ++si) {
        const auto& site = cfg.sites[si];
        const int n = site.n_subjects;

        // stratified 70/10/20 split over a site-local shuffle
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        Rng split_rng = Rng(cfg.seed).child(0x5171, si);
        split_rng.shuffle(order);
        const int n_train = 7 * n / 10;
        const int n_val = n / 10;
        std::vector<std::string> split_of(n);
        for (int i = 0; i < n; ++i)
            split_of[order[i]] = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");

        for (int j = 0; j < n; ++j) {
            const uint64_t subject_seed = derive_seed(cfg.seed, si + 1, j + 1);
            Rng subj_rng = Rng(subject_seed).child(0);
            const double age = subj_rng.uniform(cfg.age_range[0], cfg.age_range[1]);
            const int label = subj_rng.bernoulli(cfg.disease_prevalence) ? 1 : 0;

            Volume anat = generate_anatomy(cfg, subject_seed, age, label);
            Rng noise_rng = Rng(subject_seed).child(3);
            Volume vol = apply_site_effect(anat, site.effect, noise_rng);

            char idbuf[64];
            std::snprintf(idbuf, sizeof idbuf, "%s_%04d", site.name.c_str(), j);
            vol.subject_id = idbuf;
            const std::string rel = std::string("volumes/") + idbuf + ".json";
            save_volume(vol, (fs::path(out_dir) / rel).string());

            ManifestRecord r;
            r.subject_id = idbuf;
            r.volume_path = rel;
            r.site_name = site.name;
            r.age = age;
            r.label = label;
            r.split = split_of[j];
            m.records.push_back(std::move(r));
        }
    }
    m.reindex_sites();
    m.save((fs::path(out_dir) / "manifest.csv").string());
    return m;
}

} // namespace canmap
