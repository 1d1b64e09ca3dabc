#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "canmap/synth.hpp"
#include "support.hpp"

using namespace canmap;
using testsup::TempDir;

namespace {

CohortConfig desk_config() {
    CohortConfig c;
    c.seed = 2024;
    c.image_size = 48;
    c.depth = 10;
    c.age_range = {20.0, 80.0};
    return c;
}

} // namespace

TEST_CASE("generate_anatomy is deterministic in (seed, age, label)") {
    auto cfg = desk_config();
    Volume a = generate_anatomy(cfg, 777, 42.0, 0);
    Volume b = generate_anatomy(cfg, 777, 42.0, 0);
    CHECK(a.voxels == b.voxels);
    Volume c = generate_anatomy(cfg, 778, 42.0, 0);
    CHECK(a.voxels != c.voxels);
}

TEST_CASE("cortical band is strictly thicker at the young end") {
    auto cfg = desk_config();
    for (uint64_t seed : {11u, 12u, 13u, 14u}) {
        Volume young = generate_anatomy(cfg, seed, cfg.age_range[0], 0);
        Volume old = generate_anatomy(cfg, seed, cfg.age_range[1], 0);
        double ty = testsup::band_thickness(young);
        double to = testsup::band_thickness(old);
        CHECK(ty > to);
        CHECK(ty > to + 1.0); // clearly separated, not a rounding artifact
    }
}

TEST_CASE("label only changes voxels inside the lesion blobs") {
    auto cfg = desk_config();
    Volume healthy = generate_anatomy(cfg, 31337, 55.0, 0);
    Volume lesioned = generate_anatomy(cfg, 31337, 55.0, 1);
    REQUIRE(healthy.voxels.size() == lesioned.voxels.size());
    int64_t diff = 0;
    for (size_t i = 0; i < healthy.voxels.size(); ++i) {
        if (healthy.voxels[i] != lesioned.voxels[i]) {
            ++diff;
            CHECK(lesioned.voxels[i] < healthy.voxels[i]); // hypointense
        }
    }
    CHECK(diff > 0);
    CHECK(diff < int64_t(healthy.voxels.size()) / 20); // focal, not global
}

TEST_CASE("apply_site_effect: identity effect is bitwise") {
    auto cfg = desk_config();
    Volume v = generate_anatomy(cfg, 5, 30.0, 0);
    Rng rng(1);
    Volume out = apply_site_effect(v, SiteEffect{}, rng);
    CHECK(out.voxels == v.voxels);
}

TEST_CASE("apply_site_effect: pure gain on a constant volume") {
    Volume v;
    v.width = v.height = 4;
    v.depth = 2;
    v.voxels.assign(32, 0.4f);
    SiteEffect e;
    e.gain = 2.0;
    Rng rng(1);
    Volume out = apply_site_effect(v, e, rng);
    for (float f : out.voxels) CHECK(f == doctest::Approx(0.8f));
}

TEST_CASE("apply_site_effect matches a scalar reference loop on a ramp") {
    Volume v;
    v.width = 16;
    v.height = 8;
    v.depth = 4;
    v.voxels.resize(static_cast<size_t>(v.size()));
    for (int64_t i = 0; i < v.size(); ++i)
        v.voxels[i] = static_cast<float>(i) / static_cast<float>(v.size());

    SiteEffect e;
    e.gamma = 0.8;
    e.gain = 1.3;
    e.bias_amp = 0.15;
    Rng rng(1);
    Volume out = apply_site_effect(v, e, rng);

    // independent scalar oracle, straight from the definition
    const double inv2w2 = 1.0 / (2.0 * e.bias_width * e.bias_width);
    for (int z = 0; z < v.depth; ++z)
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x) {
                double px = (x + 0.5) / v.width, py = (y + 0.5) / v.height,
                       pz = (z + 0.5) / v.depth;
                double dx = px - e.bias_center[0], dy = py - e.bias_center[1],
                       dz = pz - e.bias_center[2];
                double bias = 1.0 + e.bias_amp * std::exp(-(dx * dx + dy * dy + dz * dz) * inv2w2);
                double want = e.gain * bias * std::pow((double)v.at(x, y, z), e.gamma);
                want = std::clamp(want, 0.0, 4.0);
                CHECK(out.at(x, y, z) == doctest::Approx(want).epsilon(1e-6));
            }
}

TEST_CASE("noise-free site effect is invertible on the anatomy range") {
    auto cfg = desk_config();
    Volume v = generate_anatomy(cfg, 123, 60.0, 0);
    SiteEffect e;
    e.gain = 1.3;
    e.gamma = 0.8;
    e.bias_amp = 0.2;
    Rng rng(1);
    Volume out = apply_site_effect(v, e, rng);

    const double inv2w2 = 1.0 / (2.0 * e.bias_width * e.bias_width);
    for (int z = 0; z < v.depth; ++z)
        for (int y = 0; y < v.height; ++y)
            for (int x = 0; x < v.width; ++x) {
                double px = (x + 0.5) / v.width, py = (y + 0.5) / v.height,
                       pz = (z + 0.5) / v.depth;
                double dx = px - e.bias_center[0], dy = py - e.bias_center[1],
                       dz = pz - e.bias_center[2];
                double bias = 1.0 + e.bias_amp * std::exp(-(dx * dx + dy * dy + dz * dz) * inv2w2);
                double recovered = std::pow(out.at(x, y, z) / (e.gain * bias), 1.0 / e.gamma);
                CHECK(std::abs(recovered - v.at(x, y, z)) < 1e-5);
            }
}

TEST_CASE("apply_site_effect rejects invalid parameters") {
    Volume v;
    v.width = v.height = v.depth = 2;
    v.voxels.assign(8, 0.5f);
    Rng rng(1);
    SiteEffect bad;
    bad.gain = 0.0;
    CHECK_THROWS_AS(apply_site_effect(v, bad, rng), std::invalid_argument);
    bad = SiteEffect{};
    bad.gamma = -1.0;
    CHECK_THROWS_AS(apply_site_effect(v, bad, rng), std::invalid_argument);
    bad = SiteEffect{};
    bad.noise_sigma = -0.1;
    CHECK_THROWS_AS(apply_site_effect(v, bad, rng), std::invalid_argument);
}

TEST_CASE("generate_cohort: counts, split sizes, determinism") {
    auto cfg = desk_config();
    cfg.image_size = 24;
    cfg.depth = 6;
    cfg.sites.push_back({"ref", SiteEffect{}, 10});
    SiteEffect shifted;
    shifted.gain = 1.2;
    cfg.sites.push_back({"sat", shifted, 10});

    TempDir td1("cohort1"), td2("cohort2");
    Manifest m1 = generate_cohort(cfg, td1.str());
    Manifest m2 = generate_cohort(cfg, td2.str());

    CHECK(m1.records.size() == 20);
    int files = 0;
    for (auto& p : std::filesystem::directory_iterator(td1 / "volumes"))
        if (p.path().extension() == ".raw") ++files;
    CHECK(files == 20);

    // stratified split oracle: per site floor(0.7n)/floor(0.1n)/rest
    for (const auto& site : {"ref", "sat"}) {
        int tr = 0, va = 0, te = 0;
        for (auto& r : m1.records)
            if (r.site_name == site) {
                tr += r.split == "train";
                va += r.split == "val";
                te += r.split == "test";
            }
        CHECK(tr == 7);
        CHECK(va == 1);
        CHECK(te == 2);
    }

    // identical manifests and byte-identical volumes across runs
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(f), {});
    };
    CHECK(slurp(td1 / "manifest.csv") == slurp(td2 / "manifest.csv"));
    for (auto& r : m1.records)
        CHECK(slurp(td1 / r.volume_path) == slurp(td2 / r.volume_path));
}

TEST_CASE("age signal is linearly recoverable from band thickness") {
    auto cfg = desk_config();
    std::vector<double> ages, widths;
    Rng rng(4242);
    for (int i = 0; i < 60; ++i) {
        double age = rng.uniform(cfg.age_range[0], cfg.age_range[1]);
        Volume v = generate_anatomy(cfg, derive_seed(cfg.seed, 9, i), age, 0);
        ages.push_back(age);
        widths.push_back(testsup::band_thickness(v));
    }
    double r = testsup::pearson_oracle(ages, widths);
    CHECK(std::abs(r) > 0.9); // thickness falls with age, so r is negative
    CHECK(r < 0);
}

TEST_CASE("cohort config round-trips through json") {
    auto cfg = desk_config();
    cfg.disease_prevalence = 0.4;
    cfg.sites.push_back({"a", SiteEffect{}, 3});
    SiteEffect e;
    e.gamma = 0.75;
    e.blur_sigma = 0.8;
    cfg.sites.push_back({"b", e, 5});
    auto j = cfg.to_json();
    auto back = CohortConfig::from_json(j);
    CHECK(back.seed == cfg.seed);
    CHECK(back.sites.size() == 2);
    CHECK(back.sites[1].effect.gamma == 0.75);
    CHECK(back.sites[1].effect.blur_sigma == 0.8);
    CHECK(back.disease_prevalence == 0.4);
}
