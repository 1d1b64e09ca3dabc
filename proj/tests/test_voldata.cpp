#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "canmap/rng.hpp"
#include "canmap/slices.hpp"
#include "canmap/volume.hpp"
#include "support.hpp"

using namespace canmap;
using testsup::TempDir;

namespace {

Volume make_volume(int w, int h, int d, std::function<float(int, int, int)> f) {
    Volume v;
    v.width = w;
    v.height = h;
    v.depth = d;
    v.voxels.resize(static_cast<size_t>(v.size()));
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) v.at(x, y, z) = f(x, y, z);
    return v;
}

// oracle for the centered window: the n indices closest to the volume
// center, ties broken toward the inferior (lower z) side
std::vector<int> window_oracle(int depth, int n) {
    std::vector<int> idx(depth);
    std::iota(idx.begin(), idx.end(), 0);
    const double center = (depth - 1) / 2.0;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        double da = std::abs(a - center), db = std::abs(b - center);
        if (da != db) return da < db;
        return a < b;
    });
    idx.resize(std::min(depth, n));
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace

TEST_CASE("load_volume: voxel order is x-fastest") {
    TempDir td("vol_order");
    Volume v = make_volume(2, 2, 2, [](int x, int y, int z) { return float(x + 2 * y + 4 * z); });
    save_volume(v, (td / "v.json").string());
    Volume r = load_volume((td / "v.json").string());
    CHECK(r.at(1, 1, 1) == 7.0f);
    CHECK(r.at(1, 0, 0) == 1.0f);
    CHECK(r.at(0, 1, 0) == 2.0f);
    CHECK(r.at(0, 0, 1) == 4.0f);
}

TEST_CASE("load_volume: payload shorter than header claim is rejected") {
    TempDir td("vol_short");
    Volume v = make_volume(4, 4, 2, [](int, int, int) { return 1.f; });
    save_volume(v, (td / "v.json").string());
    // truncate the payload by 4 bytes
    auto raw = (td / "v.raw").string();
    std::filesystem::resize_file(raw, std::filesystem::file_size(raw) - 4);
    CHECK_THROWS_WITH_AS(load_volume((td / "v.json").string()),
                         doctest::Contains("size mismatch"), std::runtime_error);
}

TEST_CASE("load_volume: missing file and non-finite values are rejected") {
    TempDir td("vol_bad");
    CHECK_THROWS_AS(load_volume((td / "nope.json").string()), std::runtime_error);

    Volume v = make_volume(2, 2, 1, [](int, int, int) { return 0.5f; });
    v.voxels[1] = std::numeric_limits<float>::quiet_NaN();
    save_volume(v, (td / "nan.json").string());
    CHECK_THROWS_WITH_AS(load_volume((td / "nan.json").string()),
                         doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("save/load round-trip is bit-exact on random volumes") {
    TempDir td("vol_rt");
    Rng rng(99);
    for (int t = 0; t < 5; ++t) {
        int w = 1 + int(rng.index(9)), h = 1 + int(rng.index(9)), d = 1 + int(rng.index(5));
        Volume v = make_volume(w, h, d, [&](int, int, int) {
            return static_cast<float>(rng.uniform(-1e6, 1e6));
        });
        save_volume(v, (td / ("r" + std::to_string(t) + ".json")).string());
        Volume r = load_volume((td / ("r" + std::to_string(t) + ".json")).string());
        CHECK(r.voxels == v.voxels);
        CHECK(r.width == v.width);
        CHECK(r.depth == v.depth);
    }
    // degenerate shapes round-trip too
    Volume zero = make_volume(3, 3, 3, [](int, int, int) { return 0.f; });
    save_volume(zero, (td / "zero.json").string());
    CHECK(load_volume((td / "zero.json").string()).voxels == zero.voxels);
    Volume thin = make_volume(5, 4, 1, [](int x, int y, int) { return float(x * y); });
    thin.spacing = {0.5, 0.5, 2.0};
    thin.has_spacing = true;
    save_volume(thin, (td / "thin.json").string());
    Volume rthin = load_volume((td / "thin.json").string());
    CHECK(rthin.voxels == thin.voxels);
    CHECK(rthin.has_spacing);
    CHECK(rthin.spacing[2] == 2.0);
}

TEST_CASE("middle window matches the closest-to-center oracle") {
    auto w = middle_window(182, 80);
    auto oracle = window_oracle(182, 80);
    CHECK(w.first == 51);
    CHECK(w.second == 80);
    CHECK(oracle.front() == 51);
    CHECK(oracle.back() == 130);

    for (int depth : {1, 2, 3, 7, 80, 81, 101, 182}) {
        for (int n : {1, 2, 3, 80}) {
            auto [z0, count] = middle_window(depth, n);
            auto o = window_oracle(depth, n);
            REQUIRE(count == int(o.size()));
            for (int i = 0; i < count; ++i) CHECK(z0 + i == o[i]);
        }
    }
}

TEST_CASE("extract_middle_slices: exact fit and degenerate depth") {
    Volume v80 = make_volume(8, 8, 80, [](int x, int, int z) { return float(x + z); });
    auto s = extract_middle_slices(v80, 80, 8);
    CHECK(s.size() == 80);
    CHECK(s.front().z == 0);
    CHECK(s.back().z == 79);

    testsup::WarnCapture wc;
    Volume v3 = make_volume(8, 8, 3, [](int x, int, int z) { return float(x + z); });
    auto s3 = extract_middle_slices(v3, 80, 8);
    CHECK(s3.size() == 3);
    CHECK(wc.messages.size() == 1);
}

TEST_CASE("slice extraction is deterministic and contiguous in z") {
    Volume v = make_volume(8, 8, 20, [](int x, int y, int z) { return float(x + y * z); });
    auto a = extract_middle_slices(v, 6, 8);
    auto b = extract_middle_slices(v, 6, 8);
    REQUIRE(a.size() == 6);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].pixels.data == b[i].pixels.data);
        if (i) CHECK(a[i].z == a[i - 1].z + 1);
    }
}

TEST_CASE("normalize_slice: percentile mapping and clamping") {
    // volume values 0..999 over a 10x10x10 grid
    Volume v = make_volume(10, 10, 10,
                           [](int x, int y, int z) { return float(x + 10 * y + 100 * z); });
    // independent percentile oracle: sorted data, linear interpolation
    std::vector<float> sorted(v.voxels);
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&](double p) {
        double pos = p / 100.0 * (sorted.size() - 1);
        size_t lo = size_t(pos);
        return sorted[lo] + (pos - lo) * (sorted[lo + 1] - sorted[lo]);
    };
    auto sc = volume_scale(v);
    CHECK(sc.p1 == doctest::Approx(pct(1)));
    CHECK(sc.p99 == doctest::Approx(pct(99)));

    auto slices = extract_middle_slices(v, 10, 10);
    float lo = 2.f, hi = -2.f;
    for (auto& s : slices)
        for (float p : s.pixels.data) {
            lo = std::min(lo, p);
            hi = std::max(hi, p);
            CHECK(p >= -1.f);
            CHECK(p <= 1.f);
        }
    CHECK(lo == -1.f); // values below p1 clamp to -1
    CHECK(hi == 1.f);
}

TEST_CASE("normalize_slice: constant volume has zero dynamic range") {
    Volume v = make_volume(6, 6, 6, [](int, int, int) { return 4.2f; });
    CHECK_THROWS_WITH_AS(extract_middle_slices(v, 4, 6), doctest::Contains("zero dynamic range"),
                         std::runtime_error);
}

TEST_CASE("normalization is invariant to positive affine rescaling") {
    Rng rng(1234);
    Volume v = make_volume(12, 12, 8, [&](int, int, int) {
        return static_cast<float>(rng.uniform(100.0, 900.0));
    });
    for (auto [a, b] : {std::pair{3.5, 200.0}, std::pair{0.02, -7.0}}) {
        Volume w = v;
        for (auto& f : w.voxels) f = static_cast<float>(a * f + b);
        auto s1 = extract_middle_slices(v, 8, 12);
        auto s2 = extract_middle_slices(w, 8, 12);
        REQUIRE(s1.size() == s2.size());
        for (size_t i = 0; i < s1.size(); ++i)
            for (int64_t j = 0; j < s1[i].pixels.size(); ++j)
                CHECK(s1[i].pixels[j] == doctest::Approx(s2[i].pixels[j]).epsilon(1e-6));
    }
}

TEST_CASE("one_hot encodings") {
    auto c = one_hot(2, 5);
    CHECK(c.encoding() == std::vector<float>{0, 0, 1, 0, 0});
    CHECK(one_hot(0, 1).encoding() == std::vector<float>{1});
    CHECK_THROWS_AS(one_hot(5, 5), std::invalid_argument);
    CHECK_THROWS_AS(one_hot(-1, 3), std::invalid_argument);

    // exactly one nonzero entry summing to 1, for arbitrary k < K
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        int K = 1 + int(rng.index(9));
        int k = int(rng.index(K));
        auto e = one_hot(k, K).encoding();
        CHECK(std::accumulate(e.begin(), e.end(), 0.f) == 1.f);
        CHECK(std::count(e.begin(), e.end(), 1.f) == 1);
        CHECK(e[k] == 1.f);
    }
}

namespace {

Manifest write_cohort_of_volumes(const TempDir& td, const std::string& site,
                                 const std::vector<float>& scales) {
    Manifest m;
    m.dir = td.str();
    Rng rng(17);
    for (size_t i = 0; i < scales.size(); ++i) {
        Volume v = make_volume(8, 8, 4, [&](int x, int y, int z) {
            return scales[i] * (1.0f + x + y + z * 0.5f);
        });
        std::string id = site + "_" + std::to_string(i);
        std::string rel = id + ".json";
        save_volume(v, (td / rel).string());
        ManifestRecord r;
        r.subject_id = id;
        r.volume_path = rel;
        r.site_name = site;
        r.split = "train";
        m.records.push_back(r);
    }
    m.reindex_sites();
    return m;
}

} // namespace

TEST_CASE("qc_flag: identical volumes produce no flags") {
    TempDir td("qc_same");
    auto m = write_cohort_of_volumes(td, "a", std::vector<float>(5, 1.0f));
    auto flags = qc_flag(m);
    CHECK(flags.size() == 10); // mean + std per volume
    for (auto& f : flags) {
        CHECK(f.z == 0.0);
        CHECK(!f.flagged);
    }
}

TEST_CASE("qc_flag: a x100 outlier among 20 normals is flagged") {
    TempDir td("qc_out");
    std::vector<float> scales(21, 1.0f);
    scales[7] = 100.0f;
    auto m = write_cohort_of_volumes(td, "a", scales);
    auto flags = qc_flag(m);

    // direct z-score oracle on the mean statistic
    std::vector<double> means;
    for (auto& r : m.records) {
        Volume v = m.load_record(r);
        double s = 0;
        for (float f : v.voxels) s += f;
        means.push_back(s / v.voxels.size());
    }
    double mu = 0, sq = 0;
    for (double x : means) mu += x;
    mu /= means.size();
    for (double x : means) sq += (x - mu) * (x - mu);
    double sd = std::sqrt(sq / means.size());
    double z_expected = (means[7] - mu) / sd;
    REQUIRE(std::abs(z_expected) > 3.0);

    bool found = false;
    for (auto& f : flags) {
        if (f.subject_id == "a_7" && f.statistic == "mean") {
            found = true;
            CHECK(f.flagged);
            CHECK(f.z == doctest::Approx(z_expected).epsilon(1e-9));
        } else if (f.subject_id != "a_7") {
            CHECK(!f.flagged);
        }
    }
    CHECK(found);
}

TEST_CASE("qc_flag: sites with fewer than 3 volumes are skipped with a warning") {
    TempDir td("qc_small");
    auto m = write_cohort_of_volumes(td, "tiny", {1.0f, 2.0f});
    testsup::WarnCapture wc;
    auto flags = qc_flag(m);
    CHECK(flags.empty());
    REQUIRE(wc.messages.size() == 1);
    CHECK(wc.messages[0].find("tiny") != std::string::npos);
}

TEST_CASE("manifest: duplicate subjects and missing volumes are rejected") {
    TempDir td("man_bad");
    Volume v = make_volume(2, 2, 2, [](int, int, int) { return 1.f; });
    save_volume(v, (td / "v0.json").string());
    {
        std::ofstream f(td / "dup.csv");
        f << "subject_id,volume_path,site,age,label,split\n";
        f << "s1,v0.json,a,50,,train\n";
        f << "s1,v0.json,a,60,,train\n";
    }
    CHECK_THROWS_WITH_AS(Manifest::load((td / "dup.csv").string()),
                         doctest::Contains("duplicate"), std::runtime_error);
    {
        std::ofstream f(td / "missing.csv");
        f << "subject_id,volume_path,site,age,label,split\n";
        f << "s1,gone.json,a,50,,train\n";
    }
    CHECK_THROWS_WITH_AS(Manifest::load((td / "missing.csv").string()),
                         doctest::Contains("missing volume"), std::runtime_error);
}

TEST_CASE("manifest: sites map to dense first-appearance indices") {
    TempDir td("man_sites");
    Volume v = make_volume(2, 2, 2, [](int, int, int) { return 1.f; });
    save_volume(v, (td / "v0.json").string());
    {
        std::ofstream f(td / "m.csv");
        f << "subject_id,volume_path,site,age,label,split\n";
        f << "s1,v0.json,berlin,41.5,1,train\n";
        f << "s2,v0.json,oslo,,0,val\n";
        f << "s3,v0.json,berlin,63,,test\n";
    }
    auto m = Manifest::load((td / "m.csv").string());
    CHECK(m.site_names == std::vector<std::string>{"berlin", "oslo"});
    CHECK(m.records[0].site_index == 0);
    CHECK(m.records[1].site_index == 1);
    CHECK(m.records[2].site_index == 0);
    CHECK(m.records[0].age == 41.5);
    CHECK(!m.records[1].age.has_value());
    CHECK(m.records[1].label == 0);
    CHECK(!m.records[2].label.has_value());

    // round-trips through save
    m.save((td / "m2.csv").string());
    auto m2 = Manifest::load((td / "m2.csv").string());
    CHECK(m2.records.size() == 3);
    CHECK(m2.records[0].age == 41.5);
}
