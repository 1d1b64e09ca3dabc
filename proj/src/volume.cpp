#include "canmap/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "canmap/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace canmap {

namespace {

std::string stem_of(const std::string& path) {
    if (path.size() > 5 && path.ends_with(".json")) return path.substr(0, path.size() - 5);
    if (path.size() > 4 && path.ends_with(".raw")) return path.substr(0, path.size() - 4);
    return path;
}

void byteswap_f32(std::vector<float>& v) {
    for (float& f : v) {
        uint32_t u;
        std::memcpy(&u, &f, 4);
        u = __builtin_bswap32(u);
        std::memcpy(&f, &u, 4);
    }
}

constexpr bool host_is_le = std::endian::native == std::endian::little;

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

Volume load_volume(const std::string& path) {
    const std::string stem = stem_of(path);
    const std::string header_path = stem + ".json";
    const std::string raw_path = stem + ".raw";

    std::ifstream hf(header_path);
    if (!hf) throw std::runtime_error("cannot open volume header: " + header_path);
    json h;
    try {
        hf >> h;
    } catch (const json::exception& e) {
        throw std::runtime_error("bad volume header " + header_path + ": " + e.what());
    }

    Volume v;
    v.width = h.at("width").get<int>();
    v.height = h.at("height").get<int>();
    v.depth = h.at("depth").get<int>();
    if (v.width < 1 || v.height < 1 || v.depth < 1)
        throw std::runtime_error("non-positive dimensions in " + header_path);
    const std::string dtype = h.at("dtype").get<std::string>();
    if (dtype != "f32le") throw std::runtime_error("unsupported dtype '" + dtype + "' in " + header_path);
    if (h.contains("spacing")) {
        auto sp = h["spacing"].get<std::vector<double>>();
        if (sp.size() != 3) throw std::runtime_error("spacing must have 3 entries: " + header_path);
        v.spacing = {sp[0], sp[1], sp[2]};
        v.has_spacing = true;
    }
    if (h.contains("intensity_space")) v.intensity_space = h["intensity_space"].get<std::string>();

    std::ifstream rf(raw_path, std::ios::binary | std::ios::ate);
    if (!rf) throw std::runtime_error("cannot open volume payload: " + raw_path);
    const int64_t expected = v.size() * 4;
    const int64_t actual = static_cast<int64_t>(rf.tellg());
    if (actual != expected)
        throw std::runtime_error("size mismatch in " + raw_path + ": header declares " +
                                 std::to_string(expected) + " bytes, payload has " +
                                 std::to_string(actual));
    rf.seekg(0);
    v.voxels.resize(static_cast<size_t>(v.size()));
    rf.read(reinterpret_cast<char*>(v.voxels.data()), expected);
    if (!rf) throw std::runtime_error("short read from " + raw_path);
    if constexpr (!host_is_le) byteswap_f32(v.voxels);

    for (float f : v.voxels)
        if (!std::isfinite(f))
            throw std::runtime_error("non-finite intensity in volume " + stem +
                                     (v.subject_id.empty() ? "" : " (subject " + v.subject_id + ")"));
    return v;
}

void save_volume(const Volume& v, const std::string& path) {
    if (v.size() != static_cast<int64_t>(v.voxels.size()))
        throw std::runtime_error("volume voxel count does not match dimensions");
    const std::string stem = stem_of(path);
    json h;
    h["width"] = v.width;
    h["height"] = v.height;
    h["depth"] = v.depth;
    h["dtype"] = "f32le";
    if (v.has_spacing) h["spacing"] = {v.spacing[0], v.spacing[1], v.spacing[2]};
    if (v.intensity_space != "raw") h["intensity_space"] = v.intensity_space;

    std::ofstream hf(stem + ".json");
    if (!hf) throw std::runtime_error("cannot write volume header: " + stem + ".json");
    hf << h.dump(2) << "\n";
    if (!hf.flush()) throw std::runtime_error("failed writing header: " + stem + ".json");

    std::ofstream rf(stem + ".raw", std::ios::binary | std::ios::trunc);
    if (!rf) throw std::runtime_error("cannot write volume payload: " + stem + ".raw");
    if constexpr (host_is_le) {
        rf.write(reinterpret_cast<const char*>(v.voxels.data()),
                 static_cast<std::streamsize>(v.voxels.size() * 4));
    } else {
        std::vector<float> tmp = v.voxels;
        byteswap_f32(tmp);
        rf.write(reinterpret_cast<const char*>(tmp.data()),
                 static_cast<std::streamsize>(tmp.size() * 4));
    }
    if (!rf.flush()) throw std::runtime_error("failed writing payload: " + stem + ".raw");
}

SiteCode one_hot(int k, int K) {
    if (K < 1) throw std::invalid_argument("one_hot: K must be >= 1");
    if (k < 0 || k >= K)
        throw std::invalid_argument("one_hot: index " + std::to_string(k) + " out of range for K=" +
                                    std::to_string(K));
    return SiteCode{k, K};
}

void Manifest::reindex_sites() {
    site_names.clear();
    for (auto& r : records) {
        auto it = std::find(site_names.begin(), site_names.end(), r.site_name);
        if (it == site_names.end()) {
            r.site_index = static_cast<int>(site_names.size());
            site_names.push_back(r.site_name);
        } else {
            r.site_index = static_cast<int>(it - site_names.begin());
        }
    }
}

Manifest Manifest::load(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw std::runtime_error("cannot open manifest: " + csv_path);

    Manifest m;
    m.dir = fs::path(csv_path).parent_path().string();

    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty manifest: " + csv_path);
    // strip a potential trailing \r
    auto header = split_csv_line(line);
    const std::vector<std::string> expected = {"subject_id", "volume_path", "site",
                                               "age",        "label",       "split"};
    if (header != expected)
        throw std::runtime_error("manifest header mismatch in " + csv_path +
                                 " (expected subject_id,volume_path,site,age,label,split)");

    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 6)
            throw std::runtime_error(csv_path + ":" + std::to_string(lineno) +
                                     ": expected 6 fields, got " + std::to_string(fields.size()));
        ManifestRecord r;
        r.subject_id = fields[0];
        r.volume_path = fields[1];
        r.site_name = fields[2];
        if (!fields[3].empty()) r.age = std::stod(fields[3]);
        if (!fields[4].empty()) r.label = std::stoi(fields[4]);
        r.split = fields[5];
        if (r.split != "train" && r.split != "val" && r.split != "test")
            throw std::runtime_error(csv_path + ":" + std::to_string(lineno) + ": bad split '" +
                                     r.split + "'");
        m.records.push_back(std::move(r));
    }

    // subject ids unique
    {
        std::vector<std::string> ids;
        ids.reserve(m.records.size());
        for (auto& r : m.records) ids.push_back(r.subject_id);
        std::sort(ids.begin(), ids.end());
        auto dup = std::adjacent_find(ids.begin(), ids.end());
        if (dup != ids.end())
            throw std::runtime_error("duplicate subject_id '" + *dup + "' in " + csv_path);
    }
    // referenced files exist
    for (auto& r : m.records) {
        std::string p = m.resolve(r);
        if (!fs::exists(stem_of(p) + ".json") || !fs::exists(stem_of(p) + ".raw"))
            throw std::runtime_error("manifest references missing volume: " + p + " (subject " +
                                     r.subject_id + ")");
    }
    m.reindex_sites();
    return m;
}

void Manifest::save(const std::string& csv_path) const {
    std::ofstream f(csv_path);
    if (!f) throw std::runtime_error("cannot write manifest: " + csv_path);
    f << "subject_id,volume_path,site,age,label,split\n";
    for (const auto& r : records) {
        f << r.subject_id << ',' << r.volume_path << ',' << r.site_name << ',';
        if (r.age) {
            std::ostringstream os;
            os << *r.age;
            f << os.str();
        }
        f << ',';
        if (r.label) f << *r.label;
        f << ',' << r.split << '\n';
    }
    if (!f.flush()) throw std::runtime_error("failed writing manifest: " + csv_path);
}

std::string Manifest::resolve(const ManifestRecord& r) const {
    fs::path p(r.volume_path);
    if (p.is_absolute() || dir.empty()) return r.volume_path;
    return (fs::path(dir) / p).string();
}

Volume Manifest::load_record(const ManifestRecord& r) const {
    Volume v;
    try {
        v = load_volume(resolve(r));
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string(e.what()) + " (subject " + r.subject_id + ")");
    }
    v.subject_id = r.subject_id;
    v.site = r.site_index;
    return v;
}

int Manifest::site_index_of(const std::string& name) const {
    auto it = std::find(site_names.begin(), site_names.end(), name);
    return it == site_names.end() ? -1 : static_cast<int>(it - site_names.begin());
}

std::vector<const ManifestRecord*> Manifest::rows(const std::string& site_name,
                                                  const std::string& split) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records) {
        if (!site_name.empty() && r.site_name != site_name) continue;
        if (!split.empty() && r.split != split) continue;
        out.push_back(&r);
    }
    return out;
}

std::vector<QCFlag> qc_flag(const Manifest& m, double threshold) {
    struct Stat {
        std::string subject;
        double mean, sd;
    };
    std::map<int, std::vector<Stat>> by_site;
    for (const auto& r : m.records) {
        Volume v = m.load_record(r);
        double s = 0.0, sq = 0.0;
        for (float x : v.voxels) {
            s += x;
            sq += static_cast<double>(x) * x;
        }
        double n = static_cast<double>(v.voxels.size());
        double mean = s / n;
        double var = std::max(0.0, sq / n - mean * mean);
        by_site[r.site_index].push_back({r.subject_id, mean, std::sqrt(var)});
    }

    std::vector<QCFlag> out;
    for (auto& [site, stats] : by_site) {
        if (stats.size() < 3) {
            warn("qc: site '" + m.site_names[site] + "' has " + std::to_string(stats.size()) +
                 " volumes (< 3), skipping outlier detection");
            continue;
        }
        auto zscores = [&](auto get, const char* name) {
            double s = 0.0, sq = 0.0;
            for (auto& st : stats) {
                double v = get(st);
                s += v;
                sq += v * v;
            }
            double n = static_cast<double>(stats.size());
            double mu = s / n;
            double sd = std::sqrt(std::max(0.0, sq / n - mu * mu));
            for (auto& st : stats) {
                double z = sd > 0 ? (get(st) - mu) / sd : 0.0;
                out.push_back({st.subject, name, z, std::abs(z) > threshold});
            }
        };
        zscores([](const Stat& s) { return s.mean; }, "mean");
        zscores([](const Stat& s) { return s.sd; }, "std");
    }
    return out;
}

} // namespace canmap
