#include "canmap/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

using nlohmann::json;

namespace canmap {

void write_checkpoint(const std::string& path, const std::string& kind, const json& meta,
                      const std::vector<const nn::Param<float>*>& params) {
    json header;
    header["kind"] = kind;
    header["version"] = 1;
    header["meta"] = meta;
    header["params"] = json::array();
    uint64_t offset = 0;
    for (const auto* p : params) {
        header["params"].push_back({{"name", p->name}, {"shape", p->v.shape}, {"offset", offset}});
        offset += static_cast<uint64_t>(p->v.size()) * 4;
    }
    const std::string hs = header.dump();
    if (hs.size() > 0xffffffffull) throw std::runtime_error("checkpoint header too large");

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(kCheckpointMagic, 8);
    const uint32_t len = static_cast<uint32_t>(hs.size());
    unsigned char lenb[4] = {static_cast<unsigned char>(len & 0xff),
                             static_cast<unsigned char>((len >> 8) & 0xff),
                             static_cast<unsigned char>((len >> 16) & 0xff),
                             static_cast<unsigned char>((len >> 24) & 0xff)};
    f.write(reinterpret_cast<char*>(lenb), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto* p : params)
        f.write(reinterpret_cast<const char*>(p->v.ptr()),
                static_cast<std::streamsize>(p->v.size() * 4));
    if (!f.flush()) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    const int64_t file_size = static_cast<int64_t>(f.tellg());
    f.seekg(0);

    char magic[8];
    if (file_size < 12 || !f.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a CANMAP01 checkpoint: " + path);
    unsigned char lenb[4];
    f.read(reinterpret_cast<char*>(lenb), 4);
    const uint32_t len = uint32_t(lenb[0]) | (uint32_t(lenb[1]) << 8) | (uint32_t(lenb[2]) << 16) |
                         (uint32_t(lenb[3]) << 24);
    if (12 + int64_t(len) > file_size)
        throw std::runtime_error("truncated checkpoint header: " + path);
    std::string hs(len, '\0');
    f.read(hs.data(), len);

    Checkpoint c;
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw std::runtime_error("bad checkpoint header in " + path + ": " + e.what());
    }
    c.kind = header.at("kind").get<std::string>();
    c.version = header.at("version").get<int>();
    if (c.version != 1)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(c.version) +
                                 " in " + path);
    c.meta = header.value("meta", json::object());

    uint64_t total = 0;
    for (const auto& e : header.at("params")) {
        CheckpointEntry ce;
        ce.name = e.at("name").get<std::string>();
        ce.shape = e.at("shape").get<std::vector<int>>();
        ce.offset = e.at("offset").get<uint64_t>();
        uint64_t count = 1;
        for (int d : ce.shape) count *= static_cast<uint64_t>(d);
        total = std::max(total, ce.offset + count * 4);
        c.entries.push_back(std::move(ce));
    }
    if (12 + int64_t(len) + int64_t(total) > file_size)
        throw std::runtime_error("truncated checkpoint payload: " + path);
    c.blob.resize(total / 4);
    f.read(reinterpret_cast<char*>(c.blob.data()), static_cast<std::streamsize>(total));
    if (!f) throw std::runtime_error("short read from checkpoint: " + path);
    return c;
}

void Checkpoint::restore(const std::vector<nn::Param<float>*>& params) const {
    if (params.size() != entries.size())
        throw std::runtime_error("checkpoint parameter count mismatch: file has " +
                                 std::to_string(entries.size()) + ", model has " +
                                 std::to_string(params.size()));
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    for (auto* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint is missing parameter '" + p->name + "'");
        const CheckpointEntry& e = *it->second;
        if (e.shape != p->v.shape)
            throw std::runtime_error("checkpoint shape mismatch for '" + p->name + "': file " +
                                     shape_str(e.shape) + ", model " + shape_str(p->v.shape));
        std::memcpy(p->v.ptr(), blob.data() + e.offset / 4, p->v.size() * 4);
    }
}

} // namespace canmap
