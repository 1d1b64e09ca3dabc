#pragma once

// CANMAP01 container: 8 magic bytes, a length-prefixed JSON header carrying
// the model description and a parameter manifest (name, shape, byte offset),
// then the parameter blobs as little-endian f32 in manifest order.

#include <string>
#include <vector>

#include <json.hpp>

#include "canmap/nn.hpp"

namespace canmap {

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'N', 'M', 'A', 'P', '0', '1'};

struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    uint64_t offset = 0; // bytes from the start of the blob section
};

void write_checkpoint(const std::string& path, const std::string& kind,
                      const nlohmann::json& meta,
                      const std::vector<const nn::Param<float>*>& params);

struct Checkpoint {
    std::string kind;
    int version = 0;
    nlohmann::json meta;
    std::vector<CheckpointEntry> entries;
    std::vector<float> blob;

    // bit-exact restore; the parameter list must match the manifest
    // one-to-one in name and shape
    void restore(const std::vector<nn::Param<float>*>& params) const;
};

Checkpoint read_checkpoint(const std::string& path);

} // namespace canmap
