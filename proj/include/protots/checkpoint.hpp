#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "protots/data.hpp"
#include "protots/model.hpp"
#include "protots/trainer.hpp"

namespace protots {

inline constexpr int kCheckpointFormatVersion = 1;

struct ModelCheckpoint {
    int format_version = kCheckpointFormatVersion;
    VariableSchema schema;
    Normalizer normalizer;
    ProtoTSModel model;
    TrainConfig train_config;
    std::vector<std::uint64_t> seed_lineage;
    std::uint64_t revision = 0;
};

/// Container layout: 8-byte magic "PTSCKPT\0", little-endian u64 manifest
/// length, JSON manifest, then little-endian float32 arrays. The manifest
/// lists every array by name, offset, and length, and carries a CRC-32 of
/// the array section.
std::string serialize_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

// Tree topology, patterns, labels and locks as JSON (the HTTP tree view).
nlohmann::json tree_to_json(const PrototypeTree& tree);

}  // namespace protots
