#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "e2stn/config.hpp"
#include "e2stn/model.hpp"
#include "e2stn/training.hpp"

namespace e2stn {

inline constexpr char kCheckpointMagic[6] = {'E', '2', 'S', 'T', 'N', '\0'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  Model model;
  TrainState state;
};

/// Serialized bytes; identical inputs give identical bytes.
std::string encode_checkpoint(const ExperimentConfig& config, const Model& model, const TrainState& state);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config, const Model& model,
                     const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 over the file bytes, as 16 hex digits.
std::string checkpoint_digest(const std::string& bytes);

}  // namespace e2stn
