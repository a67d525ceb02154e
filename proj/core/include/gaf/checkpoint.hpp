#pragma once

// Checkpoints are JSON:
//   {"version": "gaf-ckpt-1",
//    "config": {...ModelConfig...},
//    "params": {"frame.enc_fc.weight": {"shape": [9, 32], "values": [...]}, ...}}

#include <filesystem>
#include <string>

#include "gaf/trainer.hpp"

namespace gaf {

inline constexpr const char* kCheckpointVersion = "gaf-ckpt-1";

std::string checkpoint_to_json(const GafModels& models);
// Throws VersionError on a version mismatch and ParseError / ContractError on
// malformed content or parameter shapes that disagree with the config.
GafModels checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const GafModels& models);
GafModels load_checkpoint(const std::filesystem::path& path);

}  // namespace gaf
