// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint container (.fvgc):
//   "FVGC" | u32 version | u32 header length | JSON header | payload | u32 CRC32(payload)
// The header carries the model config, a tensor table (name -> dtype, shape,
// byte offset), the checkpoint kind ("base" or "lora") and free-form metadata.
// Adapter checkpoints also record the SHA-256 of the base checkpoint file.

#include "fvg/model.hpp"

#include <filesystem>
#include <string>

namespace fvg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
    std::string kind;  // "base" | "lora"
    std::string dtype;  // "f32le" | "f64le"
    ModelConfig config;
    nlohmann::json meta = nlohmann::json::object();
    std::string base_hash;  // lora only
    int lora_rank = 0;
    double lora_alpha = 0.0;
};

std::string file_sha256(const std::filesystem::path& path);

/// Reads and validates the container framing and header; the payload CRC is checked too.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

template <class S>
void save_base_checkpoint(const std::filesystem::path& path, const ModelParams<S>& params,
                          const nlohmann::json& meta = nlohmann::json::object());

/// If expected is given, every config field must match or FormatError names it.
template <class S>
ModelParams<S> load_base_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr,
                                    const ModelConfig* expected = nullptr);

template <class S>
void save_lora_checkpoint(const std::filesystem::path& path, const LoraAdapters<S>& adapters, const ModelConfig& config,
                          const std::string& base_hash, const nlohmann::json& meta = nlohmann::json::object());

/// Throws HashMismatchError unless the adapters were trained against base_hash.
template <class S>
LoraAdapters<S> load_lora_checkpoint(const std::filesystem::path& path, const ModelParams<S>& base,
                                     const std::string& base_hash, CheckpointInfo* info = nullptr);

}  // namespace fvg
