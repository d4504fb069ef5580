#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

namespace chroma {

/// Container layout: 8-byte magic, u32 version, u64 header size, JSON header,
/// then every tensor as raw little-endian float32 in header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Hash over the ordered parameter/buffer names and shapes plus `kind`.
std::string architecture_hash(const torch::nn::Module& module, const std::string& kind);

/// FNV-1a over the raw bytes of every parameter and buffer; for freeze checks.
std::uint64_t module_checksum(const torch::nn::Module& module);
std::uint64_t parameters_checksum(const std::vector<torch::Tensor>& params);

void save_checkpoint(const std::filesystem::path& file, const torch::nn::Module& module, const std::string& kind,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Loads into an already-constructed module. Throws when the stored architecture
/// hash or kind differs. Returns the stored metadata.
nlohmann::json load_checkpoint(const std::filesystem::path& file, torch::nn::Module& module, const std::string& kind);

nlohmann::json read_checkpoint_header(const std::filesystem::path& file);

}  // namespace chroma
