#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "ccdnet/core/tensor.hpp"

namespace ccdnet {

/// Checkpoint container: "CCKP" magic, a little-endian u32 version, a u64
/// JSON header length, the JSON header (config, mode, tensor directory), then
/// raw little-endian float32 payload. Byte order is fixed regardless of host.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json config;
    std::string mode = "train";  // "train" | "fused"
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ccdnet
