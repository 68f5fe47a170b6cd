// Versioned tensor container used for model and hypernetwork checkpoints.
//
// Layout (little-endian):
//   "VEDITCKP" | u32 version | u32 header bytes | header text (key=value lines)
//   | u32 tensor count | per tensor: u32 name bytes, name, u32 rows, u32 cols, f64 data
#pragma once

#include "vedit/autodiff.hpp"
#include "vedit/vit.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace vedit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> header;  // always contains "kind"
  std::vector<std::pair<std::string, ad::Matrix>> tensors;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

void vit_config_to_header(const ViTConfig& cfg, std::map<std::string, std::string>& header);
ViTConfig vit_config_from_header(const std::map<std::string, std::string>& header);

/// `extra` entries are stored in the header next to the config record.
void save_model(const std::string& path, const BaseModel& model, const std::map<std::string, std::string>& extra = {});
/// Validates every tensor shape against the stored config.
BaseModel load_model(const std::string& path, std::map<std::string, std::string>* header = nullptr);

ParamStore params_from_checkpoint(const Checkpoint& ckpt, const ParamStore& reference);

}  // namespace vedit
