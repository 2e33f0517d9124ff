#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "unfmri/train_eval.hpp"

namespace unfmri {

inline constexpr int kCheckpointFormat = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Archive layout: "UNFMRICK", u32 manifest length, manifest text (key=value lines), u32
/// parameter count, then per parameter: u32 name length, name, u64 blob length, f64 tensor
/// container blob.
struct Checkpoint {
  UnfoldConfig config;
  std::map<std::string, std::string> extra;  // free-form provenance (epoch, mask id, ...)
  ParameterSnapshot parameters;
};

std::string config_manifest(const UnfoldConfig& config);
UnfoldConfig parse_config_manifest(const std::map<std::string, std::string>& keys);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const UnfoldModel& model, const ParameterSnapshot& params,
                           std::map<std::string, std::string> extra = {});
/// Builds a model of the stored architecture and loads the stored values into it.
UnfoldModel instantiate(const Checkpoint& ckpt);

}  // namespace unfmri
