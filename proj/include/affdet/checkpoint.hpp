#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "affdet/model.hpp"

namespace affdet {

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct TrainingMetadata {
  std::uint64_t seed = 0;
  int epochs = 0;
  std::int64_t steps = 0;
  std::string pool_digest;
  std::vector<std::string> dataset_ids;       // by affinity index
  std::vector<std::string> super_categories;  // by class index
  std::map<int, int> affinity_remap;          // from the training manifest

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
  DetectorConfig config;
  std::vector<NamedArray> parameters;
  TrainingMetadata metadata;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Container layout (little endian):
//   8 bytes  magic "AFFDCKPT"
//   u32      schema version
//   u64      header length
//   header   UTF-8 JSON: config, metadata, tensor table (name, shape, offset, count)
//   payload  float32 arrays in table order
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<NamedArray> export_parameters(Detector& detector);
void import_parameters(Detector& detector, const std::vector<NamedArray>& arrays);

// Restores a detector from a checkpoint.
Detector make_detector(const Checkpoint& ckpt);

}  // namespace affdet
