#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "affdet/model.hpp"
#include "affdet/pipeline.hpp"
#include "affdet/synth.hpp"
#include "affdet/trainer.hpp"

namespace affdet {

// Top-level experiment config, one section per command. Relative paths are
// resolved against base_dir (the config file's directory).
struct ExperimentConfig {
  std::filesystem::path base_dir;
  std::uint64_t seed = 0;
  bool deterministic = false;

  std::optional<PoolSpec> synth;

  std::filesystem::path taxonomy_path;
  AlignOptions align;
  std::map<std::string, std::vector<AlignSource>> align_sets;

  DetectorConfig detector;
  RunConfig train;
  DetectOptions detect;
  double analyze_iou = 0.5;
  int prune_k = 2;
};

ExperimentConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace affdet
