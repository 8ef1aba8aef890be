#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "affdet/box.hpp"
#include "affdet/taxonomy.hpp"

namespace affdet {

namespace fs = std::filesystem;

enum class MediaKind { ImageCollection, VideoFrames };

std::string to_string(MediaKind kind);
MediaKind media_kind_from_string(const std::string& s);

struct DatasetDescriptor {
  std::string dataset_id;
  fs::path annotation_path;
  fs::path image_root;
  MediaKind media_kind = MediaKind::ImageCollection;
  int affinity_index = 0;

  friend bool operator==(const DatasetDescriptor&, const DatasetDescriptor&) = default;
};

// One image (or patch) with its aligned annotations. Boxes are center form in
// pixels and lie inside [0,width]x[0,height].
struct AnnotatedImage {
  std::string image_id;
  int source_dataset = 0;
  int width = 0;
  int height = 0;
  std::vector<Box> boxes;
  std::vector<int> class_ids;
  std::vector<Rect> ignore_regions;
  std::optional<int> frame_index;
  // Absolute, lexically normal path of the pixel data.
  fs::path image_path;

  friend bool operator==(const AnnotatedImage&, const AnnotatedImage&) = default;
};

struct PooledManifest {
  std::vector<DatasetDescriptor> datasets;
  std::vector<std::string> super_categories;
  std::vector<AnnotatedImage> records;
  std::string taxonomy_digest;
  // old affinity index -> new index, filled when the pool was re-densified.
  std::map<int, int> affinity_remap;

  std::size_t num_datasets() const { return datasets.size(); }
  std::vector<std::string> dataset_ids() const;

  friend bool operator==(const PooledManifest&, const PooledManifest&) = default;
};

// Reads a COCO-style annotation file. Boxes are converted to center form and
// clamped to the image; boxes that end up w or h <= 1 px are dropped with a
// warning. Annotations with iscrowd=1 and the per-image "ignore_regions"
// extension ([x, y, w, h] lists) become ignore regions. Images without any
// remaining box are kept. Records are ordered by image_id.
std::vector<AnnotatedImage> ingest_dataset(const DatasetDescriptor& descriptor,
                                           const TaxonomyMapping& taxonomy);

PooledManifest build_manifest(std::vector<DatasetDescriptor> descriptors,
                              const TaxonomyMapping& taxonomy);

// Checks index contiguity/uniqueness and id uniqueness.
void validate_descriptors(const std::vector<DatasetDescriptor>& descriptors);

struct BalanceRow {
  std::string dataset_id;
  int affinity_index = 0;
  std::size_t images = 0;
  std::size_t instances = 0;

  friend bool operator==(const BalanceRow&, const BalanceRow&) = default;
};

std::vector<BalanceRow> balance_report(const PooledManifest& manifest);
std::string balance_csv(const std::vector<BalanceRow>& rows);

// Line-delimited JSON: one header line, then one line per record. Paths are
// stored relative to the manifest's directory.
void write_manifest(const PooledManifest& manifest, const fs::path& path);
PooledManifest read_manifest(const fs::path& path);
std::string serialize_manifest(const PooledManifest& manifest, const fs::path& base_dir);
PooledManifest parse_manifest(const std::string& text, const fs::path& base_dir);

// Digest of the serialized form relative to base_dir.
std::string manifest_digest(const PooledManifest& manifest, const fs::path& base_dir);

}  // namespace affdet
