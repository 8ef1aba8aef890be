#pragma once

#include <filesystem>
#include <opencv2/core.hpp>
#include <span>
#include <string>
#include <vector>

#include "affdet/alignment.hpp"
#include "affdet/checkpoint.hpp"
#include "affdet/corpus.hpp"
#include "affdet/evaluator.hpp"
#include "affdet/taxonomy.hpp"

namespace affdet {

struct AlignSource {
  DatasetDescriptor descriptor;
  bool slice = false;
  // 0 picks the default: video_stride for video frames, 1 otherwise.
  int subsample_stride = 0;
};

struct AlignOptions {
  SliceConfig slice;
  int video_stride = 20;
};

// ingest -> subsample -> gray out ignore regions -> slice -> write PNGs.
// Images land in <out_dir>/images/<dataset_id>/; the returned manifest points
// at them. Affinity indices come from the descriptors.
PooledManifest align_pool(const std::vector<AlignSource>& sources, const TaxonomyMapping& taxonomy,
                          const AlignOptions& options, const std::filesystem::path& out_dir);

struct DetectOptions {
  double conf_threshold = 0.25;
  double nms_iou = 0.45;
  std::size_t max_detections = 300;
  int batch_size = 8;
};

// Boxes are mapped back to each record's own frame and clipped to it.
std::vector<std::vector<Detection>> detect_records(Detector& detector,
                                                   std::span<const AnnotatedImage> records,
                                                   const DetectOptions& options = {});

// Same as detect_records for in-memory BGR images.
std::vector<std::vector<Detection>> detect_images(Detector& detector, std::span<const cv::Mat> images,
                                                  const DetectOptions& options = {});

DetectionsFile detect_manifest(const Checkpoint& checkpoint, const PooledManifest& manifest,
                               const DetectOptions& options, std::string checkpoint_digest,
                               std::string manifest_digest);

}  // namespace affdet
