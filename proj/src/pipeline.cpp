#include "affdet/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include "affdet/errors.hpp"
#include "affdet/image_io.hpp"

namespace affdet {

namespace fs = std::filesystem;

namespace {

std::string file_stem_of(const std::string& image_id) {
  const auto slash = image_id.find('/');
  return slash == std::string::npos ? image_id : image_id.substr(slash + 1);
}

}  // namespace

PooledManifest align_pool(const std::vector<AlignSource>& sources, const TaxonomyMapping& taxonomy,
                          const AlignOptions& options, const fs::path& out_dir) {
  if (sources.empty()) throw ValidationError("align: no datasets given");
  if (options.video_stride < 1) throw ValidationError("align: video stride must be >= 1");
  options.slice.validate();
  std::vector<DatasetDescriptor> descriptors;
  for (const auto& s : sources) {
    if (s.subsample_stride < 0) throw ValidationError("align: subsample stride must be >= 0");
    descriptors.push_back(s.descriptor);
  }
  validate_descriptors(descriptors);

  std::vector<const AlignSource*> ordered;
  for (const auto& s : sources) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    return a->descriptor.affinity_index < b->descriptor.affinity_index;
  });

  PooledManifest manifest;
  manifest.super_categories = taxonomy.super_categories();
  manifest.taxonomy_digest = taxonomy.digest();
  for (const auto* src : ordered) {
    const auto& d = src->descriptor;
    manifest.datasets.push_back(d);
    auto records = ingest_dataset(d, taxonomy);
    int stride = src->subsample_stride;
    if (stride == 0) stride = d.media_kind == MediaKind::VideoFrames ? options.video_stride : 1;
    if (stride > 1) records = subsample_video(records, stride);

    const fs::path image_dir = fs::absolute(out_dir / "images" / d.dataset_id).lexically_normal();
    std::size_t written = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& rec = records[i];
      cv::Mat pixels = read_image(rec.image_path);
      if (pixels.cols != rec.width || pixels.rows != rec.height) {
        throw ValidationError("align: " + rec.image_path.string() + " is " + std::to_string(pixels.cols) +
                              "x" + std::to_string(pixels.rows) + " but annotated as " +
                              std::to_string(rec.width) + "x" + std::to_string(rec.height));
      }
      if (!rec.ignore_regions.empty()) pixels = mask_ignore_regions(pixels, rec.ignore_regions);

      std::vector<ImagePatch> patches;
      if (src->slice) {
        const std::uint64_t ordinal = (static_cast<std::uint64_t>(d.affinity_index) << 32) | i;
        auto rng = image_rng(options.slice.seed, ordinal);
        patches = slice_image(rec, options.slice, rng);
      } else {
        patches.push_back({{0, 0, rec.width, rec.height}, rec});
      }
      for (auto& p : patches) {
        const fs::path out = image_dir / (file_stem_of(p.record.image_id) + ".png");
        const cv::Rect win(p.window.x, p.window.y, p.window.width, p.window.height);
        write_png(out, pixels(win));
        p.record.image_path = out;
        manifest.records.push_back(std::move(p.record));
        ++written;
      }
    }
    spdlog::info("align: {} -> {} images", d.dataset_id, written);
  }
  if (manifest.records.empty()) throw ValidationError("align: the aligned pool is empty");
  return manifest;
}

namespace {

void check_detect_options(const DetectOptions& options) {
  if (options.batch_size < 1) throw ValidationError("detect: batch size must be >= 1");
  if (options.conf_threshold < 0 || options.conf_threshold > 1 || options.nms_iou < 0 || options.nms_iou > 1) {
    throw ValidationError("detect: thresholds must lie in [0, 1]");
  }
}

// One forward pass over `images`; boxes mapped back and clipped to `frames`.
std::vector<std::vector<Detection>> detect_batch(Detector& detector, std::span<const cv::Mat> images,
                                                 std::span<const Rect> frames, const DetectOptions& options) {
  const auto& cfg = detector.config();
  std::vector<cv::Mat> inputs;
  std::vector<LetterboxTransform> transforms(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    inputs.push_back(letterbox(images[i], cfg.input_size, &transforms[i]));
  }
  const auto outputs = detector.forward(make_input_batch<float>(inputs));
  auto decoded = decode(outputs, cfg, options.conf_threshold, options.nms_iou, options.max_detections);
  std::vector<std::vector<Detection>> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<Detection> dets;
    for (auto& d : decoded[i]) {
      const Rect r = transforms[i].to_source(d.box).corners().intersect(frames[i]);
      if (r.empty()) continue;
      d.box = Box::from_corners(r);
      dets.push_back(std::move(d));
    }
    out.push_back(std::move(dets));
  }
  return out;
}

}  // namespace

std::vector<std::vector<Detection>> detect_records(Detector& detector, std::span<const AnnotatedImage> records,
                                                   const DetectOptions& options) {
  check_detect_options(options);
  std::vector<std::vector<Detection>> out;
  out.reserve(records.size());
  const std::size_t batch = static_cast<std::size_t>(options.batch_size);
  for (std::size_t start = 0; start < records.size(); start += batch) {
    const std::size_t end = std::min(records.size(), start + batch);
    std::vector<cv::Mat> images;
    std::vector<Rect> frames;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(read_image(records[i].image_path));
      frames.push_back({0.0, 0.0, static_cast<double>(records[i].width), static_cast<double>(records[i].height)});
    }
    for (auto& dets : detect_batch(detector, images, frames, options)) out.push_back(std::move(dets));
  }
  return out;
}

std::vector<std::vector<Detection>> detect_images(Detector& detector, std::span<const cv::Mat> images,
                                                  const DetectOptions& options) {
  check_detect_options(options);
  std::vector<std::vector<Detection>> out;
  out.reserve(images.size());
  const std::size_t batch = static_cast<std::size_t>(options.batch_size);
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t end = std::min(images.size(), start + batch);
    const auto chunk = images.subspan(start, end - start);
    std::vector<Rect> frames;
    for (const auto& m : chunk) frames.push_back({0.0, 0.0, static_cast<double>(m.cols), static_cast<double>(m.rows)});
    for (auto& dets : detect_batch(detector, chunk, frames, options)) out.push_back(std::move(dets));
  }
  return out;
}

DetectionsFile detect_manifest(const Checkpoint& checkpoint, const PooledManifest& manifest,
                               const DetectOptions& options, std::string checkpoint_digest,
                               std::string manifest_digest) {
  if (checkpoint.config.num_classes != static_cast<int>(manifest.super_categories.size())) {
    throw ValidationError("detect: checkpoint classes do not match the manifest's super-categories");
  }
  Detector detector = make_detector(checkpoint);
  DetectionsFile file;
  file.checkpoint_digest = std::move(checkpoint_digest);
  file.manifest_digest = std::move(manifest_digest);
  file.dataset_ids = checkpoint.metadata.dataset_ids;
  if (file.dataset_ids.empty()) {
    for (int i = 0; i < checkpoint.config.num_datasets; ++i) file.dataset_ids.push_back(std::to_string(i));
  }
  file.super_categories = checkpoint.metadata.super_categories;
  file.conf_threshold = options.conf_threshold;
  file.nms_iou = options.nms_iou;
  auto dets = detect_records(detector, manifest.records, options);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    file.images.push_back({manifest.records[i].image_id, std::move(dets[i])});
  }
  return file;
}

}  // namespace affdet
