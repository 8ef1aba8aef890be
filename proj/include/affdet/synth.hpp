#pragma once

#include <cstdint>
#include <filesystem>
#include <opencv2/core.hpp>
#include <string>
#include <vector>

#include "affdet/corpus.hpp"
#include "affdet/taxonomy.hpp"

namespace affdet {

enum class ShapeFamily { Rects, Rounded, Ellipses };

std::string to_string(ShapeFamily family);
ShapeFamily shape_family_from_string(const std::string& s);

struct Rgb {
  int r = 0;
  int g = 0;
  int b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct StyleParams {
  Rgb background{96, 112, 96};
  double noise_sigma = 6.0;
  std::vector<Rgb> vehicle_palette{{200, 40, 40}, {230, 230, 230}, {40, 40, 160}};
  ShapeFamily shape_family = ShapeFamily::Rects;
  double scale_min = 18.0;  // vehicle length in pixels
  double scale_max = 40.0;
  double clutter_density = 3.0;      // mean "person" distractors per image
  double texture_frequency = 0.02;   // background stripes, cycles per pixel
  double vehicles_per_image = 3.0;   // mean
  double ignore_region_prob = 0.0;   // chance of one gray-out area per image

  void validate() const;

  friend bool operator==(const StyleParams&, const StyleParams&) = default;
};

// Linear blend of every numeric field; palettes blend entrywise (the shorter
// one is cycled); the shape family switches at t = 0.5.
StyleParams interpolate_style(const StyleParams& a, const StyleParams& b, double t);

struct SourceOptions {
  cv::Size image_size{320, 320};
  MediaKind media = MediaKind::ImageCollection;
  int frames_per_sequence = 40;  // video only
};

// Writes <out_dir>/images/*.png and <out_dir>/annotations.json (COCO style).
// Vehicles carry the labels car/van/truck, distractors the label person.
// Deterministic given the seed.
DatasetDescriptor generate_source(const StyleParams& style, int n_images, std::uint64_t seed,
                                  const std::filesystem::path& out_dir,
                                  const std::string& dataset_id, const SourceOptions& options = {});

inline const std::vector<std::string> kSyntheticVehicleLabels{"car", "van", "truck"};
inline constexpr const char* kSyntheticClutterLabel = "person";

// vehicle labels -> "vehicle", person -> DROP, for every listed dataset.
TaxonomyMapping synthetic_taxonomy(const std::vector<std::string>& dataset_ids);
std::string synthetic_taxonomy_yaml(const std::vector<std::string>& dataset_ids);

struct SourceSpec {
  std::string dataset_id;
  StyleParams style;
  int images = 100;
  int holdout_images = 0;
  SourceOptions options;
};

struct PoolSpec {
  std::vector<SourceSpec> sources;
  StyleParams target;
  int eval_images = 100;
  SourceOptions eval_options;
  std::uint64_t seed = 0;
};

struct GeneratedPool {
  std::vector<DatasetDescriptor> sources;   // affinity index = position
  std::vector<DatasetDescriptor> holdouts;  // same ids and indices, held-out images
  DatasetDescriptor eval;                   // id "target", index 0
  PooledManifest manifest;
  PooledManifest holdout_manifest;          // empty when no holdout was requested
  PooledManifest eval_manifest;
};

// Layout: <out>/<id>/..., <out>/holdout/<id>/..., <out>/target/...
// Throws ValidationError for fewer than two sources or an empty eval set, and
// std::runtime_error if an eval image collides with a pool image.
GeneratedPool generate_pool(const PoolSpec& spec, const std::filesystem::path& out_dir);

// Normalized 8x8x8 BGR histogram and the Bhattacharyya distance between two.
cv::Mat color_histogram(const cv::Mat& image);
double histogram_distance(const cv::Mat& a, const cv::Mat& b);
// Mean distance over all cross pairs (or distinct pairs when a and b are the
// same set).
double mean_histogram_distance(const std::vector<cv::Mat>& a, const std::vector<cv::Mat>& b,
                               bool same_set = false);

}  // namespace affdet
