#include "affdet/synth.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numbers>
#include <opencv2/imgproc.hpp>
#include <random>
#include <unordered_set>

#include "affdet/digest.hpp"
#include "affdet/errors.hpp"
#include "affdet/image_io.hpp"
#include "affdet/text_io.hpp"

namespace affdet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::Rects: return "rects";
    case ShapeFamily::Rounded: return "rounded";
    case ShapeFamily::Ellipses: return "ellipses";
  }
  return "rects";
}

ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "rects") return ShapeFamily::Rects;
  if (s == "rounded") return ShapeFamily::Rounded;
  if (s == "ellipses") return ShapeFamily::Ellipses;
  throw ValidationError("unknown shape family '" + s + "' (rects, rounded, ellipses)");
}

namespace {

bool valid_rgb(const Rgb& c) {
  auto ok = [](int v) { return v >= 0 && v <= 255; };
  return ok(c.r) && ok(c.g) && ok(c.b);
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag, std::uint64_t index) {
  return splitmix(splitmix(seed ^ fnv1a(tag)) + index);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

cv::Vec3b jittered(const Rgb& c, std::mt19937_64& rng, int amount) {
  auto ch = [&](int v) { return cv::saturate_cast<uchar>(v + uniform_int(rng, -amount, amount)); };
  const uchar r = ch(c.r), g = ch(c.g), b = ch(c.b);
  return {b, g, r};
}

cv::Vec3b scaled(const cv::Vec3b& c, double f) {
  return {cv::saturate_cast<uchar>(c[0] * f), cv::saturate_cast<uchar>(c[1] * f),
          cv::saturate_cast<uchar>(c[2] * f)};
}

struct BackgroundParams {
  double angle = 0.0;
  double phase = 0.0;
};

void paint_background(cv::Mat& img, const StyleParams& style, const BackgroundParams& bg,
                      std::uint64_t noise_seed) {
  const double amp = 16.0;
  const double kx = 2.0 * std::numbers::pi * style.texture_frequency * std::cos(bg.angle);
  const double ky = 2.0 * std::numbers::pi * style.texture_frequency * std::sin(bg.angle);
  cv::Mat f(img.size(), CV_32FC3);
  for (int y = 0; y < img.rows; ++y) {
    auto* row = f.ptr<cv::Vec3f>(y);
    for (int x = 0; x < img.cols; ++x) {
      const float t = static_cast<float>(amp * std::sin(kx * x + ky * y + bg.phase));
      row[x] = {static_cast<float>(style.background.b) + t, static_cast<float>(style.background.g) + t,
                static_cast<float>(style.background.r) + t};
    }
  }
  if (style.noise_sigma > 0) {
    cv::Mat noise(img.size(), CV_32FC3);
    cv::RNG cvrng(noise_seed);
    cvrng.fill(noise, cv::RNG::NORMAL, cv::Scalar::all(0.0), cv::Scalar::all(style.noise_sigma));
    f += noise;
  }
  f.convertTo(img, CV_8UC3);
}

struct PlacedShape {
  cv::Rect rect;
  bool horizontal = true;
  cv::Vec3b color;
  std::string label;
  double vx = 0.0;
  double vy = 0.0;
};

bool inside_shape(ShapeFamily family, int px, int py, int w, int h) {
  const double u = px + 0.5, v = py + 0.5;
  switch (family) {
    case ShapeFamily::Rects:
      return true;
    case ShapeFamily::Ellipses: {
      const double dx = (u - 0.5 * w) / (0.5 * w), dy = (v - 0.5 * h) / (0.5 * h);
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeFamily::Rounded: {
      const double r = 0.3 * std::min(w, h);
      const double cx = std::clamp(u, r, w - r), cy = std::clamp(v, r, h - r);
      return (u - cx) * (u - cx) + (v - cy) * (v - cy) <= r * r;
    }
  }
  return true;
}

// Body, a darker roof panel and a dark windshield strip at the front end.
// Every pixel stays inside rect, and the body touches all four sides.
void draw_vehicle(cv::Mat& img, const PlacedShape& s, ShapeFamily family) {
  const int w = s.rect.width, h = s.rect.height;
  const cv::Vec3b roof = scaled(s.color, 0.72);
  const cv::Vec3b glass(52, 44, 40);
  for (int py = 0; py < h; ++py) {
    auto* row = img.ptr<cv::Vec3b>(s.rect.y + py);
    for (int px = 0; px < w; ++px) {
      if (!inside_shape(family, px, py, w, h)) continue;
      // along: 0..1 along the vehicle's length, across: 0..1 across it
      const double along = s.horizontal ? (px + 0.5) / w : (py + 0.5) / h;
      const double across = s.horizontal ? (py + 0.5) / h : (px + 0.5) / w;
      cv::Vec3b c = s.color;
      if (across > 0.18 && across < 0.82) {
        if (along > 0.58 && along < 0.72) {
          c = glass;
        } else if (along > 0.3 && along <= 0.58) {
          c = roof;
        }
      }
      row[s.rect.x + px] = c;
    }
  }
}

void draw_person(cv::Mat& img, const PlacedShape& s) {
  const int head = std::max(2, s.rect.width);
  cv::rectangle(img, cv::Rect(s.rect.x, s.rect.y + head / 2, s.rect.width, s.rect.height - head / 2),
                cv::Scalar(s.color[0], s.color[1], s.color[2]), cv::FILLED, cv::LINE_8);
  cv::circle(img, {s.rect.x + s.rect.width / 2, s.rect.y + head / 2}, head / 2, cv::Scalar(120, 150, 200),
             cv::FILLED, cv::LINE_8);
}

bool overlaps_any(const cv::Rect& r, const std::vector<PlacedShape>& shapes, int margin) {
  const cv::Rect grown(r.x - margin, r.y - margin, r.width + 2 * margin, r.height + 2 * margin);
  return std::any_of(shapes.begin(), shapes.end(),
                     [&](const PlacedShape& s) { return (grown & s.rect).area() > 0; });
}

int poisson(std::mt19937_64& rng, double mean) {
  if (mean <= 0) return 0;
  return std::poisson_distribution<int>(mean)(rng);
}

// Rejection-samples non-overlapping vehicles inside `area`, avoiding `avoid`.
std::vector<PlacedShape> place_vehicles(std::mt19937_64& rng, const StyleParams& style, int count,
                                        const cv::Rect& area, const std::vector<PlacedShape>& avoid) {
  std::vector<PlacedShape> out;
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < 40; ++attempt) {
      const double len = uniform(rng, style.scale_min, style.scale_max);
      const double wid = std::max(4.0, len * uniform(rng, 0.45, 0.65));
      PlacedShape s;
      s.horizontal = uniform_int(rng, 0, 1) == 1;
      const int w = static_cast<int>(std::lround(s.horizontal ? len : wid));
      const int h = static_cast<int>(std::lround(s.horizontal ? wid : len));
      if (w + 2 > area.width || h + 2 > area.height) continue;
      s.rect = {area.x + uniform_int(rng, 1, area.width - w - 1), area.y + uniform_int(rng, 1, area.height - h - 1),
                w, h};
      if (overlaps_any(s.rect, out, 2) || overlaps_any(s.rect, avoid, 2)) continue;
      const auto& base = style.vehicle_palette[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(style.vehicle_palette.size()) - 1))];
      s.color = jittered(base, rng, 12);
      s.label = kSyntheticVehicleLabels[static_cast<std::size_t>(
          uniform_int(rng, 0, static_cast<int>(kSyntheticVehicleLabels.size()) - 1))];
      out.push_back(s);
      break;
    }
  }
  return out;
}

std::vector<PlacedShape> place_people(std::mt19937_64& rng, const StyleParams& style, const cv::Size& size,
                                      const std::vector<PlacedShape>& avoid) {
  static const Rgb kClothes[] = {{70, 70, 80}, {150, 60, 60}, {60, 90, 140}, {200, 190, 160}};
  std::vector<PlacedShape> out;
  const int count = poisson(rng, style.clutter_density);
  for (int i = 0; i < count; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const int w = std::max(3, static_cast<int>(std::lround(style.scale_min * uniform(rng, 0.2, 0.3))));
      const int h = std::max(6, static_cast<int>(std::lround(style.scale_min * uniform(rng, 0.55, 0.8))));
      if (w + 2 > size.width || h + 2 > size.height) break;
      PlacedShape s;
      s.rect = {uniform_int(rng, 1, size.width - w - 1), uniform_int(rng, 1, size.height - h - 1), w, h};
      if (overlaps_any(s.rect, avoid, 2) || overlaps_any(s.rect, out, 1)) continue;
      s.color = jittered(kClothes[uniform_int(rng, 0, 3)], rng, 10);
      s.label = kSyntheticClutterLabel;
      out.push_back(s);
      break;
    }
  }
  return out;
}

struct SceneLayout {
  BackgroundParams bg;
  std::vector<PlacedShape> vehicles;
  std::vector<PlacedShape> people;
  std::vector<PlacedShape> crowd;  // unannotated, inside the ignore region
  std::optional<cv::Rect> ignore;
};

SceneLayout make_layout(std::mt19937_64& rng, const StyleParams& style, const cv::Size& size) {
  SceneLayout layout;
  layout.bg.angle = uniform(rng, 0.0, std::numbers::pi);
  layout.bg.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  std::vector<PlacedShape> blocked;
  if (style.ignore_region_prob > 0 && uniform(rng, 0.0, 1.0) < style.ignore_region_prob) {
    const int w = static_cast<int>(size.width * uniform(rng, 0.2, 0.35));
    const int h = static_cast<int>(size.height * uniform(rng, 0.2, 0.35));
    const cv::Rect r(uniform_int(rng, 0, size.width - w), uniform_int(rng, 0, size.height - h), w, h);
    layout.ignore = r;
    layout.crowd = place_vehicles(rng, style, 6, r, {});
    PlacedShape block;
    block.rect = r;
    blocked.push_back(block);
  }
  layout.vehicles = place_vehicles(rng, style, std::max(1, poisson(rng, style.vehicles_per_image)),
                                   {0, 0, size.width, size.height}, blocked);
  blocked.insert(blocked.end(), layout.vehicles.begin(), layout.vehicles.end());
  layout.people = place_people(rng, style, size, blocked);
  return layout;
}

json shape_annotation(const PlacedShape& s, int ann_id, int image_id, int category_id) {
  return {{"id", ann_id},
          {"image_id", image_id},
          {"category_id", category_id},
          {"bbox", {s.rect.x, s.rect.y, s.rect.width, s.rect.height}},
          {"area", s.rect.area()},
          {"iscrowd", 0}};
}

}  // namespace

void StyleParams::validate() const {
  if (!valid_rgb(background)) throw ValidationError("style: background is not a valid RGB triple");
  if (vehicle_palette.empty()) throw ValidationError("style: vehicle palette is empty");
  for (const auto& c : vehicle_palette) {
    if (!valid_rgb(c)) throw ValidationError("style: vehicle palette holds an invalid RGB triple");
  }
  if (!(scale_min > 0) || scale_max < scale_min) {
    throw ValidationError("style: scale range must be positive with min <= max");
  }
  if (noise_sigma < 0 || clutter_density < 0 || texture_frequency < 0 || vehicles_per_image < 0) {
    throw ValidationError("style: noise, clutter, texture and vehicle density must be >= 0");
  }
  if (ignore_region_prob < 0 || ignore_region_prob > 1) {
    throw ValidationError("style: ignore_region_prob must be in [0, 1]");
  }
}

StyleParams interpolate_style(const StyleParams& a, const StyleParams& b, double t) {
  auto lerp = [t](double x, double y) { return x + t * (y - x); };
  auto mix = [&](const Rgb& x, const Rgb& y) {
    auto ch = [&](int p, int q) { return std::clamp(static_cast<int>(std::lround(lerp(p, q))), 0, 255); };
    return Rgb{ch(x.r, y.r), ch(x.g, y.g), ch(x.b, y.b)};
  };
  StyleParams s;
  s.background = mix(a.background, b.background);
  s.noise_sigma = std::max(0.0, lerp(a.noise_sigma, b.noise_sigma));
  const std::size_t n = std::max(a.vehicle_palette.size(), b.vehicle_palette.size());
  s.vehicle_palette.clear();
  for (std::size_t i = 0; i < n; ++i) {
    s.vehicle_palette.push_back(
        mix(a.vehicle_palette[i % a.vehicle_palette.size()], b.vehicle_palette[i % b.vehicle_palette.size()]));
  }
  s.shape_family = t < 0.5 ? a.shape_family : b.shape_family;
  s.scale_min = std::max(1.0, lerp(a.scale_min, b.scale_min));
  s.scale_max = std::max(s.scale_min, lerp(a.scale_max, b.scale_max));
  s.clutter_density = std::max(0.0, lerp(a.clutter_density, b.clutter_density));
  s.texture_frequency = std::max(0.0, lerp(a.texture_frequency, b.texture_frequency));
  s.vehicles_per_image = std::max(0.0, lerp(a.vehicles_per_image, b.vehicles_per_image));
  s.ignore_region_prob = std::clamp(lerp(a.ignore_region_prob, b.ignore_region_prob), 0.0, 1.0);
  return s;
}

DatasetDescriptor generate_source(const StyleParams& style, int n_images, std::uint64_t seed,
                                  const fs::path& out_dir, const std::string& dataset_id,
                                  const SourceOptions& options) {
  style.validate();
  if (n_images < 1) throw ValidationError("synth: n_images must be >= 1");
  if (options.image_size.width < 16 || options.image_size.height < 16) {
    throw ValidationError("synth: image size must be at least 16x16");
  }
  if (options.media == MediaKind::VideoFrames && options.frames_per_sequence < 1) {
    throw ValidationError("synth: frames_per_sequence must be >= 1");
  }
  if (dataset_id.empty()) throw ValidationError("synth: dataset id is empty");

  const fs::path image_dir = out_dir / "images";
  fs::create_directories(image_dir);
  const bool video = options.media == MediaKind::VideoFrames;

  json categories = json::array();
  int cat_id = 1;
  for (const auto& l : kSyntheticVehicleLabels) categories.push_back({{"id", cat_id++}, {"name", l}});
  categories.push_back({{"id", cat_id}, {"name", kSyntheticClutterLabel}});
  auto category_of = [&](const std::string& label) {
    for (std::size_t i = 0; i < kSyntheticVehicleLabels.size(); ++i) {
      if (kSyntheticVehicleLabels[i] == label) return static_cast<int>(i) + 1;
    }
    return cat_id;
  };

  json images = json::array();
  json annotations = json::array();
  int ann_id = 1;
  SceneLayout layout;
  for (int i = 0; i < n_images; ++i) {
    const int seq_pos = video ? i % options.frames_per_sequence : 0;
    if (!video || seq_pos == 0) {
      std::mt19937_64 rng(derive_seed(seed, dataset_id, static_cast<std::uint64_t>(video ? i / options.frames_per_sequence : i)));
      layout = make_layout(rng, style, options.image_size);
      if (video) {
        for (auto& v : layout.vehicles) {
          v.vx = uniform(rng, -2.5, 2.5);
          v.vy = uniform(rng, -2.5, 2.5);
        }
      }
    }
    cv::Mat img(options.image_size, CV_8UC3);
    paint_background(img, style, layout.bg, derive_seed(seed, dataset_id + "#noise", static_cast<std::uint64_t>(i)));

    const std::string stem = fmt::format("{}_{:05d}", video ? "frame" : "img", i);
    json image = {{"id", i + 1},
                  {"file_name", stem + ".png"},
                  {"width", options.image_size.width},
                  {"height", options.image_size.height}};
    if (video) image["frame_index"] = i;

    for (const auto& c : layout.crowd) draw_vehicle(img, c, style.shape_family);
    if (layout.ignore) {
      const auto& r = *layout.ignore;
      image["ignore_regions"] = json::array({json::array({r.x, r.y, r.width, r.height})});
    }
    const cv::Rect frame(0, 0, options.image_size.width, options.image_size.height);
    for (const auto& v : layout.vehicles) {
      PlacedShape moved = v;
      moved.rect.x += static_cast<int>(std::lround(v.vx * seq_pos));
      moved.rect.y += static_cast<int>(std::lround(v.vy * seq_pos));
      if ((moved.rect & frame) != moved.rect) continue;  // left the frame
      if (layout.ignore && (moved.rect & *layout.ignore).area() > 0) continue;
      draw_vehicle(img, moved, style.shape_family);
      annotations.push_back(shape_annotation(moved, ann_id++, i + 1, category_of(moved.label)));
    }
    for (const auto& p : layout.people) {
      draw_person(img, p);
      annotations.push_back(shape_annotation(p, ann_id++, i + 1, category_of(p.label)));
    }
    write_png(image_dir / (stem + ".png"), img);
    images.push_back(std::move(image));
  }

  const json doc = {{"images", images}, {"annotations", annotations}, {"categories", categories}};
  write_text_file(out_dir / "annotations.json", doc.dump() + "\n");

  DatasetDescriptor d;
  d.dataset_id = dataset_id;
  d.annotation_path = fs::absolute(out_dir / "annotations.json").lexically_normal();
  d.image_root = fs::absolute(image_dir).lexically_normal();
  d.media_kind = options.media;
  d.affinity_index = 0;
  return d;
}

TaxonomyMapping synthetic_taxonomy(const std::vector<std::string>& dataset_ids) {
  TaxonomyMapping t({"vehicle"});
  for (const auto& id : dataset_ids) {
    for (const auto& l : kSyntheticVehicleLabels) t.add_rule(id, l, "vehicle");
    t.add_rule(id, kSyntheticClutterLabel, std::string(kDropTarget));
  }
  return t;
}

std::string synthetic_taxonomy_yaml(const std::vector<std::string>& dataset_ids) {
  std::string out = "super_categories: [vehicle]\nrules:\n";
  for (const auto& id : dataset_ids) {
    for (const auto& l : kSyntheticVehicleLabels) {
      out += fmt::format("  - {{dataset: {}, label: {}, target: vehicle}}\n", id, l);
    }
    out += fmt::format("  - {{dataset: {}, label: {}, target: DROP}}\n", id, kSyntheticClutterLabel);
  }
  return out;
}

namespace {

std::string pixel_hash(const fs::path& path) {
  const cv::Mat img = read_image(path);
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(img.data), img.total() * img.elemSize()));
}

}  // namespace

GeneratedPool generate_pool(const PoolSpec& spec, const fs::path& out_dir) {
  if (spec.sources.size() < 2) throw ValidationError("synth: a pool needs at least two sources");
  if (spec.eval_images < 1) throw ValidationError("synth: the target eval set must not be empty");
  std::vector<std::string> ids;
  for (const auto& s : spec.sources) {
    if (s.dataset_id == "target" || s.dataset_id == "holdout") {
      throw ValidationError("synth: source id '" + s.dataset_id + "' is reserved");
    }
    ids.push_back(s.dataset_id);
  }
  ids.push_back("target");
  const TaxonomyMapping taxonomy = synthetic_taxonomy(ids);

  GeneratedPool pool;
  bool any_holdout = false;
  for (std::size_t i = 0; i < spec.sources.size(); ++i) {
    const auto& s = spec.sources[i];
    auto d = generate_source(s.style, s.images, derive_seed(spec.seed, "pool", i), out_dir / s.dataset_id,
                             s.dataset_id, s.options);
    d.affinity_index = static_cast<int>(i);
    pool.sources.push_back(d);
    if (s.holdout_images > 0) {
      auto h = generate_source(s.style, s.holdout_images, derive_seed(spec.seed, "holdout", i),
                               out_dir / "holdout" / s.dataset_id, s.dataset_id, s.options);
      h.affinity_index = static_cast<int>(i);
      pool.holdouts.push_back(h);
      any_holdout = true;
    }
  }
  pool.eval = generate_source(spec.target, spec.eval_images, derive_seed(spec.seed, "target", 0),
                              out_dir / "target", "target", spec.eval_options);
  pool.manifest = build_manifest(pool.sources, taxonomy);
  pool.eval_manifest = build_manifest({pool.eval}, taxonomy);
  if (any_holdout) {
    // Keep the pool's indices even when some sources have no holdout.
    pool.holdout_manifest.datasets = pool.sources;
    pool.holdout_manifest.super_categories = pool.manifest.super_categories;
    pool.holdout_manifest.taxonomy_digest = pool.manifest.taxonomy_digest;
    for (const auto& h : pool.holdouts) {
      auto recs = ingest_dataset(h, taxonomy);
      for (auto& r : recs) r.source_dataset = h.affinity_index;
      pool.holdout_manifest.records.insert(pool.holdout_manifest.records.end(), recs.begin(), recs.end());
    }
  }

  std::unordered_set<std::string> pool_ids, pool_pixels;
  for (const auto& r : pool.manifest.records) {
    pool_ids.insert(r.image_id);
    pool_pixels.insert(pixel_hash(r.image_path));
  }
  for (const auto& r : pool.eval_manifest.records) {
    if (pool_ids.count(r.image_id) || pool_pixels.count(pixel_hash(r.image_path))) {
      throw std::runtime_error("synth: eval image " + r.image_id + " leaks into the pool");
    }
  }
  return pool;
}

cv::Mat color_histogram(const cv::Mat& image) {
  const int channels[] = {0, 1, 2};
  const int bins[] = {8, 8, 8};
  const float range[] = {0.f, 256.f};
  const float* ranges[] = {range, range, range};
  cv::Mat hist;
  cv::calcHist(&image, 1, channels, cv::Mat(), hist, 3, bins, ranges);
  hist /= static_cast<double>(image.total());
  return hist;
}

double histogram_distance(const cv::Mat& a, const cv::Mat& b) {
  return cv::compareHist(a, b, cv::HISTCMP_BHATTACHARYYA);
}

double mean_histogram_distance(const std::vector<cv::Mat>& a, const std::vector<cv::Mat>& b, bool same_set) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = same_set ? i + 1 : 0; j < b.size(); ++j) {
      sum += histogram_distance(color_histogram(a[i]), color_histogram(b[j]));
      ++n;
    }
  }
  if (n == 0) throw ValidationError("histogram distance: need at least one pair");
  return sum / static_cast<double>(n);
}

}  // namespace affdet
