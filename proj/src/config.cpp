#include "affdet/config.hpp"

#include <yaml-cpp/yaml.h>

#include "affdet/errors.hpp"
#include "affdet/text_io.hpp"

namespace affdet {

namespace fs = std::filesystem;

namespace {

template <typename T>
void read_opt(const YAML::Node& node, const char* key, T& out) {
  if (const auto v = node[key]) {
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ValidationError(std::string("config: bad value for '") + key + "'");
    }
  }
}

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) throw ValidationError("config: '" + where + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("config: unknown key '" + key + "' in " + where);
  }
}

Rgb parse_rgb(const YAML::Node& n) {
  if (!n.IsSequence() || n.size() != 3) throw ValidationError("config: colors are [r, g, b] triples");
  return {n[0].as<int>(), n[1].as<int>(), n[2].as<int>()};
}

StyleParams parse_style(const YAML::Node& n, const StyleParams& base = {}) {
  check_keys(n, "style", {"background", "noise_sigma", "vehicle_palette", "shape_family", "scale_range",
                          "clutter_density", "texture_frequency", "vehicles_per_image", "ignore_region_prob"});
  StyleParams s = base;
  if (n["background"]) s.background = parse_rgb(n["background"]);
  if (const auto p = n["vehicle_palette"]) {
    s.vehicle_palette.clear();
    for (const auto& c : p) s.vehicle_palette.push_back(parse_rgb(c));
  }
  if (n["shape_family"]) s.shape_family = shape_family_from_string(n["shape_family"].as<std::string>());
  if (const auto r = n["scale_range"]) {
    if (!r.IsSequence() || r.size() != 2) throw ValidationError("config: scale_range is [min, max]");
    s.scale_min = r[0].as<double>();
    s.scale_max = r[1].as<double>();
  }
  read_opt(n, "noise_sigma", s.noise_sigma);
  read_opt(n, "clutter_density", s.clutter_density);
  read_opt(n, "texture_frequency", s.texture_frequency);
  read_opt(n, "vehicles_per_image", s.vehicles_per_image);
  read_opt(n, "ignore_region_prob", s.ignore_region_prob);
  s.validate();
  return s;
}

SourceOptions parse_source_options(const YAML::Node& n) {
  SourceOptions o;
  if (const auto sz = n["size"]) {
    if (!sz.IsSequence() || sz.size() != 2) throw ValidationError("config: size is [width, height]");
    o.image_size = {sz[0].as<int>(), sz[1].as<int>()};
  }
  if (n["media"]) o.media = media_kind_from_string(n["media"].as<std::string>());
  read_opt(n, "frames_per_sequence", o.frames_per_sequence);
  return o;
}

PoolSpec parse_synth(const YAML::Node& n) {
  check_keys(n, "synth", {"sources", "target", "eval_images", "eval_size"});
  PoolSpec spec;
  std::map<std::string, StyleParams> by_id;
  for (const auto& src : n["sources"]) {
    check_keys(src, "synth.sources", {"id", "images", "holdout", "size", "media", "frames_per_sequence", "style"});
    SourceSpec s;
    s.dataset_id = src["id"].as<std::string>();
    read_opt(src, "images", s.images);
    read_opt(src, "holdout", s.holdout_images);
    s.options = parse_source_options(src);
    if (src["style"]) s.style = parse_style(src["style"]);
    by_id[s.dataset_id] = s.style;
    spec.sources.push_back(std::move(s));
  }
  if (const auto t = n["target"]) {
    if (const auto blend = t["interpolate"]) {
      check_keys(blend, "synth.target.interpolate", {"from", "to", "t"});
      const auto from = blend["from"].as<std::string>();
      const auto to = blend["to"].as<std::string>();
      if (!by_id.count(from) || !by_id.count(to)) {
        throw ValidationError("config: synth.target interpolates unknown sources");
      }
      spec.target = interpolate_style(by_id[from], by_id[to], blend["t"].as<double>());
    } else {
      spec.target = parse_style(t);
    }
  }
  read_opt(n, "eval_images", spec.eval_images);
  if (const auto sz = n["eval_size"]) {
    spec.eval_options.image_size = {sz[0].as<int>(), sz[1].as<int>()};
  }
  return spec;
}

std::vector<AlignSource> parse_align_set(const YAML::Node& n, const fs::path& base) {
  std::vector<AlignSource> out;
  int index = 0;
  for (const auto& d : n) {
    check_keys(d, "align dataset", {"id", "annotations", "images", "media", "affinity_index", "slice", "subsample"});
    AlignSource s;
    s.descriptor.dataset_id = d["id"].as<std::string>();
    s.descriptor.annotation_path = (base / d["annotations"].as<std::string>()).lexically_normal();
    s.descriptor.image_root = (base / d["images"].as<std::string>()).lexically_normal();
    if (d["media"]) s.descriptor.media_kind = media_kind_from_string(d["media"].as<std::string>());
    s.descriptor.affinity_index = index++;
    read_opt(d, "affinity_index", s.descriptor.affinity_index);
    read_opt(d, "slice", s.slice);
    read_opt(d, "subsample", s.subsample_stride);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& yaml_text, const fs::path& base_dir) {
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (root.IsNull()) return cfg;
  try {
    check_keys(root, "config", {"seed", "deterministic", "synth", "align", "detector", "train", "detect",
                                "analyze", "prune"});
    read_opt(root, "seed", cfg.seed);
    read_opt(root, "deterministic", cfg.deterministic);
    if (root["synth"]) {
      cfg.synth = parse_synth(root["synth"]);
      cfg.synth->seed = cfg.seed;
    }

    if (const auto a = root["align"]) {
      check_keys(a, "align", {"taxonomy", "patch_min", "patch_max", "overlap", "min_box_visibility", "seed",
                              "video_stride", "sets"});
      if (a["taxonomy"]) cfg.taxonomy_path = (base_dir / a["taxonomy"].as<std::string>()).lexically_normal();
      read_opt(a, "patch_min", cfg.align.slice.patch_min);
      read_opt(a, "patch_max", cfg.align.slice.patch_max);
      read_opt(a, "overlap", cfg.align.slice.overlap_ratio);
      read_opt(a, "min_box_visibility", cfg.align.slice.min_box_visibility);
      cfg.align.slice.seed = cfg.seed;
      read_opt(a, "seed", cfg.align.slice.seed);
      read_opt(a, "video_stride", cfg.align.video_stride);
      if (const auto sets = a["sets"]) {
        for (const auto& kv : sets) {
          cfg.align_sets[kv.first.as<std::string>()] = parse_align_set(kv.second, base_dir);
        }
      }
    }

    if (const auto d = root["detector"]) {
      check_keys(d, "detector", {"input_size", "grid_stride", "channel_widths", "focal_gamma", "focal_alpha",
                                 "loss_weights"});
      read_opt(d, "input_size", cfg.detector.input_size);
      read_opt(d, "grid_stride", cfg.detector.grid_stride);
      read_opt(d, "channel_widths", cfg.detector.channel_widths);
      read_opt(d, "focal_gamma", cfg.detector.focal_gamma);
      read_opt(d, "focal_alpha", cfg.detector.focal_alpha);
      if (const auto w = d["loss_weights"]) {
        check_keys(w, "detector.loss_weights", {"obj", "cls", "loc", "aff"});
        read_opt(w, "obj", cfg.detector.loss_weights.obj);
        read_opt(w, "cls", cfg.detector.loss_weights.cls);
        read_opt(w, "loc", cfg.detector.loss_weights.loc);
        read_opt(w, "aff", cfg.detector.loss_weights.aff);
      }
    }

    cfg.train.seed = cfg.seed;
    cfg.train.deterministic = cfg.deterministic;
    if (const auto t = root["train"]) {
      check_keys(t, "train", {"epochs", "batch_size", "lr", "weight_decay", "seed", "balanced_sampler", "max_steps"});
      read_opt(t, "epochs", cfg.train.epochs);
      read_opt(t, "batch_size", cfg.train.batch_size);
      read_opt(t, "lr", cfg.train.learning_rate);
      read_opt(t, "weight_decay", cfg.train.weight_decay);
      read_opt(t, "seed", cfg.train.seed);
      read_opt(t, "balanced_sampler", cfg.train.balanced_sampler);
      read_opt(t, "max_steps", cfg.train.max_steps);
    }
    if (const auto d = root["detect"]) {
      check_keys(d, "detect", {"conf_threshold", "nms_iou", "max_detections", "batch_size"});
      read_opt(d, "conf_threshold", cfg.detect.conf_threshold);
      read_opt(d, "nms_iou", cfg.detect.nms_iou);
      read_opt(d, "max_detections", cfg.detect.max_detections);
      read_opt(d, "batch_size", cfg.detect.batch_size);
    }
    if (const auto a = root["analyze"]) {
      check_keys(a, "analyze", {"iou_threshold"});
      read_opt(a, "iou_threshold", cfg.analyze_iou);
    }
    if (const auto p = root["prune"]) {
      check_keys(p, "prune", {"k"});
      read_opt(p, "k", cfg.prune_k);
    }
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  const auto abs = fs::absolute(path).lexically_normal();
  return parse_config(read_text_file(abs), abs.parent_path());
}

}  // namespace affdet
