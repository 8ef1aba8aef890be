#include "affdet/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "affdet/digest.hpp"
#include "affdet/errors.hpp"

namespace affdet {

using nlohmann::json;

std::string to_string(MediaKind kind) {
  return kind == MediaKind::VideoFrames ? "video_frames" : "image_collection";
}

MediaKind media_kind_from_string(const std::string& s) {
  if (s == "image_collection") return MediaKind::ImageCollection;
  if (s == "video_frames") return MediaKind::VideoFrames;
  throw ValidationError("unknown media_kind '" + s + "'");
}

std::vector<std::string> PooledManifest::dataset_ids() const {
  std::vector<std::string> ids(datasets.size());
  for (const auto& d : datasets) ids.at(static_cast<std::size_t>(d.affinity_index)) = d.dataset_id;
  return ids;
}

namespace {

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open annotation file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed annotation file " + path.string() + ": " + e.what());
  }
}

std::string id_key(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

fs::path normalized_absolute(const fs::path& p) {
  return fs::absolute(p).lexically_normal();
}

std::string rel_string(const fs::path& p, const fs::path& base_dir) {
  if (p.empty()) return {};
  return normalized_absolute(p).lexically_relative(normalized_absolute(base_dir)).generic_string();
}

fs::path resolve(const std::string& rel, const fs::path& base_dir) {
  if (rel.empty()) return {};
  return normalized_absolute(base_dir / rel);
}

}  // namespace

std::vector<AnnotatedImage> ingest_dataset(const DatasetDescriptor& descriptor,
                                           const TaxonomyMapping& taxonomy) {
  const json doc = load_json(descriptor.annotation_path);
  try {
    std::map<std::string, std::string> category_names;
    for (const auto& c : doc.at("categories")) {
      category_names[id_key(c.at("id"))] = c.at("name").get<std::string>();
    }

    std::map<std::string, std::vector<const json*>> by_image;
    if (doc.contains("annotations")) {
      for (const auto& a : doc.at("annotations")) {
        by_image[id_key(a.at("image_id"))].push_back(&a);
      }
    }

    std::vector<AnnotatedImage> out;
    for (const auto& im : doc.at("images")) {
      AnnotatedImage rec;
      const auto file_name = im.at("file_name").get<std::string>();
      rec.image_id = descriptor.dataset_id + "/" + fs::path(file_name).replace_extension().generic_string();
      rec.source_dataset = descriptor.affinity_index;
      rec.width = im.at("width").get<int>();
      rec.height = im.at("height").get<int>();
      if (rec.width <= 0 || rec.height <= 0) {
        throw ValidationError("image " + rec.image_id + " has non-positive size");
      }
      rec.image_path = normalized_absolute(descriptor.image_root / file_name);
      if (im.contains("frame_index")) {
        rec.frame_index = im.at("frame_index").get<int>();
      } else if (im.contains("frame_id")) {
        rec.frame_index = im.at("frame_id").get<int>();
      }
      const Rect frame{0.0, 0.0, static_cast<double>(rec.width),
                       static_cast<double>(rec.height)};
      if (im.contains("ignore_regions")) {
        for (const auto& r : im.at("ignore_regions")) {
          const Rect region = Rect::from_xywh(r.at(0), r.at(1), r.at(2), r.at(3)).intersect(frame);
          if (!region.empty()) rec.ignore_regions.push_back(region);
        }
      }

      const auto it = by_image.find(id_key(im.at("id")));
      if (it != by_image.end()) {
        for (const json* a : it->second) {
          const auto& bbox = a->at("bbox");
          const Rect raw = Rect::from_xywh(bbox.at(0), bbox.at(1), bbox.at(2), bbox.at(3));
          if (a->value("iscrowd", 0) == 1) {
            const Rect region = raw.intersect(frame);
            if (!region.empty()) rec.ignore_regions.push_back(region);
            continue;
          }
          const auto cat = category_names.find(id_key(a->at("category_id")));
          if (cat == category_names.end()) {
            throw ValidationError("annotation references unknown category id " +
                                  id_key(a->at("category_id")));
          }
          const auto outcome = taxonomy.map_label(descriptor.dataset_id, cat->second);
          if (!outcome) continue;
          const Rect clamped = raw.intersect(frame);
          if (clamped.width() <= 1.0 || clamped.height() <= 1.0) {
            spdlog::warn("{}: dropping degenerate box [{}, {}, {}, {}]", rec.image_id,
                         raw.x0, raw.y0, raw.width(), raw.height());
            continue;
          }
          rec.boxes.push_back(Box::from_corners(clamped));
          rec.class_ids.push_back(static_cast<int>(*outcome));
        }
      }
      out.push_back(std::move(rec));
    }
    std::sort(out.begin(), out.end(),
              [](const AnnotatedImage& a, const AnnotatedImage& b) { return a.image_id < b.image_id; });
    for (std::size_t i = 1; i < out.size(); ++i) {
      if (out[i].image_id == out[i - 1].image_id) {
        throw ValidationError("duplicate image id " + out[i].image_id);
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw ValidationError("malformed annotation file " +
                          descriptor.annotation_path.string() + ": " + e.what());
  }
}

void validate_descriptors(const std::vector<DatasetDescriptor>& descriptors) {
  if (descriptors.empty()) throw ValidationError("empty dataset pool");
  std::set<int> indices;
  std::set<std::string> ids;
  for (const auto& d : descriptors) {
    if (!indices.insert(d.affinity_index).second) {
      throw ValidationError("duplicate affinity_index " + std::to_string(d.affinity_index));
    }
    if (!ids.insert(d.dataset_id).second) {
      throw ValidationError("duplicate dataset_id " + d.dataset_id);
    }
  }
  const int n = static_cast<int>(descriptors.size());
  if (*indices.begin() != 0 || *indices.rbegin() != n - 1) {
    throw ValidationError("affinity indices must be contiguous from 0");
  }
}

PooledManifest build_manifest(std::vector<DatasetDescriptor> descriptors,
                              const TaxonomyMapping& taxonomy) {
  validate_descriptors(descriptors);
  std::sort(descriptors.begin(), descriptors.end(),
            [](const auto& a, const auto& b) { return a.affinity_index < b.affinity_index; });
  PooledManifest m;
  m.super_categories = taxonomy.super_categories();
  m.taxonomy_digest = taxonomy.digest();
  for (const auto& d : descriptors) {
    auto recs = ingest_dataset(d, taxonomy);
    m.records.insert(m.records.end(), std::make_move_iterator(recs.begin()),
                     std::make_move_iterator(recs.end()));
  }
  m.datasets = std::move(descriptors);
  return m;
}

std::vector<BalanceRow> balance_report(const PooledManifest& manifest) {
  std::vector<BalanceRow> rows;
  for (const auto& d : manifest.datasets) {
    rows.push_back({d.dataset_id, d.affinity_index, 0, 0});
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.affinity_index < b.affinity_index; });
  for (const auto& r : manifest.records) {
    auto& row = rows.at(static_cast<std::size_t>(r.source_dataset));
    row.images += 1;
    row.instances += r.boxes.size();
  }
  return rows;
}

std::string balance_csv(const std::vector<BalanceRow>& rows) {
  std::ostringstream os;
  os << "dataset_id,affinity_index,images,instances\n";
  for (const auto& r : rows) {
    os << r.dataset_id << ',' << r.affinity_index << ',' << r.images << ',' << r.instances << '\n';
  }
  return os.str();
}

std::string serialize_manifest(const PooledManifest& manifest, const fs::path& base_dir) {
  json header;
  header["kind"] = "manifest";
  header["version"] = 1;
  header["super_categories"] = manifest.super_categories;
  header["taxonomy_digest"] = manifest.taxonomy_digest;
  json datasets = json::array();
  for (const auto& d : manifest.datasets) {
    datasets.push_back({{"dataset_id", d.dataset_id},
                        {"annotation_path", rel_string(d.annotation_path, base_dir)},
                        {"image_root", rel_string(d.image_root, base_dir)},
                        {"media_kind", to_string(d.media_kind)},
                        {"affinity_index", d.affinity_index}});
  }
  header["datasets"] = datasets;
  json remap = json::array();
  for (const auto& [from, to] : manifest.affinity_remap) remap.push_back({from, to});
  header["affinity_remap"] = remap;

  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& r : manifest.records) {
    json rec;
    rec["image_id"] = r.image_id;
    rec["source_dataset"] = r.source_dataset;
    rec["width"] = r.width;
    rec["height"] = r.height;
    rec["image"] = rel_string(r.image_path, base_dir);
    json boxes = json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.cx, b.cy, b.w, b.h});
    rec["boxes"] = boxes;
    rec["class_ids"] = r.class_ids;
    json regions = json::array();
    for (const auto& g : r.ignore_regions) regions.push_back({g.x0, g.y0, g.x1, g.y1});
    rec["ignore_regions"] = regions;
    if (r.frame_index) rec["frame_index"] = *r.frame_index;
    out += rec.dump();
    out.push_back('\n');
  }
  return out;
}

PooledManifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  std::istringstream in(text);
  std::string line;
  PooledManifest m;
  bool have_header = false;
  std::size_t line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("kind", "") != "manifest") throw ValidationError("manifest: missing header line");
        if (j.at("version").get<int>() != 1) throw ValidationError("manifest: unsupported version");
        m.super_categories = j.at("super_categories").get<std::vector<std::string>>();
        m.taxonomy_digest = j.at("taxonomy_digest").get<std::string>();
        for (const auto& d : j.at("datasets")) {
          m.datasets.push_back({d.at("dataset_id").get<std::string>(),
                                resolve(d.at("annotation_path").get<std::string>(), base_dir),
                                resolve(d.at("image_root").get<std::string>(), base_dir),
                                media_kind_from_string(d.at("media_kind").get<std::string>()),
                                d.at("affinity_index").get<int>()});
        }
        for (const auto& p : j.at("affinity_remap")) m.affinity_remap[p.at(0)] = p.at(1);
        have_header = true;
        continue;
      }
      AnnotatedImage r;
      r.image_id = j.at("image_id").get<std::string>();
      r.source_dataset = j.at("source_dataset").get<int>();
      r.width = j.at("width").get<int>();
      r.height = j.at("height").get<int>();
      r.image_path = resolve(j.at("image").get<std::string>(), base_dir);
      for (const auto& b : j.at("boxes")) r.boxes.push_back({b.at(0), b.at(1), b.at(2), b.at(3)});
      r.class_ids = j.at("class_ids").get<std::vector<int>>();
      for (const auto& g : j.at("ignore_regions")) {
        r.ignore_regions.push_back({g.at(0), g.at(1), g.at(2), g.at(3)});
      }
      if (j.contains("frame_index")) r.frame_index = j.at("frame_index").get<int>();
      if (r.boxes.size() != r.class_ids.size()) {
        throw ValidationError("manifest: boxes/class_ids length mismatch in " + r.image_id);
      }
      if (r.source_dataset < 0 || r.source_dataset >= static_cast<int>(m.datasets.size())) {
        throw ValidationError("manifest: source_dataset out of range in " + r.image_id);
      }
      m.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ValidationError("manifest: line " + std::to_string(line_no) + ": " + e.what());
  }
  if (!have_header) throw ValidationError("manifest: empty file");
  return m;
}

void write_manifest(const PooledManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize_manifest(manifest, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

PooledManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

std::string manifest_digest(const PooledManifest& manifest, const fs::path& base_dir) {
  return sha256_hex(serialize_manifest(manifest, base_dir));
}

}  // namespace affdet
