#include "affdet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "affdet/errors.hpp"
#include "affdet/serialization.hpp"

namespace affdet {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'A', 'F', 'F', 'D', 'C', 'K', 'P', 'T'};

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw ValidationError("checkpoint: truncated file");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json header;
  header["config"] = detector_config_to_json(ckpt.config);
  const auto& m = ckpt.metadata;
  json remap = json::array();
  for (const auto& [from, to] : m.affinity_remap) remap.push_back({from, to});
  header["metadata"] = {{"seed", m.seed},
                        {"epochs", m.epochs},
                        {"steps", m.steps},
                        {"pool_digest", m.pool_digest},
                        {"dataset_ids", m.dataset_ids},
                        {"super_categories", m.super_categories},
                        {"affinity_remap", remap}};
  json table = json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.parameters) {
    table.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.data.size()}});
    offset += a.data.size();
  }
  header["tensors"] = table;
  const std::string header_text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;
  for (const auto& a : ckpt.parameters) {
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("checkpoint: bad magic");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint: unsupported schema version " + std::to_string(version));
  }
  const auto header_len = get<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw ValidationError("checkpoint: truncated header");
  Checkpoint ckpt;
  try {
    const json header = json::parse(bytes.substr(pos, header_len));
    pos += header_len;
    ckpt.config = detector_config_from_json(header.at("config"));
    const auto& m = header.at("metadata");
    ckpt.metadata.seed = m.at("seed").get<std::uint64_t>();
    ckpt.metadata.epochs = m.at("epochs").get<int>();
    ckpt.metadata.steps = m.at("steps").get<std::int64_t>();
    ckpt.metadata.pool_digest = m.at("pool_digest").get<std::string>();
    ckpt.metadata.dataset_ids = m.at("dataset_ids").get<std::vector<std::string>>();
    ckpt.metadata.super_categories = m.at("super_categories").get<std::vector<std::string>>();
    for (const auto& p : m.at("affinity_remap")) ckpt.metadata.affinity_remap[p.at(0)] = p.at(1);
    const std::size_t payload = pos;
    for (const auto& t : header.at("tensors")) {
      NamedArray a;
      a.name = t.at("name").get<std::string>();
      a.shape = t.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto count = t.at("count").get<std::uint64_t>();
      const std::size_t start = payload + offset * sizeof(float);
      if (start + count * sizeof(float) > bytes.size()) {
        throw ValidationError("checkpoint: tensor " + a.name + " out of range");
      }
      a.data.resize(count);
      std::memcpy(a.data.data(), bytes.data() + start, count * sizeof(float));
      ckpt.parameters.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

std::vector<NamedArray> export_parameters(Detector& detector) {
  std::vector<NamedArray> out;
  for (auto* p : detector.parameters()) {
    NamedArray a;
    a.name = p->name;
    a.shape = {p->value.rows(), p->value.cols()};
    a.data.assign(p->value.data(), p->value.data() + p->value.size());
    out.push_back(std::move(a));
  }
  return out;
}

void import_parameters(Detector& detector, const std::vector<NamedArray>& arrays) {
  auto params = detector.parameters();
  if (params.size() != arrays.size()) throw ValidationError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    const auto& a = arrays[i];
    if (a.name != p->name || a.shape.size() != 2 || a.shape[0] != p->value.rows() ||
        a.shape[1] != p->value.cols() || a.data.size() != static_cast<std::size_t>(p->value.size())) {
      throw ValidationError("checkpoint: tensor " + a.name + " does not match " + p->name);
    }
    std::memcpy(p->value.data(), a.data.data(), a.data.size() * sizeof(float));
  }
}

Detector make_detector(const Checkpoint& ckpt) {
  Detector det(ckpt.config, ckpt.metadata.seed);
  import_parameters(det, ckpt.parameters);
  return det;
}

}  // namespace affdet
