#include "affdet/serialization.hpp"

#include "affdet/errors.hpp"

namespace affdet {

using nlohmann::json;

json detector_config_to_json(const DetectorConfig& cfg) {
  return {{"input_size", cfg.input_size},
          {"grid_stride", cfg.grid_stride},
          {"num_classes", cfg.num_classes},
          {"num_datasets", cfg.num_datasets},
          {"channel_widths", cfg.channel_widths},
          {"loss_weights",
           {{"obj", cfg.loss_weights.obj},
            {"cls", cfg.loss_weights.cls},
            {"loc", cfg.loss_weights.loc},
            {"aff", cfg.loss_weights.aff}}},
          {"focal_gamma", cfg.focal_gamma},
          {"focal_alpha", cfg.focal_alpha}};
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig cfg;
  cfg.input_size = j.at("input_size").get<int>();
  cfg.grid_stride = j.at("grid_stride").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.num_datasets = j.at("num_datasets").get<int>();
  cfg.channel_widths = j.at("channel_widths").get<std::vector<int>>();
  const auto& w = j.at("loss_weights");
  cfg.loss_weights = {w.at("obj").get<double>(), w.at("cls").get<double>(), w.at("loc").get<double>(),
                      w.at("aff").get<double>()};
  cfg.focal_gamma = j.at("focal_gamma").get<double>();
  cfg.focal_alpha = j.at("focal_alpha").get<double>();
  cfg.validate();
  return cfg;
}

json detection_to_json(const Detection& d) {
  return {{"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}},
          {"objectness", d.objectness},
          {"class_scores", d.class_scores},
          {"class_id", d.class_id},
          {"affinity", d.affinity},
          {"assigned_dataset", d.assigned_dataset}};
}

Detection detection_from_json(const json& j) {
  Detection d;
  const auto& b = j.at("box");
  d.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
  d.objectness = j.at("objectness").get<double>();
  d.class_scores = j.at("class_scores").get<std::vector<double>>();
  d.class_id = j.value("class_id", 0);
  d.affinity = j.at("affinity").get<std::vector<double>>();
  d.assigned_dataset = j.at("assigned_dataset").get<int>();
  return d;
}

}  // namespace affdet
