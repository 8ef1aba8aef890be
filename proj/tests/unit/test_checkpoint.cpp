#include <doctest.h>

#include <random>

#include "affdet/checkpoint.hpp"
#include "affdet/errors.hpp"
#include "affdet/image_io.hpp"
#include "affdet/pipeline.hpp"
#include "test_util.hpp"

using namespace affdet;

namespace {

Checkpoint sample_checkpoint(std::uint64_t seed) {
  DetectorConfig cfg;
  cfg.input_size = 64;
  cfg.grid_stride = 16;
  cfg.channel_widths = {4, 8, 8, 8};
  cfg.num_classes = 2;
  cfg.num_datasets = 3;
  cfg.focal_gamma = 2.0;
  cfg.loss_weights.loc = 0.07;
  Detector det(cfg, seed);
  Checkpoint c;
  c.config = cfg;
  c.parameters = export_parameters(det);
  c.metadata.seed = seed;
  c.metadata.epochs = 4;
  c.metadata.steps = 123;
  c.metadata.pool_digest = "abc123";
  c.metadata.dataset_ids = {"A", "B", "C"};
  c.metadata.super_categories = {"vehicle", "person"};
  c.metadata.affinity_remap = {{0, 0}, {4, 1}, {5, 2}};
  return c;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("serialize and parse round-trip") {
  const auto c = sample_checkpoint(3);
  const auto bytes = serialize_checkpoint(c);
  CHECK(bytes.rfind("AFFDCKPT", 0) == 0);
  const auto back = parse_checkpoint(bytes);
  CHECK(back == c);
  CHECK(serialize_checkpoint(back) == bytes);
}

TEST_CASE("save and load through a file") {
  testutil::TempDir dir("ckpt");
  const auto c = sample_checkpoint(4);
  save_checkpoint(c, dir / "sub/model.ckpt");
  CHECK(load_checkpoint(dir / "sub/model.ckpt") == c);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), ValidationError);
}

TEST_CASE("restored detector reproduces the original outputs") {
  const auto c = sample_checkpoint(5);
  Detector original(c.config, 5);
  auto restored = make_detector(c);
  nn::FeatureMap<float> x;
  x.batch = 1;
  x.height = x.width = 64;
  x.data = nn::Matrix<float>::Random(3, 64 * 64).cwiseAbs();
  const auto a = original.forward(x), b = restored.forward(x);
  CHECK(a.obj == b.obj);
  CHECK(a.cls == b.cls);
  CHECK(a.box == b.box);
  CHECK(a.aff == b.aff);
}

TEST_CASE("corrupt containers are rejected") {
  const auto bytes = serialize_checkpoint(sample_checkpoint(6));
  CHECK_THROWS_AS(parse_checkpoint("NOTACKPT" + bytes.substr(8)), ValidationError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, 10)), ValidationError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, 40)), ValidationError);
  CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 4)), ValidationError);
  auto wrong_version = bytes;
  wrong_version[8] = 9;
  CHECK_THROWS_AS(parse_checkpoint(wrong_version), ValidationError);
}

TEST_CASE("importing mismatched parameters fails") {
  auto c = sample_checkpoint(7);
  Detector det(c.config, 1);
  auto arrays = c.parameters;
  arrays.pop_back();
  CHECK_THROWS_AS(import_parameters(det, arrays), ValidationError);
  arrays = c.parameters;
  arrays[0].shape[0] += 1;
  CHECK_THROWS_AS(import_parameters(det, arrays), ValidationError);
  arrays = c.parameters;
  std::swap(arrays[0], arrays[1]);
  CHECK_THROWS_AS(import_parameters(det, arrays), ValidationError);
}

TEST_CASE("detection on files and in-memory images agree") {
  testutil::TempDir dir("ckpt_detect");
  auto det = make_detector(sample_checkpoint(6));
  std::mt19937_64 rng(6);
  std::vector<cv::Mat> images;
  std::vector<AnnotatedImage> records;
  for (int i = 0; i < 3; ++i) {
    cv::Mat m(40 + 30 * i, 90 - 10 * i, CV_8UC3);
    cv::randu(m, 0, 255);
    images.push_back(m);
    AnnotatedImage rec;
    rec.image_id = std::to_string(i);
    rec.width = m.cols;
    rec.height = m.rows;
    rec.image_path = dir / (rec.image_id + ".png");
    write_png(rec.image_path, m);
    records.push_back(rec);
  }
  DetectOptions opts;
  opts.conf_threshold = 0.0;
  opts.batch_size = 2;
  const auto from_files = detect_records(det, records, opts);
  const auto from_memory = detect_images(det, images, opts);
  REQUIRE(from_files.size() == 3);
  REQUIRE(from_memory.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(from_files[i].size() == from_memory[i].size());
    CHECK(!from_files[i].empty());
    for (std::size_t j = 0; j < from_files[i].size(); ++j) {
      const auto& a = from_files[i][j];
      const auto& b = from_memory[i][j];
      CHECK(a.box == b.box);
      CHECK(a.objectness == b.objectness);
      CHECK(a.affinity == b.affinity);
      // clipped to the source frame
      const auto r = a.box.corners();
      CHECK(r.x0 >= 0.0);
      CHECK(r.y0 >= 0.0);
      CHECK(r.x1 <= images[i].cols);
      CHECK(r.y1 <= images[i].rows);
    }
  }
  opts.batch_size = 0;
  CHECK_THROWS_AS(detect_images(det, images, opts), ValidationError);
}

}
