#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "affdet/errors.hpp"
#include "affdet/trainer.hpp"
#include "test_util.hpp"

using namespace affdet;

namespace {

DetectorConfig tiny_config(int datasets = 2) {
  DetectorConfig cfg;
  cfg.input_size = 64;
  cfg.grid_stride = 8;
  cfg.channel_widths = {8, 16, 24, 24};
  cfg.num_classes = 1;
  cfg.num_datasets = datasets;
  return cfg;
}

// Gray canvas with four solid vehicles-like blocks.
TrainingSample four_object_sample() {
  TrainingSample s;
  s.input = cv::Mat(64, 64, CV_8UC3, cv::Scalar(90, 110, 100));
  s.target.width = s.target.height = 64;
  s.target.source_dataset = 1;
  const std::vector<Rect> rects = {{4, 6, 20, 16}, {36, 4, 58, 18}, {8, 36, 22, 58}, {34, 38, 60, 56}};
  const cv::Scalar colors[] = {{30, 30, 220}, {220, 40, 40}, {40, 200, 200}, {250, 250, 250}};
  for (std::size_t i = 0; i < rects.size(); ++i) {
    const auto& r = rects[i];
    cv::rectangle(s.input, cv::Rect(int(r.x0), int(r.y0), int(r.width()), int(r.height())), colors[i], cv::FILLED);
    s.target.boxes.push_back({(r.x0 + r.x1) / 2, (r.y0 + r.y1) / 2, r.width(), r.height()});
    s.target.class_ids.push_back(0);
  }
  return s;
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

PooledManifest six_dataset_pool() {
  PooledManifest m;
  m.super_categories = {"vehicle"};
  for (int i = 0; i < 6; ++i) {
    m.datasets.push_back({"ds" + std::to_string(i), "a.json", "img", MediaKind::ImageCollection, i});
    for (int k = 0; k <= i; ++k) {
      AnnotatedImage r;
      r.image_id = "ds" + std::to_string(i) + "_" + std::to_string(k);
      r.source_dataset = i;
      r.width = r.height = 100;
      for (int b = 0; b < (k % 3) + 1; ++b) {
        r.boxes.push_back({10.0 + 20 * b, 50, 8, 8});
        r.class_ids.push_back(0);
      }
      m.records.push_back(r);
    }
  }
  return m;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("overfitting one four-object image drops the loss below 10%") {
  const std::vector<TrainingSample> samples{four_object_sample()};
  RunConfig run;
  run.epochs = 200;
  run.batch_size = 1;
  run.seed = 3;
  const auto out = train_samples(samples, tiny_config(), run, {});
  REQUIRE(out.log.size() == 200);
  const double first = out.log.front().total, last = out.log.back().total;
  INFO("initial " << first << " final " << last);
  CHECK(last < 0.1 * first);
  CHECK(out.log.front().positives == 4);

  std::vector<double> head, tail;
  for (std::size_t i = 0; i < 20; ++i) {
    head.push_back(out.log[i].total);
    tail.push_back(out.log[out.log.size() - 1 - i].total);
  }
  CHECK(median(tail) < median(head));
  CHECK(out.checkpoint.metadata.steps == 200);
  CHECK(out.checkpoint.metadata.epochs == 200);
}

TEST_CASE("zero epochs returns the initialization") {
  const std::vector<TrainingSample> samples{four_object_sample()};
  RunConfig run;
  run.epochs = 0;
  run.seed = 21;
  const auto out = train_samples(samples, tiny_config(), run, {});
  CHECK(out.log.empty());
  Detector init(tiny_config(), 21);
  CHECK(out.checkpoint.parameters == export_parameters(init));
}

TEST_CASE("same seed gives bit-identical checkpoints") {
  std::vector<TrainingSample> samples{four_object_sample(), four_object_sample()};
  samples[1].target.source_dataset = 0;
  cv::flip(samples[1].input, samples[1].input, 1);
  for (auto& b : samples[1].target.boxes) b.cx = 64 - b.cx;
  RunConfig run;
  run.epochs = 3;
  run.batch_size = 1;
  run.seed = 8;
  const auto a = train_samples(samples, tiny_config(), run, {});
  const auto b = train_samples(samples, tiny_config(), run, {});
  CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
  run.seed = 9;
  const auto c = train_samples(samples, tiny_config(), run, {});
  CHECK(serialize_checkpoint(a.checkpoint) != serialize_checkpoint(c.checkpoint));
  run.seed = 8;
  run.balanced_sampler = true;
  const auto d1 = train_samples(samples, tiny_config(), run, {});
  const auto d2 = train_samples(samples, tiny_config(), run, {});
  CHECK(serialize_checkpoint(d1.checkpoint) == serialize_checkpoint(d2.checkpoint));
}

TEST_CASE("max_steps and the step callback") {
  const std::vector<TrainingSample> samples{four_object_sample()};
  RunConfig run;
  run.epochs = 50;
  run.max_steps = 7;
  std::vector<StepLog> seen;
  const auto out = train_samples(samples, tiny_config(), run, {}, [&](const StepLog& l) { seen.push_back(l); });
  CHECK(seen.size() == 7);
  CHECK(out.checkpoint.metadata.steps == 7);
  const auto j = nlohmann::json::parse(step_log_json(seen.back()));
  for (const char* k : {"step", "epoch", "l_obj", "l_cls", "l_loc", "l_aff", "total", "positives"}) {
    CHECK(j.contains(k));
  }
  CHECK(j["total"].get<double>() == doctest::Approx(seen.back().total));
}

TEST_CASE("run config validation") {
  RunConfig run;
  CHECK(run.learning_rate == 1e-3);
  CHECK(run.weight_decay == 5e-4);
  run.batch_size = 0;
  CHECK_THROWS_AS(run.validate(), ValidationError);
  run = {};
  run.epochs = -1;
  CHECK_THROWS_AS(run.validate(), ValidationError);
  run = {};
  run.learning_rate = 0;
  CHECK_THROWS_AS(run.validate(), ValidationError);
}

TEST_CASE("train rejects a dataset-count mismatch") {
  auto m = six_dataset_pool();
  CHECK_THROWS_AS(train(m, tiny_config(2), RunConfig{}), ValidationError);
  PooledManifest empty;
  CHECK_THROWS_AS(train(empty, tiny_config(1), RunConfig{}), ValidationError);
}

TEST_CASE("AdamW: first step moves by lr against the gradient; decay only on weights") {
  nn::Parameter<float> w{"head.obj.weight", nn::Matrix<float>::Constant(1, 2, 1.0f), nn::Matrix<float>::Zero(1, 2)};
  nn::Parameter<float> b{"head.obj.bias", nn::Matrix<float>::Constant(1, 1, 1.0f), nn::Matrix<float>::Zero(1, 1)};
  REQUIRE(w.decays());
  REQUIRE(!b.decays());
  w.grad << 0.5f, -2.0f;
  b.grad << 3.0f;
  AdamW opt(1e-3, 0.1);
  opt.step({&w, &b});
  // bias-corrected Adam step is lr * sign(g) on the first update
  CHECK(w.value(0, 0) == doctest::Approx(1.0 - 1e-3 * 0.1 - 1e-3).epsilon(1e-5));
  CHECK(w.value(0, 1) == doctest::Approx(1.0 - 1e-3 * 0.1 + 1e-3).epsilon(1e-5));
  CHECK(b.value(0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-5));
  CHECK(opt.steps() == 1);
  // zero gradient: only decoupled decay acts on the weight
  nn::Parameter<float> z{"trunk.0.weight", nn::Matrix<float>::Constant(1, 1, 2.0f), nn::Matrix<float>::Zero(1, 1)};
  AdamW opt2(1e-3, 0.5);
  opt2.step({&z});
  CHECK(z.value(0, 0) == doctest::Approx(2.0 * (1 - 1e-3 * 0.5)).epsilon(1e-6));
}

TEST_CASE("prepare_sample letterboxes and maps boxes") {
  AnnotatedImage r;
  r.width = 200;
  r.height = 100;
  r.boxes = {{100, 50, 40, 20}};
  r.class_ids = {0};
  r.ignore_regions = {{0, 0, 20, 10}};
  cv::Mat px(100, 200, CV_8UC3, cv::Scalar(1, 2, 3));
  const auto s = prepare_sample(r, px, 64);
  CHECK(s.input.rows == 64);
  CHECK(s.input.cols == 64);
  REQUIRE(s.target.boxes.size() == 1);
  // scale 0.32, vertical padding centers the content
  CHECK(s.target.boxes[0].w == doctest::Approx(40 * 0.32));
  CHECK(s.target.boxes[0].cx == doctest::Approx(32));
  CHECK(s.target.boxes[0].cy == doctest::Approx(32));
  CHECK(s.target.width == 64);
  REQUIRE(s.target.ignore_regions.size() == 1);
  CHECK(s.target.ignore_regions[0].width() == doctest::Approx(20 * 0.32));
}

TEST_CASE("subpool keep {4,0} re-densifies ascending") {
  const auto m = six_dataset_pool();
  const auto s = make_subpool(m, {4, 0});
  REQUIRE(s.num_datasets() == 2);
  CHECK(s.datasets[0].dataset_id == "ds0");
  CHECK(s.datasets[0].affinity_index == 0);
  CHECK(s.datasets[1].dataset_id == "ds4");
  CHECK(s.datasets[1].affinity_index == 1);
  CHECK(s.affinity_remap == std::map<int, int>{{0, 0}, {4, 1}});
  CHECK(s.records.size() == 1 + 5);
  for (const auto& r : s.records) CHECK(r.source_dataset == (r.image_id.rfind("ds4", 0) == 0 ? 1 : 0));
  CHECK_NOTHROW(validate_descriptors(s.datasets));
}

TEST_CASE("subpool of everything is an identity up to the remap") {
  const auto m = six_dataset_pool();
  auto s = make_subpool(m, {0, 1, 2, 3, 4, 5});
  CHECK(s.datasets == m.datasets);
  CHECK(s.records == m.records);
  for (int i = 0; i < 6; ++i) CHECK(s.affinity_remap.at(i) == i);
}

TEST_CASE("subpool errors") {
  const auto m = six_dataset_pool();
  CHECK_THROWS_AS(make_subpool(m, {}), ValidationError);
  CHECK_THROWS_AS(make_subpool(m, {6}), ValidationError);
  auto sparse = m;
  std::erase_if(sparse.records, [](const AnnotatedImage& r) { return r.source_dataset == 2; });
  CHECK_THROWS_AS(make_subpool(sparse, {2}), ValidationError);
}

TEST_CASE("property: subpool instance counts equal the member-dataset sums") {
  const auto m = six_dataset_pool();
  const auto full = balance_report(m);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::set<int> keep;
    while (keep.empty()) {
      for (int i = 0; i < 6; ++i) {
        if (rng() % 2) keep.insert(i);
      }
    }
    const auto s = make_subpool(m, keep);
    const auto rows = balance_report(s);
    REQUIRE(rows.size() == keep.size());
    std::size_t expect = 0, got = 0;
    for (int k : keep) expect += full[static_cast<std::size_t>(k)].instances;
    for (const auto& r : rows) got += r.instances;
    REQUIRE(got == expect);
    int idx = 0;
    for (int k : keep) {
      REQUIRE(rows[static_cast<std::size_t>(idx)].dataset_id == full[static_cast<std::size_t>(k)].dataset_id);
      REQUIRE(rows[static_cast<std::size_t>(idx)].instances == full[static_cast<std::size_t>(k)].instances);
      ++idx;
    }
  }
}

}
