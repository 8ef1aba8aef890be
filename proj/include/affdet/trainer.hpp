#pragma once

#include <cstdint>
#include <functional>
#include <opencv2/core.hpp>
#include <set>
#include <string>
#include <vector>

#include "affdet/checkpoint.hpp"
#include "affdet/corpus.hpp"
#include "affdet/losses.hpp"
#include "affdet/model.hpp"

namespace affdet {

struct RunConfig {
  int epochs = 10;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  bool deterministic = true;
  // Draw each batch slot from a uniformly chosen dataset instead of
  // shuffling the pooled records.
  bool balanced_sampler = false;
  // Stop after this many optimizer steps (< 0: run all epochs).
  std::int64_t max_steps = -1;

  void validate() const;
};

struct StepLog {
  std::int64_t step = 0;
  int epoch = 0;
  LossComponents components;
  double total = 0.0;
  std::size_t positives = 0;
};

std::string step_log_json(const StepLog& log);

// Adam with decoupled weight decay; decay applies to weights, not biases.
class AdamW {
 public:
  AdamW(double learning_rate, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);

  void step(const std::vector<nn::Parameter<float>*>& params);
  std::int64_t steps() const { return t_; }

 private:
  double lr_;
  double wd_;
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
  std::vector<nn::Matrix<float>> m_;
  std::vector<nn::Matrix<float>> v_;
};

// A letterboxed input with ground truth mapped into the input frame.
struct TrainingSample {
  cv::Mat input;
  AnnotatedImage target;
};

TrainingSample prepare_sample(const AnnotatedImage& record, const cv::Mat& pixels, int input_size);
std::vector<TrainingSample> load_samples(const PooledManifest& manifest, int input_size);

using StepCallback = std::function<void(const StepLog&)>;

struct TrainOutcome {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
};

// Core loop over prepared samples. metadata is copied into the checkpoint
// (seed, epochs and steps are filled in here).
TrainOutcome train_samples(const std::vector<TrainingSample>& samples, const DetectorConfig& cfg,
                           const RunConfig& run, TrainingMetadata metadata,
                           const StepCallback& on_step = {});

// Loads the manifest's images and trains. pool_digest defaults to the digest
// of the manifest serialized relative to "/".
TrainOutcome train(const PooledManifest& manifest, const DetectorConfig& cfg, const RunConfig& run,
                   const StepCallback& on_step = {}, std::string pool_digest = {});

// Keeps the listed datasets and re-densifies their affinity indices in
// ascending original order; the old->new map is recorded in the result.
PooledManifest make_subpool(const PooledManifest& manifest, const std::set<int>& keep);

}  // namespace affdet
