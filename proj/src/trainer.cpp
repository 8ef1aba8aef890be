#include "affdet/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "affdet/errors.hpp"
#include "affdet/image_io.hpp"

namespace affdet {

void RunConfig::validate() const {
  if (epochs < 0) throw ValidationError("run: epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("run: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("run: learning rate must be > 0");
  if (weight_decay < 0) throw ValidationError("run: weight decay must be >= 0");
}

std::string step_log_json(const StepLog& log) {
  const nlohmann::json j = {{"step", log.step},
                            {"epoch", log.epoch},
                            {"l_obj", log.components.obj},
                            {"l_cls", log.components.cls},
                            {"l_loc", log.components.loc},
                            {"l_aff", log.components.aff},
                            {"total", log.total},
                            {"positives", log.positives}};
  return j.dump();
}

AdamW::AdamW(double learning_rate, double weight_decay, double beta1, double beta2, double eps)
    : lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(const std::vector<nn::Parameter<float>*>& params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(nn::Matrix<float>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(nn::Matrix<float>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const float step = static_cast<float>(lr_ / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (p->decays() && wd_ > 0) p->value *= static_cast<float>(1.0 - lr_ * wd_);
    m_[i] = b1 * m_[i] + (1.0f - b1) * p->grad;
    v_[i] = b2 * v_[i] + (1.0f - b2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= step * m_[i].array() / ((v_[i].array().sqrt() * inv_sqrt_bc2) + eps);
  }
}

TrainingSample prepare_sample(const AnnotatedImage& record, const cv::Mat& pixels, int input_size) {
  TrainingSample s;
  LetterboxTransform tf;
  s.input = letterbox(pixels, input_size, &tf);
  s.target = record;
  s.target.width = input_size;
  s.target.height = input_size;
  for (auto& b : s.target.boxes) b = tf.to_input(b);
  for (auto& g : s.target.ignore_regions) {
    const Box in = tf.to_input(Box::from_corners(g));
    g = in.corners();
  }
  return s;
}

std::vector<TrainingSample> load_samples(const PooledManifest& manifest, int input_size) {
  std::vector<TrainingSample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    samples.push_back(prepare_sample(r, read_image(r.image_path), input_size));
  }
  return samples;
}

TrainOutcome train_samples(const std::vector<TrainingSample>& samples, const DetectorConfig& cfg,
                           const RunConfig& run, TrainingMetadata metadata,
                           const StepCallback& on_step) {
  run.validate();
  cfg.validate();
  if (samples.empty()) throw ValidationError("train: no training samples");
  for (const auto& s : samples) {
    if (s.target.source_dataset < 0 || s.target.source_dataset >= cfg.num_datasets) {
      throw ValidationError("train: sample " + s.target.image_id +
                            " has a source dataset outside the configured pool");
    }
  }

  Detector det(cfg, run.seed);
  AdamW opt(run.learning_rate, run.weight_decay);
  std::mt19937_64 rng(run.seed + 0x9e3779b97f4a7c15ULL);

  std::vector<std::vector<std::size_t>> by_dataset(static_cast<std::size_t>(cfg.num_datasets));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_dataset[static_cast<std::size_t>(samples[i].target.source_dataset)].push_back(i);
  }
  std::vector<int> nonempty;
  for (int d = 0; d < cfg.num_datasets; ++d) {
    if (!by_dataset[static_cast<std::size_t>(d)].empty()) nonempty.push_back(d);
  }

  TrainOutcome outcome;
  std::int64_t step = 0;
  int epochs_done = 0;
  std::vector<std::size_t> order(samples.size());
  const std::size_t batch = static_cast<std::size_t>(run.batch_size);
  bool stop = false;
  for (int epoch = 0; epoch < run.epochs && !stop; ++epoch) {
    if (run.balanced_sampler) {
      for (auto& idx : order) {
        const int d = nonempty[std::uniform_int_distribution<std::size_t>(0, nonempty.size() - 1)(rng)];
        const auto& pool = by_dataset[static_cast<std::size_t>(d)];
        idx = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      }
    } else {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
    }
    LossComponents epoch_sum;
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<cv::Mat> inputs;
      std::vector<TargetAssignment> targets;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = samples[order[i]];
        inputs.push_back(s.input);
        targets.push_back(assign_targets(s.target, cfg));
      }
      det.zero_grad();
      const auto outputs = det.forward(make_input_batch<float>(inputs));
      const auto loss = total_loss(outputs, targets, cfg);
      if (!std::isfinite(loss.total)) {
        std::ostringstream os;
        os << "train: non-finite loss at step " << step << " (obj " << loss.components.obj << ", cls "
           << loss.components.cls << ", loc " << loss.components.loc << ", aff " << loss.components.aff
           << ")";
        throw std::runtime_error(os.str());
      }
      det.backward(loss.grad);
      opt.step(det.parameters());

      StepLog entry{step, epoch, loss.components, loss.total, loss.num_positive};
      outcome.log.push_back(entry);
      if (on_step) on_step(entry);
      epoch_sum.obj += loss.components.obj;
      epoch_sum.cls += loss.components.cls;
      epoch_sum.loc += loss.components.loc;
      epoch_sum.aff += loss.components.aff;
      epoch_total += loss.total;
      ++epoch_steps;
      ++step;
      if (run.max_steps >= 0 && step >= run.max_steps) {
        stop = true;
        break;
      }
    }
    ++epochs_done;
    const double n = static_cast<double>(std::max<std::size_t>(1, epoch_steps));
    spdlog::info("epoch {}: total {:.4f} (obj {:.4f} cls {:.4f} loc {:.4f} aff {:.4f})", epoch,
                 epoch_total / n, epoch_sum.obj / n, epoch_sum.cls / n, epoch_sum.loc / n,
                 epoch_sum.aff / n);
  }

  metadata.seed = run.seed;
  metadata.epochs = epochs_done;
  metadata.steps = step;
  outcome.checkpoint.config = cfg;
  outcome.checkpoint.parameters = export_parameters(det);
  outcome.checkpoint.metadata = std::move(metadata);
  return outcome;
}

TrainOutcome train(const PooledManifest& manifest, const DetectorConfig& cfg, const RunConfig& run,
                   const StepCallback& on_step, std::string pool_digest) {
  if (manifest.records.empty()) throw ValidationError("train: manifest has no records");
  if (static_cast<std::size_t>(cfg.num_datasets) != manifest.num_datasets()) {
    throw ValidationError("train: num_datasets (" + std::to_string(cfg.num_datasets) +
                          ") does not match the pool size (" +
                          std::to_string(manifest.num_datasets()) + ")");
  }
  if (static_cast<std::size_t>(cfg.num_classes) != manifest.super_categories.size()) {
    throw ValidationError("train: num_classes does not match the manifest's super-categories");
  }
  TrainingMetadata meta;
  meta.pool_digest = pool_digest.empty() ? manifest_digest(manifest, "/") : std::move(pool_digest);
  meta.dataset_ids = manifest.dataset_ids();
  meta.super_categories = manifest.super_categories;
  meta.affinity_remap = manifest.affinity_remap;
  return train_samples(load_samples(manifest, cfg.input_size), cfg, run, std::move(meta), on_step);
}

PooledManifest make_subpool(const PooledManifest& manifest, const std::set<int>& keep) {
  if (keep.empty()) throw ValidationError("subpool: keep set is empty");
  std::map<int, int> remap;
  int next = 0;
  for (int old : keep) {  // std::set iterates in ascending order
    if (old < 0 || old >= static_cast<int>(manifest.num_datasets())) {
      throw ValidationError("subpool: dataset index " + std::to_string(old) + " not in pool");
    }
    remap[old] = next++;
  }
  PooledManifest out;
  out.super_categories = manifest.super_categories;
  out.taxonomy_digest = manifest.taxonomy_digest;
  out.affinity_remap = remap;
  for (const auto& d : manifest.datasets) {
    auto it = remap.find(d.affinity_index);
    if (it == remap.end()) continue;
    DatasetDescriptor nd = d;
    nd.affinity_index = it->second;
    out.datasets.push_back(nd);
  }
  std::sort(out.datasets.begin(), out.datasets.end(),
            [](const auto& a, const auto& b) { return a.affinity_index < b.affinity_index; });
  for (const auto& r : manifest.records) {
    auto it = remap.find(r.source_dataset);
    if (it == remap.end()) continue;
    AnnotatedImage nr = r;
    nr.source_dataset = it->second;
    out.records.push_back(std::move(nr));
  }
  if (out.records.empty()) throw ValidationError("subpool: no records left");
  return out;
}

}  // namespace affdet
