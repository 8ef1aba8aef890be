#pragma once

#include <Eigen/Core>
#include <random>
#include <string>

namespace affdet::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  bool decays() const;  // weights decay, biases do not
};

// A batch of feature maps. Rows are channels; columns run over
// (batch, y, x) with x fastest.
template <typename T>
struct FeatureMap {
  int batch = 0;
  int height = 0;
  int width = 0;
  Matrix<T> data;

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index spatial() const { return static_cast<Eigen::Index>(height) * width; }
};

// Square-kernel convolution with "same" padding (kernel / 2), lowered to a
// GEMM over im2col columns. Caches its input columns for backward.
template <typename T>
class Conv2d {
 public:
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride);

  // He-normal weights, constant bias.
  void init(std::mt19937_64& rng, T bias_value = T(0));

  FeatureMap<T> forward(const FeatureMap<T>& x);
  // Accumulates parameter gradients; returns the input gradient when asked.
  FeatureMap<T> backward(const FeatureMap<T>& dy, bool need_input_grad);

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }

 private:
  void im2col(const FeatureMap<T>& x, int out_h, int out_w);
  void col2im(const Matrix<T>& dcols, FeatureMap<T>& dx) const;

  int in_channels_;
  int out_channels_;
  int kernel_;
  int stride_;
  int pad_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Matrix<T> cols_;
  int in_batch_ = 0;
  int in_h_ = 0;
  int in_w_ = 0;
  int out_h_ = 0;
  int out_w_ = 0;
};

// x * sigmoid(x).
template <typename T>
class SiLU {
 public:
  FeatureMap<T> forward(const FeatureMap<T>& x);
  FeatureMap<T> backward(const FeatureMap<T>& dy) const;

 private:
  Matrix<T> input_;
};

}  // namespace affdet::nn
