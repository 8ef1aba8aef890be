#include "affdet/nn.hpp"

#include <cmath>

namespace affdet::nn {

template <typename T>
bool Parameter<T>::decays() const {
  return name.size() >= 6 && name.compare(name.size() - 6, 6, "weight") == 0;
}

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                  int stride)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(kernel / 2) {
  weight_.name = name + ".weight";
  weight_.value = Matrix<T>::Zero(out_channels, in_channels * kernel * kernel);
  weight_.zero_grad();
  bias_.name = name + ".bias";
  bias_.value = Matrix<T>::Zero(out_channels, 1);
  bias_.zero_grad();
}

template <typename T>
void Conv2d<T>::init(std::mt19937_64& rng, T bias_value) {
  const double fan_in = static_cast<double>(in_channels_) * kernel_ * kernel_;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (Eigen::Index i = 0; i < weight_.value.size(); ++i) {
    weight_.value.data()[i] = static_cast<T>(dist(rng));
  }
  bias_.value.setConstant(bias_value);
}

template <typename T>
void Conv2d<T>::im2col(const FeatureMap<T>& x, int out_h, int out_w) {
  const int k = kernel_;
  const Eigen::Index out_sp = static_cast<Eigen::Index>(out_h) * out_w;
  const Eigen::Index in_sp = x.spatial();
  cols_.resize(static_cast<Eigen::Index>(in_channels_) * k * k, out_sp * x.batch);
  for (int c = 0; c < in_channels_; ++c) {
    const T* src_c = x.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols_.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int b = 0; b < x.batch; ++b) {
          const T* src = src_c + b * in_sp;
          T* out = dst + b * out_sp;
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            T* row_out = out + static_cast<Eigen::Index>(oy) * out_w;
            if (iy < 0 || iy >= x.height) {
              std::fill(row_out, row_out + out_w, T(0));
              continue;
            }
            const T* row_in = src + static_cast<Eigen::Index>(iy) * x.width;
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              row_out[ox] = (ix >= 0 && ix < x.width) ? row_in[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const Matrix<T>& dcols, FeatureMap<T>& dx) const {
  const int k = kernel_;
  const Eigen::Index out_sp = static_cast<Eigen::Index>(out_h_) * out_w_;
  const Eigen::Index in_sp = dx.spatial();
  dx.data.setZero();
  for (int c = 0; c < in_channels_; ++c) {
    T* dst_c = dx.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = dcols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int b = 0; b < dx.batch; ++b) {
          T* dst = dst_c + b * in_sp;
          const T* in = src + b * out_sp;
          for (int oy = 0; oy < out_h_; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= dx.height) continue;
            T* row_dst = dst + static_cast<Eigen::Index>(iy) * dx.width;
            const T* row_in = in + static_cast<Eigen::Index>(oy) * out_w_;
            for (int ox = 0; ox < out_w_; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < dx.width) row_dst[ix] += row_in[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
FeatureMap<T> Conv2d<T>::forward(const FeatureMap<T>& x) {
  if (x.channels() != in_channels_) {
    throw std::invalid_argument(weight_.name + ": channel mismatch");
  }
  in_batch_ = x.batch;
  in_h_ = x.height;
  in_w_ = x.width;
  out_h_ = (x.height + 2 * pad_ - kernel_) / stride_ + 1;
  out_w_ = (x.width + 2 * pad_ - kernel_) / stride_ + 1;

  if (kernel_ == 1 && stride_ == 1) {
    cols_ = x.data;
  } else {
    im2col(x, out_h_, out_w_);
  }
  FeatureMap<T> y;
  y.batch = x.batch;
  y.height = out_h_;
  y.width = out_w_;
  y.data.noalias() = weight_.value * cols_;
  y.data.colwise() += bias_.value.col(0);
  return y;
}

template <typename T>
FeatureMap<T> Conv2d<T>::backward(const FeatureMap<T>& dy, bool need_input_grad) {
  weight_.grad.noalias() += dy.data * cols_.transpose();
  bias_.grad.col(0) += dy.data.rowwise().sum();
  FeatureMap<T> dx;
  if (!need_input_grad) return dx;
  dx.batch = in_batch_;
  dx.height = in_h_;
  dx.width = in_w_;
  if (kernel_ == 1 && stride_ == 1) {
    dx.data.noalias() = weight_.value.transpose() * dy.data;
    return dx;
  }
  Matrix<T> dcols;
  dcols.noalias() = weight_.value.transpose() * dy.data;
  dx.data.resize(in_channels_, static_cast<Eigen::Index>(in_batch_) * in_h_ * in_w_);
  col2im(dcols, dx);
  return dx;
}

template <typename T>
FeatureMap<T> SiLU<T>::forward(const FeatureMap<T>& x) {
  input_ = x.data;
  FeatureMap<T> y = x;
  y.data = x.data.unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
  return y;
}

template <typename T>
FeatureMap<T> SiLU<T>::backward(const FeatureMap<T>& dy) const {
  FeatureMap<T> dx = dy;
  dx.data = dy.data.binaryExpr(input_, [](T g, T v) {
    const T s = T(1) / (T(1) + std::exp(-v));
    return g * s * (T(1) + v * (T(1) - s));
  });
  return dx;
}

template struct Parameter<float>;
template struct Parameter<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class SiLU<float>;
template class SiLU<double>;

}  // namespace affdet::nn
