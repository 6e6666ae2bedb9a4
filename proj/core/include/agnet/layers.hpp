#pragma once

// Forward/backward kernels for the small residual CNN. Everything here is
// templated on the scalar type so the network runs in float while gradient
// checks instantiate the same code in double.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "agnet/error.hpp"
#include "agnet/tensor.hpp"

namespace agnet::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using VectorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // out x in x k x k
  Tensor<T> bias;    // out
  int stride = 1;
  int padding = 0;

  int out_channels() const { return weight.dim(0); }
  int in_channels() const { return weight.dim(1); }
  int kernel() const { return weight.dim(2); }

  int output_extent(int input_extent) const {
    return (input_extent + 2 * padding - kernel()) / stride + 1;
  }
};

template <typename T>
Conv2d<T> make_conv2d(int in_channels, int out_channels, int kernel, int stride, int padding) {
  Conv2d<T> conv;
  conv.weight = Tensor<T>({out_channels, in_channels, kernel, kernel});
  conv.bias = Tensor<T>({out_channels});
  conv.stride = stride;
  conv.padding = padding;
  return conv;
}

namespace detail {

// Unfolds x (C x H x W) into a (C*k*k) x (Ho*Wo) row-major matrix.
template <typename T>
std::vector<T> im2col(const Tensor<T>& x, int k, int stride, int pad, int out_h, int out_w) {
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  const std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  std::vector<T> out(static_cast<std::size_t>(channels) * k * k * cols, T{0});
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = out.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= width) continue;
            row[static_cast<std::size_t>(oy) * out_w + ox] = x(c, iy, ix);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void col2im_add(const RowMatrix<T>& cols, int k, int stride, int pad, int out_h, int out_w,
                Tensor<T>& dx) {
  const int channels = dx.dim(0), height = dx.dim(1), width = dx.dim(2);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) *
                                         static_cast<std::size_t>(out_h) * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= width) continue;
            dx(c, iy, ix) += row[static_cast<std::size_t>(oy) * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d_forward(const Conv2d<T>& conv, const Tensor<T>& x) {
  require_feature_map(x, "conv2d");
  if (x.dim(0) != conv.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(x.dim(0)) + " channels, layer expects " +
                     std::to_string(conv.in_channels()));
  }
  const int k = conv.kernel();
  const int out_h = conv.output_extent(x.dim(1));
  const int out_w = conv.output_extent(x.dim(2));
  if (out_h <= 0 || out_w <= 0) throw ShapeError("conv2d: input " + x.shape_string() + " too small");
  const int patch = conv.in_channels() * k * k;
  const int spatial = out_h * out_w;

  std::vector<T> cols = detail::im2col(x, k, conv.stride, conv.padding, out_h, out_w);
  Tensor<T> y({conv.out_channels(), out_h, out_w});
  MatrixMap<T> out(y.data(), conv.out_channels(), spatial);
  ConstMatrixMap<T> w(conv.weight.data(), conv.out_channels(), patch);
  ConstMatrixMap<T> c(cols.data(), patch, spatial);
  out.noalias() = w * c;
  out.colwise() += ConstVectorMap<T>(conv.bias.data(), conv.out_channels());
  return y;
}

// Accumulates parameter gradients into `grad`; writes the input gradient to
// `dx` when it is non-null.
template <typename T>
void conv2d_backward(const Conv2d<T>& conv, const Tensor<T>& x, const Tensor<T>& dy,
                     Conv2d<T>& grad, std::type_identity_t<Tensor<T>>* dx) {
  const int k = conv.kernel();
  const int out_h = dy.dim(1), out_w = dy.dim(2);
  const int patch = conv.in_channels() * k * k;
  const int spatial = out_h * out_w;

  std::vector<T> cols = detail::im2col(x, k, conv.stride, conv.padding, out_h, out_w);
  ConstMatrixMap<T> dout(dy.data(), conv.out_channels(), spatial);
  ConstMatrixMap<T> c(cols.data(), patch, spatial);
  MatrixMap<T>(grad.weight.data(), conv.out_channels(), patch).noalias() += dout * c.transpose();
  VectorMap<T>(grad.bias.data(), conv.out_channels()) += dout.rowwise().sum();

  if (dx != nullptr) {
    *dx = Tensor<T>(x.shape());
    ConstMatrixMap<T> w(conv.weight.data(), conv.out_channels(), patch);
    RowMatrix<T> dcols = w.transpose() * dout;
    detail::col2im_add(dcols, k, conv.stride, conv.padding, out_h, out_w, *dx);
  }
}

// ---------------------------------------------------------------------------
// Fully connected

template <typename T>
struct Linear {
  Tensor<T> weight;  // out x in
  Tensor<T> bias;    // out

  int out_features() const { return weight.dim(0); }
  int in_features() const { return weight.dim(1); }
};

template <typename T>
Linear<T> make_linear(int in_features, int out_features) {
  return Linear<T>{Tensor<T>({out_features, in_features}), Tensor<T>({out_features})};
}

template <typename T>
std::vector<T> linear_forward(const Linear<T>& layer, std::span<const T> x) {
  if (static_cast<int>(x.size()) != layer.in_features()) {
    throw ShapeError("linear: input length " + std::to_string(x.size()) + ", layer expects " +
                     std::to_string(layer.in_features()));
  }
  std::vector<T> y(layer.bias.values().begin(), layer.bias.values().end());
  VectorMap<T>(y.data(), layer.out_features()).noalias() +=
      ConstMatrixMap<T>(layer.weight.data(), layer.out_features(), layer.in_features()) *
      ConstVectorMap<T>(x.data(), layer.in_features());
  return y;
}

template <typename T>
void linear_backward(const Linear<T>& layer, std::span<const T> x, std::span<const T> dy,
                     Linear<T>& grad, std::type_identity_t<std::vector<T>>* dx) {
  ConstVectorMap<T> dout(dy.data(), layer.out_features());
  ConstVectorMap<T> in(x.data(), layer.in_features());
  MatrixMap<T>(grad.weight.data(), layer.out_features(), layer.in_features()).noalias() +=
      dout * in.transpose();
  VectorMap<T>(grad.bias.data(), layer.out_features()) += dout;
  if (dx != nullptr) {
    dx->assign(static_cast<std::size_t>(layer.in_features()), T{0});
    VectorMap<T>(dx->data(), layer.in_features()).noalias() =
        ConstMatrixMap<T>(layer.weight.data(), layer.out_features(), layer.in_features())
            .transpose() *
        dout;
  }
}

// ---------------------------------------------------------------------------
// Pointwise and pooling

template <typename T>
void relu_inplace(Tensor<T>& t) {
  for (T& v : t.values()) v = v > T{0} ? v : T{0};
}

// Masks `grad` by the positive support of a ReLU output.
template <typename T>
void relu_backward_inplace(const Tensor<T>& activated, Tensor<T>& grad) {
  auto a = activated.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(a[i] > T{0})) g[i] = T{0};
  }
}

template <typename T>
std::vector<T> global_average_pool(const Tensor<T>& x) {
  require_feature_map(x, "global_average_pool");
  const int channels = x.dim(0);
  const std::size_t area = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<T> out(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    const T* p = x.data() + c * area;
    T sum{0};
    for (std::size_t i = 0; i < area; ++i) sum += p[i];
    out[c] = sum / static_cast<T>(area);
  }
  return out;
}

template <typename T>
Tensor<T> global_average_pool_backward(std::span<const T> dpooled, const std::vector<int>& shape) {
  Tensor<T> dx(shape);
  const std::size_t area = static_cast<std::size_t>(shape[1]) * shape[2];
  for (std::size_t c = 0; c < dpooled.size(); ++c) {
    const T v = dpooled[c] / static_cast<T>(area);
    std::fill(dx.data() + c * area, dx.data() + (c + 1) * area, v);
  }
  return dx;
}

template <typename T>
std::vector<T> softmax(std::span<const T> z) {
  if (z.empty()) throw ShapeError("softmax: empty input");
  const T zmax = *std::max_element(z.begin(), z.end());
  std::vector<T> q(z.size());
  T sum{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    q[i] = std::exp(z[i] - zmax);
    sum += q[i];
  }
  for (T& v : q) v /= sum;
  return q;
}

// dz_j = q_j * (dq_j - sum_i q_i dq_i)
template <typename T>
std::vector<T> softmax_backward(std::span<const T> q, std::span<const T> dq) {
  T dot{0};
  for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * dq[i];
  std::vector<T> dz(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) dz[i] = q[i] * (dq[i] - dot);
  return dz;
}

// ---------------------------------------------------------------------------
// Per-sample normalization over all of (C, H, W) with a per-channel affine:
//   y = scale_c * (x - mean) / sqrt(var + kNormEpsilon) + shift_c
// It uses no batch statistics, so training and inference compute the same
// function and every image is processed independently.

inline constexpr double kNormEpsilon = 1e-5;

template <typename T>
struct Norm {
  Tensor<T> scale;  // channels
  Tensor<T> shift;  // channels

  int channels() const { return scale.dim(0); }
};

template <typename T>
Norm<T> make_norm(int channels) {
  Norm<T> norm;
  norm.scale = Tensor<T>({channels});
  norm.shift = Tensor<T>({channels});
  return norm;
}

template <typename T>
struct NormCache {
  Tensor<T> normalized;  // (x - mean) / std
  T inv_std{1};
};

template <typename T>
Tensor<T> norm_forward(const Norm<T>& norm, const Tensor<T>& x, NormCache<T>* cache) {
  if (x.rank() != 3 || x.dim(0) != norm.channels()) {
    throw ShapeError("norm: expected " + std::to_string(norm.channels()) + " channels, got " +
                     x.shape_string());
  }
  const auto n = static_cast<Eigen::Index>(x.size());
  ConstVectorMap<T> in(x.data(), n);
  const T mean = in.mean();
  const T var = (in.array() - mean).square().mean();
  const T inv_std = T{1} / std::sqrt(var + static_cast<T>(kNormEpsilon));
  Tensor<T> normalized(x.shape());
  VectorMap<T>(normalized.data(), n) = (in.array() - mean) * inv_std;
  Tensor<T> y(x.shape());
  const int plane = x.dim(1) * x.dim(2);
  for (int c = 0; c < norm.channels(); ++c) {
    VectorMap<T>(y.data() + c * plane, plane) =
        (ConstVectorMap<T>(normalized.data() + c * plane, plane).array() * norm.scale.values()[c] +
         norm.shift.values()[c])
            .matrix();
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return y;
}

// dx = inv_std * (g - mean(g) - xhat * mean(g * xhat)), with g = dy * scale.
template <typename T>
Tensor<T> norm_backward(const Norm<T>& norm, const NormCache<T>& cache, const Tensor<T>& dy,
                        Norm<T>& grad) {
  const int plane = dy.dim(1) * dy.dim(2);
  const auto n = static_cast<Eigen::Index>(dy.size());
  Tensor<T> g(dy.shape());
  for (int c = 0; c < norm.channels(); ++c) {
    ConstVectorMap<T> dyc(dy.data() + c * plane, plane);
    ConstVectorMap<T> xc(cache.normalized.data() + c * plane, plane);
    grad.scale.values()[c] += dyc.dot(xc);
    grad.shift.values()[c] += dyc.sum();
    VectorMap<T>(g.data() + c * plane, plane) = dyc * norm.scale.values()[c];
  }
  ConstVectorMap<T> gv(g.data(), n);
  ConstVectorMap<T> xhat(cache.normalized.data(), n);
  const T mean_g = gv.mean();
  const T mean_gx = gv.dot(xhat) / static_cast<T>(n);
  Tensor<T> dx(dy.shape());
  VectorMap<T>(dx.data(), n) = ((gv.array() - mean_g - xhat.array() * mean_gx) * cache.inv_std).matrix();
  return dx;
}

// ---------------------------------------------------------------------------
// Residual block: relu(norm2(conv2(h)) + shortcut(x)) with
// h = relu(norm1(conv3x3_s(x))). The shortcut is the identity, or a strided
// 1x1 projection followed by its own norm whenever the shape changes.

template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1;
  Norm<T> norm1;
  Conv2d<T> conv2;
  Norm<T> norm2;
  std::optional<Conv2d<T>> projection;
  std::optional<Norm<T>> projection_norm;

  int in_channels() const { return conv1.in_channels(); }
  int out_channels() const { return conv2.out_channels(); }
};

template <typename T>
ResidualBlock<T> make_residual_block(int in_channels, int out_channels, int stride) {
  ResidualBlock<T> block;
  block.conv1 = make_conv2d<T>(in_channels, out_channels, 3, stride, 1);
  block.norm1 = make_norm<T>(out_channels);
  block.conv2 = make_conv2d<T>(out_channels, out_channels, 3, 1, 1);
  block.norm2 = make_norm<T>(out_channels);
  if (stride != 1 || in_channels != out_channels) {
    block.projection = make_conv2d<T>(in_channels, out_channels, 1, stride, 0);
    block.projection_norm = make_norm<T>(out_channels);
  }
  return block;
}

template <typename T>
struct ResidualCache {
  Tensor<T> input;
  NormCache<T> norm1;
  Tensor<T> hidden;  // relu(norm1(conv1(input)))
  NormCache<T> norm2;
  NormCache<T> projection_norm;
  Tensor<T> output;  // relu(norm2(conv2(hidden)) + shortcut)
};

template <typename T>
Tensor<T> residual_forward(const ResidualBlock<T>& block, const Tensor<T>& x,
                           ResidualCache<T>* cache) {
  const bool keep = cache != nullptr;
  Tensor<T> hidden = norm_forward(block.norm1, conv2d_forward(block.conv1, x), keep ? &cache->norm1 : nullptr);
  relu_inplace(hidden);
  Tensor<T> out = norm_forward(block.norm2, conv2d_forward(block.conv2, hidden), keep ? &cache->norm2 : nullptr);
  if (block.projection) {
    const Tensor<T> shortcut = norm_forward(*block.projection_norm, conv2d_forward(*block.projection, x),
                                            keep ? &cache->projection_norm : nullptr);
    VectorMap<T>(out.data(), out.size()) += ConstVectorMap<T>(shortcut.data(), shortcut.size());
  } else {
    VectorMap<T>(out.data(), out.size()) += ConstVectorMap<T>(x.data(), x.size());
  }
  relu_inplace(out);
  if (keep) {
    cache->input = x;
    cache->hidden = std::move(hidden);
    cache->output = out;
  }
  return out;
}

template <typename T>
void residual_backward(const ResidualBlock<T>& block, const ResidualCache<T>& cache,
                       Tensor<T> dout, ResidualBlock<T>& grad,
                       std::type_identity_t<Tensor<T>>* dx) {
  relu_backward_inplace(cache.output, dout);
  Tensor<T> dhidden;
  conv2d_backward(block.conv2, cache.hidden, norm_backward(block.norm2, cache.norm2, dout, grad.norm2),
                  grad.conv2, &dhidden);
  relu_backward_inplace(cache.hidden, dhidden);
  const Tensor<T> dconv1 = norm_backward(block.norm1, cache.norm1, dhidden, grad.norm1);

  Tensor<T> dshort;
  if (block.projection) {
    const Tensor<T> dproj = norm_backward(*block.projection_norm, cache.projection_norm, dout,
                                          *grad.projection_norm);
    conv2d_backward(*block.projection, cache.input, dproj, *grad.projection,
                    dx != nullptr ? &dshort : nullptr);
  }
  conv2d_backward(block.conv1, cache.input, dconv1, grad.conv1, dx);
  if (dx == nullptr) return;
  if (block.projection) {
    VectorMap<T>(dx->data(), dx->size()) += ConstVectorMap<T>(dshort.data(), dshort.size());
  } else {
    VectorMap<T>(dx->data(), dx->size()) += ConstVectorMap<T>(dout.data(), dout.size());
  }
}

// ---------------------------------------------------------------------------
// Parameter visitation. Visitors receive (name, tensor) in a fixed order,
// which defines checkpoint layout and initialization order.

template <typename T, typename F>
void visit(Conv2d<T>& conv, const std::string& prefix, F&& f) {
  f(prefix + ".weight", conv.weight);
  f(prefix + ".bias", conv.bias);
}

template <typename T, typename F>
void visit(const Conv2d<T>& conv, const std::string& prefix, F&& f) {
  f(prefix + ".weight", conv.weight);
  f(prefix + ".bias", conv.bias);
}

template <typename T, typename F>
void visit(Linear<T>& layer, const std::string& prefix, F&& f) {
  f(prefix + ".weight", layer.weight);
  f(prefix + ".bias", layer.bias);
}

template <typename T, typename F>
void visit(const Linear<T>& layer, const std::string& prefix, F&& f) {
  f(prefix + ".weight", layer.weight);
  f(prefix + ".bias", layer.bias);
}

template <typename T, typename F>
void visit(Norm<T>& norm, const std::string& prefix, F&& f) {
  f(prefix + ".scale", norm.scale);
  f(prefix + ".shift", norm.shift);
}

template <typename T, typename F>
void visit(const Norm<T>& norm, const std::string& prefix, F&& f) {
  f(prefix + ".scale", norm.scale);
  f(prefix + ".shift", norm.shift);
}

template <typename Block, typename F>
void visit_block(Block& block, const std::string& prefix, F&& f) {
  visit(block.conv1, prefix + ".conv1", f);
  visit(block.norm1, prefix + ".norm1", f);
  visit(block.conv2, prefix + ".conv2", f);
  visit(block.norm2, prefix + ".norm2", f);
  if (block.projection) {
    visit(*block.projection, prefix + ".projection", f);
    visit(*block.projection_norm, prefix + ".projection_norm", f);
  }
}

// He-normal initialization with the given gain multiplier.
template <typename T>
void init_he_normal(Tensor<T>& weight, int fan_in, std::mt19937_64& rng, double gain = 1.0) {
  std::normal_distribution<double> normal(0.0, gain * std::sqrt(2.0 / fan_in));
  for (T& w : weight.values()) w = static_cast<T>(normal(rng));
}

}  // namespace agnet::nn
