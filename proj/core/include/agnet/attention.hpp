#pragma once

// Attribute attention and verification operators of the dual-branch network.
//
//   attribute_mask            M    = softmax(W_m * GAP(f_r) + b_m)
//   apply_mask                f_m  = f_r (x) M            (M broadcast over H, W)
//   guided_category_features  f_cs = f_c + f_c (x) (W_g * M + b_g)
//   verification_head         v    = W_v * (f1 - f2)^2 + b_v
//
// The 1x1 convolutions act on 1x1 maps (pooled vectors or the mask itself),
// so they are stored as Linear layers.

#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "agnet/error.hpp"
#include "agnet/layers.hpp"
#include "agnet/tensor.hpp"

namespace agnet {

// Softmax-normalized per-channel attention weights: nonnegative, unit sum.
template <typename T>
struct ChannelMask {
  std::vector<T> weights;

  std::size_t size() const { return weights.size(); }
  std::span<const T> view() const { return weights; }
};

template <typename T>
using MaskParams = nn::Linear<T>;  // mask_dim x C(f_r)
template <typename T>
using GuideParams = nn::Linear<T>;  // C(f_c) x mask_dim
template <typename T>
using VerifyParams = nn::Linear<T>;  // 2 x embedding_dim

// Index 0 scores "same identity", index 1 "different identity".
template <typename T>
struct VerificationLogits {
  std::array<T, 2> values{};
};

inline constexpr int kSameClass = 0;
inline constexpr int kDifferentClass = 1;

template <typename T>
ChannelMask<T> attribute_mask(const FeatureMap<T>& f_r, const MaskParams<T>& params) {
  require_feature_map(f_r, "attribute_mask");
  if (!f_r.all_finite()) throw NumericError("attribute_mask: non-finite value in input feature map");
  const std::vector<T> pooled = nn::global_average_pool(f_r);
  const std::vector<T> logits = nn::linear_forward<T>(params, pooled);
  return ChannelMask<T>{nn::softmax<T>(logits)};
}

// Accumulates mask-conv gradients into `grad` and returns d(loss)/d(f_r).
template <typename T>
FeatureMap<T> attribute_mask_backward(const FeatureMap<T>& f_r, const MaskParams<T>& params,
                                      const ChannelMask<T>& mask, std::span<const T> dmask,
                                      MaskParams<T>& grad) {
  const std::vector<T> pooled = nn::global_average_pool(f_r);
  const std::vector<T> dlogits = nn::softmax_backward<T>(mask.weights, dmask);
  std::vector<T> dpooled;
  nn::linear_backward<T>(params, pooled, dlogits, grad, &dpooled);
  return nn::global_average_pool_backward<T>(dpooled, f_r.shape());
}

template <typename T>
FeatureMap<T> apply_mask(const FeatureMap<T>& f, const ChannelMask<T>& mask) {
  require_feature_map(f, "apply_mask");
  if (static_cast<std::size_t>(f.dim(0)) != mask.size()) {
    throw ShapeError("apply_mask: feature map has " + std::to_string(f.dim(0)) +
                     " channels but mask has " + std::to_string(mask.size()));
  }
  FeatureMap<T> out(f.shape());
  const std::size_t area = static_cast<std::size_t>(f.dim(1)) * f.dim(2);
  for (std::size_t c = 0; c < mask.size(); ++c) {
    const T m = mask.weights[c];
    const T* src = f.data() + c * area;
    T* dst = out.data() + c * area;
    for (std::size_t i = 0; i < area; ++i) dst[i] = src[i] * m;
  }
  return out;
}

template <typename T>
void apply_mask_backward(const FeatureMap<T>& f, const ChannelMask<T>& mask,
                         const FeatureMap<T>& dout, std::type_identity_t<FeatureMap<T>>* df,
                         std::type_identity_t<std::vector<T>>* dmask) {
  const std::size_t area = static_cast<std::size_t>(f.dim(1)) * f.dim(2);
  if (df != nullptr) *df = apply_mask(dout, mask);
  if (dmask != nullptr) {
    dmask->assign(mask.size(), T{0});
    for (std::size_t c = 0; c < mask.size(); ++c) {
      const T* a = f.data() + c * area;
      const T* g = dout.data() + c * area;
      T sum{0};
      for (std::size_t i = 0; i < area; ++i) sum += a[i] * g[i];
      (*dmask)[c] = sum;
    }
  }
}

// Projection of the mask onto f_c's channels: W_g * M + b_g.
template <typename T>
std::vector<T> guide_weights(const ChannelMask<T>& mask, const GuideParams<T>& params) {
  if (static_cast<std::size_t>(params.in_features()) != mask.size()) {
    throw ShapeError("guided_category_features: guide conv expects " +
                     std::to_string(params.in_features()) + " mask channels, got " +
                     std::to_string(mask.size()));
  }
  return nn::linear_forward<T>(params, mask.weights);
}

template <typename T>
FeatureMap<T> guided_category_features(const FeatureMap<T>& f_c, const ChannelMask<T>& mask,
                                       const GuideParams<T>& params) {
  require_feature_map(f_c, "guided_category_features");
  if (f_c.dim(0) != params.out_features()) {
    throw ShapeError("guided_category_features: category map has " + std::to_string(f_c.dim(0)) +
                     " channels, guide conv produces " + std::to_string(params.out_features()));
  }
  const std::vector<T> guide = guide_weights(mask, params);
  FeatureMap<T> out(f_c.shape());
  const std::size_t area = static_cast<std::size_t>(f_c.dim(1)) * f_c.dim(2);
  for (std::size_t c = 0; c < guide.size(); ++c) {
    const T g = guide[c];
    const T* src = f_c.data() + c * area;
    T* dst = out.data() + c * area;
    for (std::size_t i = 0; i < area; ++i) dst[i] = src[i] + src[i] * g;
  }
  return out;
}

template <typename T>
void guided_category_features_backward(const FeatureMap<T>& f_c, const ChannelMask<T>& mask,
                                       const GuideParams<T>& params, const FeatureMap<T>& dout,
                                       GuideParams<T>& grad,
                                       std::type_identity_t<FeatureMap<T>>* df_c,
                                       std::type_identity_t<std::vector<T>>* dmask) {
  const std::vector<T> guide = guide_weights(mask, params);
  const std::size_t area = static_cast<std::size_t>(f_c.dim(1)) * f_c.dim(2);
  std::vector<T> dguide(guide.size(), T{0});
  if (df_c != nullptr) *df_c = FeatureMap<T>(f_c.shape());
  for (std::size_t c = 0; c < guide.size(); ++c) {
    const T* a = f_c.data() + c * area;
    const T* g = dout.data() + c * area;
    T sum{0};
    for (std::size_t i = 0; i < area; ++i) sum += a[i] * g[i];
    dguide[c] = sum;
    if (df_c != nullptr) {
      T* d = df_c->data() + c * area;
      for (std::size_t i = 0; i < area; ++i) d[i] = g[i] * (T{1} + guide[c]);
    }
  }
  nn::linear_backward<T>(params, mask.weights, dguide, grad, dmask);
}

template <typename T>
std::vector<T> square_difference(std::span<const T> f1, std::span<const T> f2) {
  if (f1.size() != f2.size()) {
    throw ShapeError("verification_head: embedding lengths differ (" + std::to_string(f1.size()) +
                     " vs " + std::to_string(f2.size()) + ")");
  }
  std::vector<T> fv(f1.size());
  for (std::size_t i = 0; i < f1.size(); ++i) {
    const T d = f1[i] - f2[i];
    fv[i] = d * d;
  }
  return fv;
}

template <typename T>
VerificationLogits<T> verification_head(std::span<const T> f1, std::span<const T> f2,
                                        const VerifyParams<T>& params) {
  if (params.out_features() != 2) throw ShapeError("verification_head: projection must output 2 logits");
  const std::vector<T> fv = square_difference(f1, f2);
  const std::vector<T> logits = nn::linear_forward<T>(params, fv);
  return VerificationLogits<T>{{logits[0], logits[1]}};
}

template <typename T>
void verification_head_backward(std::span<const T> f1, std::span<const T> f2,
                                const VerifyParams<T>& params, std::span<const T> dlogits,
                                VerifyParams<T>& grad, std::type_identity_t<std::vector<T>>* df1,
                                std::type_identity_t<std::vector<T>>* df2) {
  const std::vector<T> fv = square_difference(f1, f2);
  std::vector<T> dfv;
  nn::linear_backward<T>(params, fv, dlogits, grad, &dfv);
  std::vector<T> d1(f1.size());
  for (std::size_t i = 0; i < f1.size(); ++i) d1[i] = T{2} * (f1[i] - f2[i]) * dfv[i];
  if (df2 != nullptr) {
    df2->resize(d1.size());
    for (std::size_t i = 0; i < d1.size(); ++i) (*df2)[i] = -d1[i];
  }
  if (df1 != nullptr) *df1 = std::move(d1);
}

}  // namespace agnet
