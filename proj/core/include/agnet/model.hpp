#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "agnet/attention.hpp"
#include "agnet/layers.hpp"
#include "agnet/tensor.hpp"

namespace agnet {

inline constexpr int kImageChannels = 3;

struct ModelConfig {
  // Output channels of each stride-2 backbone residual block.
  std::vector<int> backbone_channels{16, 32, 64};
  // Side of the final backbone map; input side is spatial_size * 2^blocks.
  int spatial_size = 4;
  int num_identities = 1;
  int num_colors = 1;
  int num_types = 1;
  int embedding_dim = 64;
  int mask_dim = 64;
  std::uint64_t seed = 0;

  void validate() const;
  int input_side() const;
  int trunk_channels() const { return backbone_channels.back(); }

  // key=value lines, used as the checkpoint's config echo.
  std::string echo() const;
  static ModelConfig parse_echo(const std::string& text);
  // True when both configs describe the same parameter shapes.
  bool architecture_matches(const ModelConfig& other) const;
};

// All learnable tensors of one branch. Both siamese branches use the same
// instance.
template <typename T>
struct NetworkParams {
  std::vector<nn::ResidualBlock<T>> backbone;
  nn::ResidualBlock<T> attr_block;  // trunk -> mask_dim channels (f_r)
  nn::ResidualBlock<T> cat_block;   // trunk -> trunk channels (f_c)
  MaskParams<T> mask_conv;
  GuideParams<T> guide_conv;
  nn::Linear<T> attr_embed;
  nn::Linear<T> cat_embed;
  nn::Linear<T> color_head;
  nn::Linear<T> type_head;
  nn::Linear<T> id_head;
  VerifyParams<T> verify_head;

  // Zero-valued parameters with the shapes implied by `config`.
  static NetworkParams zeros(const ModelConfig& config);

  template <typename F>
  void for_each(F&& f) {
    for_each_impl(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    for_each_impl(*this, f);
  }

  std::size_t parameter_count() const;

 private:
  template <typename Self, typename F>
  static void for_each_impl(Self& self, F& f) {
    for (std::size_t i = 0; i < self.backbone.size(); ++i) {
      nn::visit_block(self.backbone[i], "backbone." + std::to_string(i), f);
    }
    nn::visit_block(self.attr_block, "attr_block", f);
    nn::visit_block(self.cat_block, "cat_block", f);
    nn::visit(self.mask_conv, "mask_conv", f);
    nn::visit(self.guide_conv, "guide_conv", f);
    nn::visit(self.attr_embed, "attr_embed", f);
    nn::visit(self.cat_embed, "cat_embed", f);
    nn::visit(self.color_head, "color_head", f);
    nn::visit(self.type_head, "type_head", f);
    nn::visit(self.id_head, "id_head", f);
    nn::visit(self.verify_head, "verify_head", f);
  }
};

template <typename T>
struct BranchOutputs {
  std::vector<T> id_logits;
  std::vector<T> color_logits;
  std::vector<T> type_logits;
  std::vector<T> attr_embedding;
  std::vector<T> cat_embedding;
  ChannelMask<T> mask;
};

// Upstream gradients for one branch pass. Empty vectors mean zero.
template <typename T>
struct BranchGradients {
  std::vector<T> id_logits;
  std::vector<T> color_logits;
  std::vector<T> type_logits;
  std::vector<T> attr_embedding;
  std::vector<T> cat_embedding;
};

template <typename T>
struct BranchCache {
  std::vector<nn::ResidualCache<T>> backbone;
  nn::ResidualCache<T> attr;
  nn::ResidualCache<T> cat;
  ChannelMask<T> mask;
  FeatureMap<T> f_m;
  FeatureMap<T> f_cs;
  std::vector<T> pooled_m;
  std::vector<T> pooled_cs;
  std::vector<T> attr_embedding;
  std::vector<T> cat_embedding;
};

template <typename T>
class Network {
 public:
  explicit Network(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  NetworkParams<T>& params() { return params_; }
  const NetworkParams<T>& params() const { return params_; }

  // One branch pass. Fills `cache` for a later backward_branch when given.
  BranchOutputs<T> forward_branch(const Tensor<T>& image, BranchCache<T>* cache = nullptr) const;
  std::vector<BranchOutputs<T>> forward_batch(std::span<const Tensor<T>> images) const;

  // Accumulates parameter gradients of one branch pass into `grads`.
  void backward_branch(const BranchCache<T>& cache, const BranchGradients<T>& upstream,
                       NetworkParams<T>& grads) const;

  VerificationLogits<T> verify(std::span<const T> f1, std::span<const T> f2) const {
    return verification_head<T>(f1, f2, params_.verify_head);
  }

 private:
  ModelConfig config_;
  NetworkParams<T> params_;
};

extern template struct NetworkParams<float>;
extern template struct NetworkParams<double>;
extern template class Network<float>;
extern template class Network<double>;

using Model = Network<float>;
using ImageTensor = Tensor<float>;

Model build_model(const ModelConfig& config);

// Copies parameters between precisions (used to gradient-check in double).
template <typename To, typename From>
Network<To> convert_network(const Network<From>& source) {
  Network<To> out(source.config());
  std::vector<const Tensor<From>*> src;
  source.params().for_each([&](const std::string&, const Tensor<From>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.params().for_each([&](const std::string&, Tensor<To>& t) { t = src[i++]->template cast<To>(); });
  return out;
}

}  // namespace agnet
