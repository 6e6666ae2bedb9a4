#include "agnet/model.hpp"

#include <random>
#include <sstream>

namespace agnet {

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

std::vector<int> parse_int_list(const std::string& text, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("model config: " + key + " has non-integer entry '" + item + "'");
    }
  }
  return out;
}

template <typename T, typename F>
void add_to(std::span<T> dst, std::span<const T> src, F scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](int v, const char* key) {
    if (v <= 0) throw ConfigError(std::string("model config: ") + key + " must be >= 1, got " + std::to_string(v));
  };
  if (backbone_channels.empty()) throw ConfigError("model config: backbone_channels must be non-empty");
  for (int c : backbone_channels) positive(c, "backbone_channels");
  positive(spatial_size, "spatial_size");
  positive(num_identities, "num_identities");
  positive(num_colors, "num_colors");
  positive(num_types, "num_types");
  positive(embedding_dim, "embedding_dim");
  positive(mask_dim, "mask_dim");
  if (backbone_channels.size() > 16) throw ConfigError("model config: too many backbone blocks");
}

int ModelConfig::input_side() const {
  return spatial_size << static_cast<int>(backbone_channels.size());
}

std::string ModelConfig::echo() const {
  std::ostringstream os;
  os << "backbone_channels=" << join_ints(backbone_channels) << '\n'
     << "spatial_size=" << spatial_size << '\n'
     << "num_identities=" << num_identities << '\n'
     << "num_colors=" << num_colors << '\n'
     << "num_types=" << num_types << '\n'
     << "embedding_dim=" << embedding_dim << '\n'
     << "mask_dim=" << mask_dim << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::parse_echo(const std::string& text) {
  ModelConfig config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model config echo: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "backbone_channels") config.backbone_channels = parse_int_list(value, key);
      else if (key == "spatial_size") config.spatial_size = std::stoi(value);
      else if (key == "num_identities") config.num_identities = std::stoi(value);
      else if (key == "num_colors") config.num_colors = std::stoi(value);
      else if (key == "num_types") config.num_types = std::stoi(value);
      else if (key == "embedding_dim") config.embedding_dim = std::stoi(value);
      else if (key == "mask_dim") config.mask_dim = std::stoi(value);
      else if (key == "seed") config.seed = std::stoull(value);
      else throw FormatError("model config echo: unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw FormatError("model config echo: bad value for '" + key + "'");
    }
  }
  config.validate();
  return config;
}

bool ModelConfig::architecture_matches(const ModelConfig& other) const {
  return backbone_channels == other.backbone_channels && spatial_size == other.spatial_size &&
         num_identities == other.num_identities && num_colors == other.num_colors &&
         num_types == other.num_types && embedding_dim == other.embedding_dim &&
         mask_dim == other.mask_dim;
}

template <typename T>
NetworkParams<T> NetworkParams<T>::zeros(const ModelConfig& config) {
  config.validate();
  NetworkParams<T> p;
  int in = kImageChannels;
  for (int out : config.backbone_channels) {
    p.backbone.push_back(nn::make_residual_block<T>(in, out, 2));
    in = out;
  }
  const int trunk = config.trunk_channels();
  p.attr_block = nn::make_residual_block<T>(trunk, config.mask_dim, 1);
  p.cat_block = nn::make_residual_block<T>(trunk, trunk, 1);
  p.mask_conv = nn::make_linear<T>(config.mask_dim, config.mask_dim);
  p.guide_conv = nn::make_linear<T>(config.mask_dim, trunk);
  p.attr_embed = nn::make_linear<T>(config.mask_dim, config.embedding_dim);
  p.cat_embed = nn::make_linear<T>(trunk, config.embedding_dim);
  p.color_head = nn::make_linear<T>(config.embedding_dim, config.num_colors);
  p.type_head = nn::make_linear<T>(config.embedding_dim, config.num_types);
  p.id_head = nn::make_linear<T>(config.embedding_dim, config.num_identities);
  p.verify_head = nn::make_linear<T>(config.embedding_dim, 2);
  return p;
}

template <typename T>
std::size_t NetworkParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
Network<T>::Network(ModelConfig config)
    : config_(std::move(config)), params_(NetworkParams<T>::zeros(config_)) {
  std::mt19937_64 rng(config_.seed);
  params_.for_each([&](const std::string& name, Tensor<T>& t) {
    if (name.ends_with(".scale")) {
      t.fill(T{1});  // norms start as pure standardization
      return;
    }
    if (t.rank() < 2) return;  // biases and norm shifts start at zero
    int fan_in = 1;
    for (int axis = 1; axis < t.rank(); ++axis) fan_in *= t.dim(axis);
    nn::init_he_normal(t, fan_in, rng);
  });
}

template <typename T>
BranchOutputs<T> Network<T>::forward_branch(const Tensor<T>& image, BranchCache<T>* cache) const {
  const int side = config_.input_side();
  if (image.rank() != 3 || image.dim(0) != kImageChannels || image.dim(1) != side ||
      image.dim(2) != side) {
    throw ShapeError("forward_branch: expected image of shape [3x" + std::to_string(side) + "x" +
                     std::to_string(side) + "], got " + image.shape_string());
  }
  BranchCache<T> local;
  BranchCache<T>& c = cache != nullptr ? *cache : local;
  const bool keep = cache != nullptr;
  c.backbone.resize(params_.backbone.size());

  Tensor<T> x = image;
  for (std::size_t i = 0; i < params_.backbone.size(); ++i) {
    x = nn::residual_forward(params_.backbone[i], x, keep ? &c.backbone[i] : nullptr);
  }

  // Attribute sub-branch.
  const FeatureMap<T> f_r = nn::residual_forward(params_.attr_block, x, keep ? &c.attr : nullptr);
  BranchOutputs<T> out;
  out.mask = attribute_mask(f_r, params_.mask_conv);
  c.f_m = apply_mask(f_r, out.mask);
  c.pooled_m = nn::global_average_pool(c.f_m);
  out.attr_embedding = nn::linear_forward<T>(params_.attr_embed, c.pooled_m);
  out.color_logits = nn::linear_forward<T>(params_.color_head, out.attr_embedding);
  out.type_logits = nn::linear_forward<T>(params_.type_head, out.attr_embedding);

  // Category sub-branch, guided by the attribute mask.
  const FeatureMap<T> f_c = nn::residual_forward(params_.cat_block, x, keep ? &c.cat : nullptr);
  c.f_cs = guided_category_features(f_c, out.mask, params_.guide_conv);
  c.pooled_cs = nn::global_average_pool(c.f_cs);
  out.cat_embedding = nn::linear_forward<T>(params_.cat_embed, c.pooled_cs);
  out.id_logits = nn::linear_forward<T>(params_.id_head, out.cat_embedding);

  if (keep) {
    c.mask = out.mask;
    c.attr_embedding = out.attr_embedding;
    c.cat_embedding = out.cat_embedding;
  }
  return out;
}

template <typename T>
std::vector<BranchOutputs<T>> Network<T>::forward_batch(std::span<const Tensor<T>> images) const {
  std::vector<BranchOutputs<T>> out;
  out.reserve(images.size());
  for (const auto& image : images) out.push_back(forward_branch(image));
  return out;
}

template <typename T>
void Network<T>::backward_branch(const BranchCache<T>& c, const BranchGradients<T>& up,
                                 NetworkParams<T>& grads) const {
  const auto& p = params_;
  const int dim = config_.embedding_dim;

  // Category sub-branch.
  std::vector<T> d_cat_emb(static_cast<std::size_t>(dim), T{0});
  if (!up.cat_embedding.empty()) add_to<T>(d_cat_emb, up.cat_embedding, T{1});
  if (!up.id_logits.empty()) {
    std::vector<T> d;
    nn::linear_backward<T>(p.id_head, c.cat_embedding, up.id_logits, grads.id_head, &d);
    add_to<T>(d_cat_emb, d, T{1});
  }
  std::vector<T> d_pooled_cs;
  nn::linear_backward<T>(p.cat_embed, c.pooled_cs, d_cat_emb, grads.cat_embed, &d_pooled_cs);
  const FeatureMap<T> d_f_cs = nn::global_average_pool_backward<T>(d_pooled_cs, c.f_cs.shape());
  FeatureMap<T> d_f_c;
  std::vector<T> d_mask;
  guided_category_features_backward(c.cat.output, c.mask, p.guide_conv, d_f_cs, grads.guide_conv,
                                    &d_f_c, &d_mask);

  // Attribute sub-branch.
  std::vector<T> d_attr_emb(static_cast<std::size_t>(dim), T{0});
  if (!up.attr_embedding.empty()) add_to<T>(d_attr_emb, up.attr_embedding, T{1});
  if (!up.color_logits.empty()) {
    std::vector<T> d;
    nn::linear_backward<T>(p.color_head, c.attr_embedding, up.color_logits, grads.color_head, &d);
    add_to<T>(d_attr_emb, d, T{1});
  }
  if (!up.type_logits.empty()) {
    std::vector<T> d;
    nn::linear_backward<T>(p.type_head, c.attr_embedding, up.type_logits, grads.type_head, &d);
    add_to<T>(d_attr_emb, d, T{1});
  }
  std::vector<T> d_pooled_m;
  nn::linear_backward<T>(p.attr_embed, c.pooled_m, d_attr_emb, grads.attr_embed, &d_pooled_m);
  const FeatureMap<T> d_f_m = nn::global_average_pool_backward<T>(d_pooled_m, c.f_m.shape());
  FeatureMap<T> d_f_r;
  std::vector<T> d_mask_attr;
  apply_mask_backward(c.attr.output, c.mask, d_f_m, &d_f_r, &d_mask_attr);
  add_to<T>(d_mask, d_mask_attr, T{1});

  const FeatureMap<T> d_f_r_mask =
      attribute_mask_backward<T>(c.attr.output, p.mask_conv, c.mask, d_mask, grads.mask_conv);
  add_to<T>(d_f_r.values(), d_f_r_mask.values(), T{1});

  // Both sub-branches fork from the trunk output.
  Tensor<T> d_trunk;
  nn::residual_backward(p.attr_block, c.attr, std::move(d_f_r), grads.attr_block, &d_trunk);
  Tensor<T> d_trunk_cat;
  nn::residual_backward(p.cat_block, c.cat, std::move(d_f_c), grads.cat_block, &d_trunk_cat);
  add_to<T>(d_trunk.values(), d_trunk_cat.values(), T{1});

  for (std::size_t i = p.backbone.size(); i-- > 0;) {
    Tensor<T> d_in;
    nn::residual_backward(p.backbone[i], c.backbone[i], std::move(d_trunk), grads.backbone[i],
                          i > 0 ? &d_in : nullptr);
    d_trunk = std::move(d_in);
  }
}

template struct NetworkParams<float>;
template struct NetworkParams<double>;
template class Network<float>;
template class Network<double>;

Model build_model(const ModelConfig& config) { return Model(config); }

}  // namespace agnet
