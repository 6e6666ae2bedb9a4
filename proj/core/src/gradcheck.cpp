#include "agnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "agnet/attention.hpp"
#include "agnet/losses.hpp"
#include "agnet/model.hpp"

namespace agnet {

namespace {

using Rng = std::mt19937_64;

constexpr double kKinkTolerance = 1e-3;

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

void randomize(Tensor<double>& t, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  for (double& x : t.values()) x = normal(rng);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Appends the relative error for one (analytic, variable) pair.
struct Tracker {
  double worst = 0.0;
  void add(std::span<const double> analytic, const std::function<double()>& f, std::span<double> x,
           double step) {
    const std::vector<double> numeric = numeric_gradient(f, x, step);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
};

ChannelMask<double> random_mask(Rng& rng, std::size_t n) {
  return ChannelMask<double>{nn::softmax<double>(random_vector(rng, n))};
}

}  // namespace

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double plus = f();
    x[i] = saved - step;
    const double minus = f();
    x[i] = saved;
    g[i] = (plus - minus) / (2.0 * step);
  }
  return g;
}

GradCheckResult check_als_loss(const GradCheckOptions& options) {
  Rng rng(options.seed ^ 0xA15u);
  Tracker t;
  std::uniform_int_distribution<int> label(0, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int n = 0; n < options.instances; ++n) {
    std::vector<double> logits = random_vector(rng, 10, 2.0);
    const int target = std::uniform_int_distribution<int>(0, 9)(rng);
    PairContext ctx{label(rng), label(rng), {label(rng), label(rng)}, {label(rng), label(rng)}};
    ALSParams params{unit(rng), 0.5 * unit(rng), 2.0 * unit(rng)};
    const LossWithGradient analytic = softmax_als(logits, target, ctx, params);
    auto f = [&] { return als_loss(nn::softmax<double>(logits), target, ctx, params); };
    t.add(analytic.dlogits, f, logits, options.step);
  }
  return {"als_loss", options.instances, t.worst, 0};
}

GradCheckResult check_attribute_mask(const GradCheckOptions& options) {
  Rng rng(options.seed ^ 0xA77u);
  Tracker t;
  for (int n = 0; n < options.instances; ++n) {
    const int channels = 6, mask_dim = 5;
    FeatureMap<double> f_r({channels, 3, 3});
    randomize(f_r, rng);
    MaskParams<double> params = nn::make_linear<double>(channels, mask_dim);
    randomize(params.weight, rng);
    randomize(params.bias, rng);
    const std::vector<double> r = random_vector(rng, mask_dim);

    const ChannelMask<double> mask = attribute_mask(f_r, params);
    MaskParams<double> grad = nn::make_linear<double>(channels, mask_dim);
    const FeatureMap<double> df = attribute_mask_backward<double>(f_r, params, mask, r, grad);
    auto f = [&] { return dot(r, attribute_mask(f_r, params).weights); };
    t.add(df.values(), f, f_r.values(), options.step);
    t.add(grad.weight.values(), f, params.weight.values(), options.step);
    t.add(grad.bias.values(), f, params.bias.values(), options.step);
  }
  return {"attribute_mask", options.instances, t.worst, 0};
}

GradCheckResult check_apply_mask(const GradCheckOptions& options) {
  Rng rng(options.seed ^ 0xA99u);
  Tracker t;
  for (int n = 0; n < options.instances; ++n) {
    FeatureMap<double> fmap({4, 3, 2});
    randomize(fmap, rng);
    ChannelMask<double> mask = random_mask(rng, 4);
    FeatureMap<double> r({4, 3, 2});
    randomize(r, rng);

    FeatureMap<double> df;
    std::vector<double> dmask;
    apply_mask_backward(fmap, mask, r, &df, &dmask);
    auto f = [&] { return dot(r.values(), apply_mask(fmap, mask).values()); };
    t.add(df.values(), f, fmap.values(), options.step);
    t.add(dmask, f, mask.weights, options.step);
  }
  return {"apply_mask", options.instances, t.worst, 0};
}

GradCheckResult check_guided_category_features(const GradCheckOptions& options) {
  Rng rng(options.seed ^ 0xB0Bu);
  Tracker t;
  for (int n = 0; n < options.instances; ++n) {
    const int channels = 5, mask_dim = 4;
    FeatureMap<double> f_c({channels, 2, 3});
    randomize(f_c, rng);
    ChannelMask<double> mask = random_mask(rng, mask_dim);
    GuideParams<double> params = nn::make_linear<double>(mask_dim, channels);
    randomize(params.weight, rng);
    randomize(params.bias, rng);
    FeatureMap<double> r({channels, 2, 3});
    randomize(r, rng);

    GuideParams<double> grad = nn::make_linear<double>(mask_dim, channels);
    FeatureMap<double> df;
    std::vector<double> dmask;
    guided_category_features_backward(f_c, mask, params, r, grad, &df, &dmask);
    auto f = [&] { return dot(r.values(), guided_category_features(f_c, mask, params).values()); };
    t.add(df.values(), f, f_c.values(), options.step);
    t.add(dmask, f, mask.weights, options.step);
    t.add(grad.weight.values(), f, params.weight.values(), options.step);
    t.add(grad.bias.values(), f, params.bias.values(), options.step);
  }
  return {"guided_category_features", options.instances, t.worst, 0};
}

GradCheckResult check_verification_head(const GradCheckOptions& options) {
  Rng rng(options.seed ^ 0xF00u);
  Tracker t;
  for (int n = 0; n < options.instances; ++n) {
    const int dim = 7;
    std::vector<double> f1 = random_vector(rng, dim), f2 = random_vector(rng, dim);
    VerifyParams<double> params = nn::make_linear<double>(dim, 2);
    randomize(params.weight, rng);
    randomize(params.bias, rng);
    const std::vector<double> r = random_vector(rng, 2);

    VerifyParams<double> grad = nn::make_linear<double>(dim, 2);
    std::vector<double> d1, d2;
    verification_head_backward<double>(f1, f2, params, r, grad, &d1, &d2);
    auto f = [&] {
      const auto v = verification_head<double>(f1, f2, params);
      return r[0] * v.values[0] + r[1] * v.values[1];
    };
    t.add(d1, f, f1, options.step);
    t.add(d2, f, f2, options.step);
    t.add(grad.weight.values(), f, params.weight.values(), options.step);
    t.add(grad.bias.values(), f, params.bias.values(), options.step);
  }
  return {"verification_head", options.instances, t.worst, 0};
}

GradCheckResult check_conv2d(const GradCheckOptions& options) {
  Rng rng(options.seed ^ 0xC0Bu);
  Tracker t;
  for (int n = 0; n < options.instances; ++n) {
    nn::Conv2d<double> conv = nn::make_conv2d<double>(3, 4, 3, 2, 1);
    randomize(conv.weight, rng);
    randomize(conv.bias, rng);
    Tensor<double> x({3, 5, 6});
    randomize(x, rng);
    const Tensor<double> y = nn::conv2d_forward(conv, x);
    Tensor<double> r(y.shape());
    randomize(r, rng);

    nn::Conv2d<double> grad = nn::make_conv2d<double>(3, 4, 3, 2, 1);
    Tensor<double> dx;
    nn::conv2d_backward(conv, x, r, grad, &dx);
    auto f = [&] { return dot(r.values(), nn::conv2d_forward(conv, x).values()); };
    t.add(dx.values(), f, x.values(), options.step);
    t.add(grad.weight.values(), f, conv.weight.values(), options.step);
    t.add(grad.bias.values(), f, conv.bias.values(), options.step);
  }
  return {"conv2d", options.instances, t.worst, 0};
}

GradCheckResult check_norm(const GradCheckOptions& options) {
  Rng rng(options.seed ^ 0x40Au);
  Tracker t;
  for (int n = 0; n < options.instances; ++n) {
    nn::Norm<double> norm = nn::make_norm<double>(3);
    randomize(norm.scale, rng);
    randomize(norm.shift, rng);
    Tensor<double> x({3, 4, 5});
    randomize(x, rng);
    Tensor<double> r(x.shape());
    randomize(r, rng);

    nn::NormCache<double> cache;
    nn::norm_forward(norm, x, &cache);
    nn::Norm<double> grad = nn::make_norm<double>(3);
    const Tensor<double> dx = nn::norm_backward(norm, cache, r, grad);
    auto f = [&] { return dot(r.values(), nn::norm_forward<double>(norm, x, nullptr).values()); };
    t.add(dx.values(), f, x.values(), options.step);
    t.add(grad.scale.values(), f, norm.scale.values(), options.step);
    t.add(grad.shift.values(), f, norm.shift.values(), options.step);
  }
  return {"norm", options.instances, t.worst, 0};
}

GradCheckResult check_branch(const GradCheckOptions& options) {
  Rng rng(options.seed ^ 0xB4Au);
  GradCheckResult result{"branch", options.instances, 0.0, 0};
  const int instances = std::max(1, options.instances / 4);
  result.instances = instances;
  for (int n = 0; n < instances; ++n) {
    ModelConfig config;
    config.backbone_channels = {3, 4};
    config.spatial_size = 2;
    config.num_identities = 3;
    config.num_colors = 2;
    config.num_types = 2;
    config.embedding_dim = 5;
    config.mask_dim = 4;
    config.seed = rng();
    Network<double> net(config);
    Tensor<double> image({kImageChannels, config.input_side(), config.input_side()});
    randomize(image, rng, 0.5);

    BranchGradients<double> up{random_vector(rng, 3), random_vector(rng, 2), random_vector(rng, 2),
                               random_vector(rng, 5), random_vector(rng, 5)};
    auto readout = [&] {
      const BranchOutputs<double> o = net.forward_branch(image);
      return dot(up.id_logits, o.id_logits) + dot(up.color_logits, o.color_logits) +
             dot(up.type_logits, o.type_logits) + dot(up.attr_embedding, o.attr_embedding) +
             dot(up.cat_embedding, o.cat_embedding);
    };

    BranchCache<double> cache;
    net.forward_branch(image, &cache);
    NetworkParams<double> grads = NetworkParams<double>::zeros(config);
    net.backward_branch(cache, up, grads);

    std::vector<double> analytic, numeric;
    auto probe = [&](std::span<double> x, std::span<const double> a) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        const double f0 = readout();
        x[i] = saved + options.step;
        const double plus = readout();
        x[i] = saved - options.step;
        const double minus = readout();
        x[i] = saved;
        // One-sided slopes agree to O(h * f'') on smooth coordinates; a ReLU
        // switching inside [x - h, x + h] makes them disagree by O(jump).
        const double forward = (plus - f0) / options.step;
        const double backward = (f0 - minus) / options.step;
        if (std::abs(forward - backward) > kKinkTolerance * std::max({std::abs(forward), std::abs(backward), 1e-8})) {
          ++result.skipped_kinks;
          continue;
        }
        analytic.push_back(a[i]);
        numeric.push_back((plus - minus) / (2.0 * options.step));
      }
    };

    std::vector<std::span<double>> params;
    std::vector<std::span<const double>> grad_views;
    net.params().for_each([&](const std::string&, Tensor<double>& p) { params.push_back(p.values()); });
    grads.for_each([&](const std::string&, const Tensor<double>& g) { grad_views.push_back(g.values()); });
    for (std::size_t k = 0; k < params.size(); ++k) probe(params[k], grad_views[k]);
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic, numeric));
  }
  return result;
}

std::vector<GradCheckResult> run_gradchecks(const GradCheckOptions& options) {
  return {check_als_loss(options),
          check_attribute_mask(options),
          check_apply_mask(options),
          check_guided_category_features(options),
          check_verification_head(options),
          check_conv2d(options),
          check_norm(options),
          check_branch(options)};
}

}  // namespace agnet
