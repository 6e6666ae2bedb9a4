#include "agnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "agnet/error.hpp"
#include "agnet/layers.hpp"

namespace agnet {

namespace {

void check_distribution(std::span<const double> q, int target) {
  if (q.empty()) throw ShapeError("loss: empty probability vector");
  if (target < 0 || static_cast<std::size_t>(target) >= q.size()) {
    throw IndexError("loss: target " + std::to_string(target) + " outside [0, " +
                     std::to_string(q.size()) + ")");
  }
  const double sum = std::accumulate(q.begin(), q.end(), 0.0);
  if (!std::isfinite(sum) || std::abs(sum - 1.0) > 1e-5) {
    throw NumericError("loss: probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
}

double smoothing_term(double q_target, double alpha) {
  return -std::log(std::max(alpha + q_target, kProbabilityFloor));
}

}  // namespace

void ALSParams::validate() const {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("als.theta must lie in [0, 1]");
  if (!(alpha >= 0.0)) throw ConfigError("als.alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("als.beta must be >= 0");
}

double cross_entropy(std::span<const double> probabilities, int target) {
  check_distribution(probabilities, target);
  return -std::log(std::max(probabilities[target], kProbabilityFloor));
}

double epsilon_weight(const PairContext& ctx, double theta) {
  if (ctx.id1 == ctx.id2) return 1.0 - theta;
  if (ctx.attr1.labeled() && ctx.attr1 == ctx.attr2) return theta;
  return 0.0;
}

double als_loss(std::span<const double> probabilities, int target, const PairContext& ctx,
                const ALSParams& params) {
  params.validate();
  const double ce = cross_entropy(probabilities, target);
  const double eps = epsilon_weight(ctx, params.theta);
  if (params.beta == 0.0 || eps == 0.0) return ce;
  return ce + params.beta * eps * smoothing_term(probabilities[target], params.alpha);
}

double total_loss(double l_category, double l_color, double l_type, double l_verify,
                  const LossWeights& w) {
  if (!std::isfinite(l_category)) throw NumericError("total_loss: category loss is not finite");
  if (!std::isfinite(l_color)) throw NumericError("total_loss: color loss is not finite");
  if (!std::isfinite(l_type)) throw NumericError("total_loss: type loss is not finite");
  if (!std::isfinite(l_verify)) throw NumericError("total_loss: verification loss is not finite");
  return w.lambda1 * l_category + w.lambda2 * (l_color + l_type) + w.lambda3 * l_verify;
}

namespace {

// log softmax(z)[target], computed without forming probabilities.
double log_softmax_at(std::span<const double> logits, int target) {
  if (logits.empty()) throw ShapeError("loss: empty logit vector");
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
    throw IndexError("loss: target " + std::to_string(target) + " outside [0, " +
                     std::to_string(logits.size()) + ")");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - peak);
  return logits[target] - peak - std::log(sum);
}

}  // namespace

// The identity term is evaluated in log-softmax form, so its gradient
// q - onehot never vanishes even when q[target] underflows the floor.
LossWithGradient softmax_cross_entropy(std::span<const double> logits, int target) {
  const double log_qt = log_softmax_at(logits, target);
  const std::vector<double> q = nn::softmax<double>(logits);
  LossWithGradient out;
  out.loss = -log_qt;
  out.dlogits.assign(q.begin(), q.end());
  out.dlogits[target] -= 1.0;
  return out;
}

// d/dz_j of -log q_t - s*log(alpha + q_t), with s = beta*eps and
// dq_t/dz_j = q_t (delta_tj - q_j):
//   (1 + s q_t / (alpha + q_t)) (q_j - delta_tj)
// The smoothing term contributes only while alpha + q_t is above the floor.
LossWithGradient softmax_als(std::span<const double> logits, int target, const PairContext& ctx,
                             const ALSParams& params) {
  params.validate();
  const double log_qt = log_softmax_at(logits, target);
  const std::vector<double> q = nn::softmax<double>(logits);
  const double qt = q[target];
  const double s = params.beta * epsilon_weight(ctx, params.theta);
  LossWithGradient out;
  out.loss = -log_qt + (s != 0.0 ? s * smoothing_term(qt, params.alpha) : 0.0);
  double coeff = 1.0;
  if (s != 0.0 && params.alpha + qt > kProbabilityFloor) coeff += s * qt / (params.alpha + qt);
  out.dlogits.resize(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) {
    out.dlogits[j] = coeff * (q[j] - (static_cast<int>(j) == target ? 1.0 : 0.0));
  }
  return out;
}

}  // namespace agnet
