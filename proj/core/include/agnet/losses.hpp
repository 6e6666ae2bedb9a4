#pragma once

// Training objectives: cross-entropy for the attribute and identity heads,
// the attribute-based label smoothing (ALS) verification loss and the
// weighted multi-task total. All losses are evaluated in double.

#include <span>
#include <vector>

namespace agnet {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr int kUnlabeled = -1;

struct ALSParams {
  double theta = 0.1;  // smoothing weight for same-attribute, different-id pairs
  double alpha = 0.1;  // shift inside log(alpha + q)
  double beta = 1.0;   // multiplier on the smoothing term

  void validate() const;
};

struct LossWeights {
  double lambda1 = 0.5;  // identity
  double lambda2 = 0.5;  // color + type
  double lambda3 = 1.0;  // verification
};

struct Attributes {
  int color = kUnlabeled;
  int type = kUnlabeled;

  bool labeled() const { return color != kUnlabeled && type != kUnlabeled; }
  friend bool operator==(const Attributes&, const Attributes&) = default;
};

struct PairContext {
  int id1 = 0;
  int id2 = 0;
  Attributes attr1;
  Attributes attr2;
};

// -log q[target], with q floored at kProbabilityFloor.
double cross_entropy(std::span<const double> probabilities, int target);

// theta when the pair shares color and type but not identity, 1 - theta when
// identities match, 0 otherwise. Unlabeled attributes never compare equal.
double epsilon_weight(const PairContext& ctx, double theta);

double als_loss(std::span<const double> probabilities, int target, const PairContext& ctx,
                const ALSParams& params);

double total_loss(double l_category, double l_color, double l_type, double l_verify,
                  const LossWeights& w);

struct LossWithGradient {
  double loss = 0.0;
  std::vector<double> dlogits;
};

// Softmax followed by cross_entropy / als_loss, with the gradient w.r.t. the
// logits. The identity term uses log-softmax instead of the floor, so the
// value equals the probability form whenever q[target] exceeds the floor.
LossWithGradient softmax_cross_entropy(std::span<const double> logits, int target);
LossWithGradient softmax_als(std::span<const double> logits, int target, const PairContext& ctx,
                             const ALSParams& params);

}  // namespace agnet
