#pragma once

// Central finite-difference verification of the analytic backward passes.
// Every check runs in double precision against a random scalar readout
// L = sum_i r_i * output_i.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace agnet {

struct GradCheckOptions {
  int instances = 20;
  double step = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string op;
  int instances = 0;
  double max_relative_error = 0.0;
  int skipped_kinks = 0;  // coordinates straddling a ReLU kink (branch check only)
};

// max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|, 1e-12)
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

// Central differences of f with respect to every entry of x (restored after).
std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x, double step);

GradCheckResult check_als_loss(const GradCheckOptions& options);
GradCheckResult check_attribute_mask(const GradCheckOptions& options);
GradCheckResult check_apply_mask(const GradCheckOptions& options);
GradCheckResult check_guided_category_features(const GradCheckOptions& options);
GradCheckResult check_verification_head(const GradCheckOptions& options);
GradCheckResult check_conv2d(const GradCheckOptions& options);
GradCheckResult check_norm(const GradCheckOptions& options);
// Every parameter of one branch pass, on a tiny network.
// Coordinates whose one-sided differences disagree are ReLU kinks and skipped.
GradCheckResult check_branch(const GradCheckOptions& options);

std::vector<GradCheckResult> run_gradchecks(const GradCheckOptions& options);

}  // namespace agnet
