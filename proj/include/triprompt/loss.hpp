// Asymmetric focal loss on probabilities, cosine learning-rate schedule, and
// the SGD update on prompt tokens.
//
// Positives:  L = -(1-p)^gp * log(p)
// Negatives:  L = -q^gn * log(1-q),  q = max(p - c, 0)
// The hard margin c zeroes easy negatives entirely (loss and gradient); the
// kink at p = c takes subgradient 0. gp = gn = 0 and c = 0 reduces to BCE.
#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "common.hpp"
#include "prompt.hpp"

namespace triprompt {

struct AslConfig {
  double gamma_pos = 1.0;
  double gamma_neg = 2.0;
  double margin = 0.05;  // probability shift c applied to negatives
};

inline void validate(const AslConfig& c) {
  if (c.gamma_pos < 0.0 || c.gamma_neg < 0.0)
    throw ValidationError("asl: focusing exponents must be non-negative");
  if (c.gamma_neg < c.gamma_pos)
    throw ValidationError("asl: negative exponent must be >= positive exponent");
  if (c.margin < 0.0 || c.margin >= 1.0) throw ValidationError("asl: margin must be in [0, 1)");
}

inline double asl_loss(double p, int y, const AslConfig& cfg) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("asl_loss: probability must be inside (0, 1)");
  if (y == 1) {
    const double f = cfg.gamma_pos == 0.0 ? 1.0 : std::pow(1.0 - p, cfg.gamma_pos);
    return -f * std::log(p);
  }
  if (y == -1) {
    const double q = p - cfg.margin;
    if (q <= 0.0) return 0.0;
    const double f = cfg.gamma_neg == 0.0 ? 1.0 : std::pow(q, cfg.gamma_neg);
    return -f * std::log1p(-q);
  }
  throw ValidationError("asl_loss: label must be +1 or -1 (unknown pairs never reach the loss)");
}

// dL/dp, matching asl_loss including the zero region below the margin.
inline double asl_loss_dp(double p, int y, const AslConfig& cfg) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("asl_loss_dp: probability must be inside (0, 1)");
  if (y == 1) {
    const double om = 1.0 - p;
    const double f = cfg.gamma_pos == 0.0 ? 1.0 : std::pow(om, cfg.gamma_pos);
    double d = -f / p;
    if (cfg.gamma_pos != 0.0) d += cfg.gamma_pos * std::pow(om, cfg.gamma_pos - 1.0) * std::log(p);
    return d;
  }
  if (y == -1) {
    const double q = p - cfg.margin;
    if (q <= 0.0) return 0.0;
    const double f = cfg.gamma_neg == 0.0 ? 1.0 : std::pow(q, cfg.gamma_neg);
    double d = f / (1.0 - q);
    if (cfg.gamma_neg != 0.0)
      d -= cfg.gamma_neg * std::pow(q, cfg.gamma_neg - 1.0) * std::log1p(-q);
    return d;
  }
  throw ValidationError("asl_loss_dp: label must be +1 or -1");
}

// Mean loss over known pairs. probs and labels are parallel flat arrays;
// labels use {+1, -1, 0} with 0 = unknown (skipped).
inline double batch_loss(const std::vector<double>& probs, const std::vector<int>& labels,
                         const AslConfig& cfg) {
  if (probs.size() != labels.size()) throw ValidationError("batch_loss: size mismatch");
  double sum = 0.0;
  std::size_t known = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] == 0) continue;
    sum += asl_loss(probs[i], labels[i], cfg);
    ++known;
  }
  if (known == 0) throw ValidationError("batch_loss: no known pairs in batch");
  return sum / static_cast<double>(known);
}

// Half-cosine decay from lr0 at step 0 toward 0 at step = total_steps.
inline double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
  if (!(lr0 > 0.0)) throw ValidationError("cosine_lr: base rate must be positive");
  if (total_steps < 1) throw ValidationError("cosine_lr: total steps must be >= 1");
  if (step > total_steps) throw ValidationError("cosine_lr: step beyond schedule");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// In-place SGD: tokens -= lr * grad. Gradient containers mirror the prompt
// layout; any shape mismatch is an error.
inline void sgd_step(std::vector<PromptTriplet>& prompts, const std::vector<PromptTriplet>& grads,
                     double lr) {
  if (prompts.size() != grads.size()) throw ValidationError("sgd_step: unit count mismatch");
  auto upd = [lr](std::vector<TokenVector>& ts, const std::vector<TokenVector>& gs) {
    if (ts.size() != gs.size()) throw ValidationError("sgd_step: token count mismatch");
    for (std::size_t j = 0; j < ts.size(); ++j) {
      if (ts[j].size() != gs[j].size()) throw ValidationError("sgd_step: token dim mismatch");
      for (std::size_t d = 0; d < ts[j].size(); ++d) ts[j][d] -= lr * gs[j][d];
    }
  };
  for (std::size_t u = 0; u < prompts.size(); ++u) {
    upd(prompts[u].evidential, grads[u].evidential);
    upd(prompts[u].positive, grads[u].positive);
    upd(prompts[u].negative, grads[u].negative);
  }
}

}  // namespace triprompt
