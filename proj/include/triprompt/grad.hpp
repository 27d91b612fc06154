// Analytic gradients of the batch loss with respect to prompt context tokens.
//
// The chain runs loss -> probability -> aggregated deltas -> logit maps
// (through WTA when enabled) -> prompt embeddings -> context tokens. Every
// stage has a closed-form reverse; finite differences are the contract
// (see gradcheck.hpp) and the acceptance gate holds the two within 1e-5.
#pragma once

#include <span>
#include <vector>

#include "common.hpp"
#include "data.hpp"
#include "loss.hpp"
#include "prompt.hpp"
#include "spatial.hpp"

namespace triprompt {

struct BatchGrad {
  std::vector<PromptTriplet> grads;  // same layout as the prompts
  double loss = 0.0;
  std::size_t known_pairs = 0;
};

namespace detail {

// dp/d(delta) factors per mode. p = sigmoid(arg / tau) with arg depending on
// the mode; the clamped p is used so the derivative matches the actual
// forward output.
inline void prob_delta_grads(AggMode mode, double p, double tau, double dLdp, double& gp,
                             double& gn) {
  const double sig = dLdp * p * (1.0 - p) / tau;
  gp = 0.0;
  gn = 0.0;
  switch (mode) {
    case AggMode::Triple:
    case AggMode::Dual:
      gp = sig;
      gn = -sig;
      break;
    case AggMode::PosOnly: gp = sig; break;
    case AggMode::NegOnly: gn = -sig; break;
  }
}

// Embedding-space gradients -> token gradients, honoring the binding.
inline void pull_back_to_tokens(const ClassEmbGrads& eg, const std::vector<int>& active,
                                Binding binding, const TextEncoderParams& enc, AggMode mode,
                                std::vector<PromptTriplet>& grads) {
  const std::size_t D = enc.text_dim();
  if (binding == Binding::Shared) {
    // sum embedding grads over classes first; the pullback is linear
    auto collapse = [&](const Mat& g) {
      Vec total(D, 0.0);
      for (std::size_t r = 0; r < g.rows; ++r) {
        auto row = g.row(r);
        for (std::size_t d = 0; d < D; ++d) total[d] += row[d];
      }
      return total;
    };
    if (mode_uses_evidential(mode))
      accumulate_token_grads(enc, collapse(eg.evi), grads[0].evidential);
    if (mode_uses_positive(mode)) accumulate_token_grads(enc, collapse(eg.pos), grads[0].positive);
    if (mode_uses_negative(mode)) accumulate_token_grads(enc, collapse(eg.neg), grads[0].negative);
    return;
  }
  for (std::size_t r = 0; r < active.size(); ++r) {
    auto& unit = grads[static_cast<std::size_t>(active[r])];
    if (mode_uses_evidential(mode)) accumulate_token_grads(enc, eg.evi.row(r), unit.evidential);
    if (mode_uses_positive(mode)) accumulate_token_grads(enc, eg.pos.row(r), unit.positive);
    if (mode_uses_negative(mode)) accumulate_token_grads(enc, eg.neg.row(r), unit.negative);
  }
}

}  // namespace detail

// Gradient of the mean ASL over the known pairs of a batch. `batch` holds
// indices into `ctxs` (and label rows); `active` maps embedding rows to class
// ids. Unknown pairs contribute exactly nothing. With threads > 1 images are
// processed in parallel into per-image slots and reduced in batch order, so
// the result is independent of the worker count.
inline BatchGrad grad_prompts(const std::vector<ImageContext>& ctxs,
                              std::span<const std::size_t> batch, const LabelMatrix& labels,
                              const std::vector<PromptTriplet>& prompts, Binding binding,
                              const std::vector<ClassToken>& tokens,
                              const std::vector<int>& active, const TextEncoderParams& enc,
                              const HeadConfig& head, const AslConfig& asl, int threads = 1) {
  validate(head);
  validate(asl);
  if (batch.empty()) throw ValidationError("grad_prompts: empty batch");
  const std::size_t M = active.size();

  const ClassEmbeddings emb = build_class_embeddings(prompts, binding, tokens, active, enc,
                                                     head.mode);

  // count known pairs first: the mean scale enters every per-pair gradient
  std::size_t known = 0;
  for (std::size_t bi : batch) {
    for (std::size_t r = 0; r < M; ++r)
      known += labels.at(bi, static_cast<std::size_t>(active[r])) != 0;
  }
  if (known == 0) throw ValidationError("grad_prompts: batch has no known pairs");
  const double scale = 1.0 / static_cast<double>(known);

  std::vector<ClassEmbGrads> slots(batch.size());
  std::vector<double> loss_slots(batch.size(), 0.0);

  parallel_for(batch.size(), threads, [&](std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t img = batch[b];
      ForwardTrace trace;
      const ClassScores scores = forward_image(ctxs[img], emb, head, &trace);
      Vec g_dpos(M, 0.0), g_dneg(M, 0.0);
      double lsum = 0.0;
      for (std::size_t r = 0; r < M; ++r) {
        const int y = labels.at(img, static_cast<std::size_t>(active[r]));
        if (y == 0) continue;
        const double p = scores.prob[r];
        lsum += asl_loss(p, y, asl);
        const double dLdp = asl_loss_dp(p, y, asl) * scale;
        double gp, gn;
        detail::prob_delta_grads(head.mode, p, head.tau, dLdp, gp, gn);
        g_dpos[r] = gp;
        g_dneg[r] = gn;
      }
      loss_slots[b] = lsum;
      slots[b] = zero_emb_grads(emb);
      backward_image(ctxs[img], emb, head, trace, scores, g_dpos, g_dneg, slots[b]);
    }
  });

  // ordered reduction: embedding grads in batch order, then one pullback
  ClassEmbGrads total = zero_emb_grads(emb);
  double loss_sum = 0.0;
  auto add = [](Mat& dst, const Mat& src) {
    for (std::size_t i = 0; i < dst.a.size(); ++i) dst.a[i] += src.a[i];
  };
  for (std::size_t b = 0; b < batch.size(); ++b) {
    loss_sum += loss_slots[b];
    if (!total.evi.empty()) add(total.evi, slots[b].evi);
    if (!total.pos.empty()) add(total.pos, slots[b].pos);
    if (!total.neg.empty()) add(total.neg, slots[b].neg);
  }

  BatchGrad out;
  out.grads = zero_like(prompts);
  out.known_pairs = known;
  out.loss = loss_sum * scale;
  detail::pull_back_to_tokens(total, active, binding, enc, head.mode, out.grads);
  return out;
}

// Token gradients of a single aggregated delta (one image, one class, one
// side). Used to verify branch disentanglement: in triple mode the negative
// delta must have exactly zero gradient into positive-branch tokens, and vice
// versa.
enum class DeltaSide { Pos, Neg };

inline std::vector<PromptTriplet> delta_token_grads(const ImageContext& ctx,
                                                    const std::vector<PromptTriplet>& prompts,
                                                    Binding binding,
                                                    const std::vector<ClassToken>& tokens,
                                                    const std::vector<int>& active,
                                                    const TextEncoderParams& enc,
                                                    const HeadConfig& head, std::size_t class_row,
                                                    DeltaSide side) {
  const ClassEmbeddings emb = build_class_embeddings(prompts, binding, tokens, active, enc,
                                                     head.mode);
  if (class_row >= active.size()) throw ValidationError("delta_token_grads: class row out of range");
  ForwardTrace trace;
  const ClassScores scores = forward_image(ctx, emb, head, &trace);
  Vec g_dpos(active.size(), 0.0), g_dneg(active.size(), 0.0);
  if (side == DeltaSide::Pos)
    g_dpos[class_row] = 1.0;
  else
    g_dneg[class_row] = 1.0;
  ClassEmbGrads eg = zero_emb_grads(emb);
  backward_image(ctx, emb, head, trace, scores, g_dpos, g_dneg, eg);
  std::vector<PromptTriplet> grads = zero_like(prompts);
  detail::pull_back_to_tokens(eg, active, binding, enc, head.mode, grads);
  return grads;
}

}  // namespace triprompt
