// SGD training over prompt contexts with a cosine learning-rate schedule.
//
// Everything downstream of the dataset is deterministic: epoch shuffles come
// from per-epoch keyed streams, batches are contiguous slices of the
// permutation, and the schedule depends only on the global step index. A run
// resumed from an epoch boundary therefore continues the exact step sequence
// of the uninterrupted run.
#pragma once

#include <vector>

#include "common.hpp"
#include "data.hpp"
#include "grad.hpp"
#include "loss.hpp"

namespace triprompt {

struct TrainConfig {
  double lr0 = 0.002;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  bool per_epoch_lr = false;  // anneal once per epoch instead of per step
  AslConfig asl;
  HeadConfig head;
  int threads = 1;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lr0 > 0.0)) throw ValidationError("train: base learning rate must be positive");
  if (c.epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (c.batch_size < 1) throw ValidationError("train: batch size must be >= 1");
  if (c.threads < 1) throw ValidationError("train: thread count must be >= 1");
  validate(c.asl);
  validate(c.head);
}

struct TraceRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step index
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<PromptTriplet> prompts;
  std::vector<TraceRow> trace;
  std::size_t next_epoch = 0;  // first epoch not yet run
};

inline std::string render_trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "epoch,step,lr,loss\n";
  for (const auto& r : trace) {
    out += std::to_string(r.epoch);
    out += ',';
    out += std::to_string(r.step);
    out += ',';
    out += fmt_g17(r.lr);
    out += ',';
    out += fmt_g17(r.loss);
    out += '\n';
  }
  return out;
}

// Mean loss per epoch, from a trace covering whole epochs.
inline std::vector<double> epoch_mean_losses(const std::vector<TraceRow>& trace) {
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (const auto& r : trace) {
    if (r.epoch >= sums.size()) {
      sums.resize(r.epoch + 1, 0.0);
      counts.resize(r.epoch + 1, 0);
    }
    sums[r.epoch] += r.loss;
    counts[r.epoch] += 1;
  }
  for (std::size_t e = 0; e < sums.size(); ++e)
    if (counts[e] > 0) sums[e] /= static_cast<double>(counts[e]);
  return sums;
}

// Runs epochs [start_epoch, stop_epoch) of the cfg.epochs-epoch schedule.
// Pass defaults for a full run; a resumed run passes the checkpoint epoch as
// start_epoch and receives identical steps to the uninterrupted schedule.
inline TrainResult train(const std::vector<ImageContext>& ctxs, const LabelMatrix& labels,
                         std::vector<PromptTriplet> prompts, Binding binding,
                         const std::vector<ClassToken>& tokens, const std::vector<int>& active,
                         const TextEncoderParams& enc, const TrainConfig& cfg,
                         std::size_t start_epoch = 0, std::size_t stop_epoch = SIZE_MAX) {
  validate(cfg);
  if (ctxs.empty()) throw ValidationError("train: empty dataset");
  if (labels.num_images != ctxs.size())
    throw ValidationError("train: label rows do not match image count");
  if (active.empty()) throw ValidationError("train: no active classes");
  if (start_epoch > cfg.epochs) throw ValidationError("train: start epoch beyond schedule");
  stop_epoch = std::min(stop_epoch, cfg.epochs);

  std::size_t known = 0;
  for (std::size_t i = 0; i < labels.num_images; ++i)
    for (int m : active) known += labels.at(i, static_cast<std::size_t>(m)) != 0;
  if (known == 0) throw ValidationError("train: no known labels among active classes");

  const std::size_t n = ctxs.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;

  TrainResult out;
  out.trace.reserve((stop_epoch - std::min(start_epoch, stop_epoch)) * steps_per_epoch);

  for (std::size_t epoch = start_epoch; epoch < stop_epoch; ++epoch) {
    const auto perm = keyed_permutation(cfg.seed, "shuffle", epoch, n);
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t global_step = epoch * steps_per_epoch + b;
      const double lr = cfg.per_epoch_lr ? cosine_lr(cfg.lr0, epoch, cfg.epochs)
                                         : cosine_lr(cfg.lr0, global_step, total_steps);
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      std::span<const std::size_t> batch(perm.data() + lo, hi - lo);

      std::size_t batch_known = 0;
      for (std::size_t img : batch)
        for (int m : active) batch_known += labels.at(img, static_cast<std::size_t>(m)) != 0;

      double loss = 0.0;
      if (batch_known > 0) {
        BatchGrad bg = grad_prompts(ctxs, batch, labels, prompts, binding, tokens, active, enc,
                                    cfg.head, cfg.asl, cfg.threads);
        sgd_step(prompts, bg.grads, lr);
        loss = bg.loss;
      }
      // a batch with no supervision is a logged no-op
      out.trace.push_back({epoch, global_step, lr, loss});
    }
  }

  out.prompts = std::move(prompts);
  out.next_epoch = stop_epoch;
  return out;
}

}  // namespace triprompt
