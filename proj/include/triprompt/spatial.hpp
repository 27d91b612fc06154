// Spatial scoring head: frozen region projection, cosine logit maps,
// winner-take-all cross-class reweighting, evidence-guided aggregation, and
// the temperature-scaled probability map.
//
// Aggregation modes:
//   triple:   softmax weights come from the evidential branch; positive and
//             negative logit maps are aggregated under those shared weights.
//   dual:     the (optionally WTA-reweighted) positive map weights itself and
//             the negative map — attention follows the positive evidence.
//   pos_only: self-guided positive branch alone, p = sigmoid(dpos / tau).
//   neg_only: self-guided negative branch alone, p = sigmoid(-dneg / tau).
//
// Winner-take-all acts on positive logit maps only, before aggregation, and
// couples classes at each region: z_m = gamma * s_m * max_k s_k, w =
// softmax_m(z), s'_m = w_m * s_m. In triple mode the evidential weights are
// taken from the raw evidential map; WTA changes the aggregated values, not
// the attention source.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "common.hpp"
#include "prompt.hpp"
#include "rng.hpp"

namespace triprompt {

constexpr double kNormEps = 1e-12;

// One image: H x W grid of D_v-dim region features. Stored as float32 so the
// in-memory payload round-trips the on-disk format bit for bit; all math is
// done in double.
struct RegionFeatureMap {
  int image_id = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t dim = 0;
  std::vector<float> data;  // region-major, vector-contiguous

  std::size_t regions() const { return height * width; }
  std::span<const float> region(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

// Frozen projection from feature space into the shared text space:
// f = proj * e + bias. `proj` comes from the same cross-modal sampler as the
// text mixing matrix (see prompt.hpp).
struct ProjectionParams {
  Mat proj;  // text_dim x feature_dim
  Vec bias;  // text_dim
  std::uint64_t seed = 0;

  std::size_t feature_dim() const { return proj.cols; }
  std::size_t text_dim() const { return proj.rows; }
};

inline ProjectionParams make_projection(std::uint64_t seed, std::size_t text_dim,
                                        std::size_t feature_dim, double bias_scale) {
  if (text_dim < 1 || feature_dim < 1) throw ValidationError("projection dims must be positive");
  if (bias_scale < 0.0) throw ValidationError("projection bias scale must be non-negative");
  ProjectionParams p;
  p.seed = seed;
  p.proj = cross_modal_matrix(seed, text_dim, feature_dim);
  Rng rng(derive_seed(seed, "projbias"));
  p.bias = gaussian_vec(rng, text_dim, bias_scale);
  return p;
}

// All regions of one image mapped into text space; rows are regions.
inline Mat project_regions(const RegionFeatureMap& fmap, const ProjectionParams& proj) {
  if (fmap.dim != proj.feature_dim())
    throw ValidationError("project_regions: feature dim does not match projection");
  if (fmap.regions() == 0) throw ValidationError("project_regions: empty grid");
  if (fmap.data.size() != fmap.regions() * fmap.dim)
    throw ValidationError("project_regions: payload size does not match grid dims");
  const std::size_t R = fmap.regions();
  Mat out(R, proj.text_dim());
  Vec e(fmap.dim);
  for (std::size_t i = 0; i < R; ++i) {
    auto src = fmap.region(i);
    for (std::size_t d = 0; d < fmap.dim; ++d) e[d] = static_cast<double>(src[d]);
    auto row = out.row(i);
    matvec(proj.proj, e, row);
    for (std::size_t d = 0; d < row.size(); ++d) row[d] += proj.bias[d];
  }
  return out;
}

namespace detail {

// Cosine map against one embedding, reusing precomputed region norms.
// Shared by the public op and the full forward pass so both produce
// bit-identical logits.
inline void cosine_map_into(const Mat& projected, const Vec& region_norms,
                            std::span<const double> embedding, std::span<double> out) {
  const double en = norm2(embedding);
  if (en < kNormEps) throw NumericError("cosine: prompt embedding has degenerate norm");
  for (std::size_t i = 0; i < projected.rows; ++i) {
    if (region_norms[i] < kNormEps) throw NumericError("cosine: region feature has degenerate norm");
    out[i] = dot(projected.row(i), embedding) / (region_norms[i] * en);
  }
}

inline Vec row_norms(const Mat& m) {
  Vec n(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) n[i] = norm2(m.row(i));
  return n;
}

// Stable softmax. Writes weights, returns nothing; input may equal output.
inline void softmax_into(std::span<const double> z, std::span<double> w) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    w[i] = std::exp(z[i] - mx);
    sum += w[i];
  }
  for (std::size_t i = 0; i < z.size(); ++i) w[i] /= sum;
}

}  // namespace detail

// Cosine similarity of every projected region against one prompt embedding.
inline Vec cosine_logits(const Mat& projected, const Vec& embedding) {
  if (projected.cols != embedding.size())
    throw ValidationError("cosine_logits: embedding dim does not match projected regions");
  if (projected.rows == 0) throw ValidationError("cosine_logits: no regions");
  Vec norms = detail::row_norms(projected);
  Vec out(projected.rows);
  detail::cosine_map_into(projected, norms, embedding, out);
  return out;
}

// Winner-take-all reweighting across classes, applied independently at each
// region. `pos_maps` is classes x regions. Ties in the max break toward the
// lowest class index (that index also receives the max-path subgradient).
inline Mat wta_reweight(const Mat& pos_maps, double gamma) {
  if (!(gamma > 0.0)) throw ValidationError("wta_reweight: gamma must be positive");
  if (pos_maps.rows == 0 || pos_maps.cols == 0) throw ValidationError("wta_reweight: empty map");
  const std::size_t M = pos_maps.rows, R = pos_maps.cols;
  Mat out(M, R);
  Vec z(M), w(M);
  for (std::size_t i = 0; i < R; ++i) {
    std::size_t arg = 0;
    for (std::size_t m = 1; m < M; ++m)
      if (pos_maps(m, i) > pos_maps(arg, i)) arg = m;
    const double mx = pos_maps(arg, i);
    for (std::size_t m = 0; m < M; ++m) z[m] = gamma * pos_maps(m, i) * mx;
    detail::softmax_into(z, w);
    for (std::size_t m = 0; m < M; ++m) out(m, i) = w[m] * pos_maps(m, i);
  }
  return out;
}

// delta = sum_i softmax(evidence)_i * value_i. The caller applies any
// sharpness scaling to `evidence` beforehand.
inline double aggregate_evidence_guided(const Vec& evidence, const Vec& value) {
  if (evidence.size() != value.size() || evidence.empty())
    throw ValidationError("aggregate: evidence and value maps must have equal non-zero size");
  Vec w(evidence.size());
  detail::softmax_into(evidence, w);
  return dot(w, value);
}

// Self-guided aggregation: the map weights itself.
inline double aggregate_self_guided(const Vec& map, const Vec& value) {
  return aggregate_evidence_guided(map, value);
}

// p = sigmoid((dpos - dneg) / tau), computed in the overflow-safe branch and
// clamped to the open interval (0, 1): downstream losses take logs of both p
// and 1-p, so the exact endpoints are never returned even at extreme margins.
inline double predict_prob(double delta_pos, double delta_neg, double tau) {
  if (!(tau > 0.0)) throw ValidationError("predict_prob: tau must be positive");
  const double d = (delta_pos - delta_neg) / tau;
  double p;
  if (d >= 0.0) {
    p = 1.0 / (1.0 + std::exp(-d));
  } else {
    const double e = std::exp(d);
    p = e / (1.0 + e);
  }
  const double hi = std::nextafter(1.0, 0.0);
  if (p > hi) p = hi;
  if (p < std::numeric_limits<double>::min()) p = std::numeric_limits<double>::min();
  return p;
}

enum class AggMode { Triple, Dual, PosOnly, NegOnly };

inline bool mode_uses_evidential(AggMode m) { return m == AggMode::Triple; }
inline bool mode_uses_positive(AggMode m) { return m != AggMode::NegOnly; }
inline bool mode_uses_negative(AggMode m) { return m != AggMode::PosOnly; }

struct HeadConfig {
  AggMode mode = AggMode::Triple;
  bool wta = false;          // reweight positive maps before aggregation
  double wta_gamma = 5.0;
  double tau = 0.01;
  double sharpness = 1.0;    // multiplies the aggregation weight source
};

inline void validate(const HeadConfig& h) {
  if (!(h.tau > 0.0)) throw ValidationError("head: tau must be positive");
  if (!(h.wta_gamma > 0.0)) throw ValidationError("head: wta gamma must be positive");
  if (!(h.sharpness > 0.0)) throw ValidationError("head: sharpness must be positive");
}

// Per-image frozen context: projected regions plus cached norms. Built once
// per image since the projection never trains.
struct ImageContext {
  int image_id = 0;
  Mat projected;     // regions x text_dim
  Vec region_norms;  // regions
};

inline ImageContext make_image_context(const RegionFeatureMap& fmap, const ProjectionParams& proj) {
  ImageContext ctx;
  ctx.image_id = fmap.image_id;
  ctx.projected = project_regions(fmap, proj);
  ctx.region_norms = detail::row_norms(ctx.projected);
  return ctx;
}

// Encoded prompt embeddings for the active class set; rows are classes in
// active order. Branches unused by the mode stay empty.
struct ClassEmbeddings {
  Mat evi, pos, neg;
  std::size_t num_classes = 0;
};

inline ClassEmbeddings build_class_embeddings(const std::vector<PromptTriplet>& prompts,
                                              Binding binding,
                                              const std::vector<ClassToken>& tokens,
                                              const std::vector<int>& active,
                                              const TextEncoderParams& enc, AggMode mode) {
  ClassEmbeddings out;
  out.num_classes = active.size();
  if (active.empty()) throw ValidationError("build_class_embeddings: empty class set");
  const std::size_t D = enc.text_dim();
  if (mode_uses_evidential(mode)) out.evi = Mat(active.size(), D);
  if (mode_uses_positive(mode)) out.pos = Mat(active.size(), D);
  if (mode_uses_negative(mode)) out.neg = Mat(active.size(), D);
  for (std::size_t r = 0; r < active.size(); ++r) {
    const int cls = active[r];
    if (cls < 0 || static_cast<std::size_t>(cls) >= tokens.size())
      throw ValidationError("build_class_embeddings: class id out of range");
    const std::size_t unit = binding == Binding::Shared ? 0 : static_cast<std::size_t>(cls);
    if (unit >= prompts.size())
      throw ValidationError("build_class_embeddings: prompt unit out of range");
    const PromptTriplet& t = prompts[unit];
    auto fill = [&](const std::vector<TokenVector>& seq, Mat& dst) {
      Vec e = encode_prompt(seq, tokens[static_cast<std::size_t>(cls)], enc);
      auto row = dst.row(r);
      for (std::size_t d = 0; d < D; ++d) row[d] = e[d];
    };
    if (mode_uses_evidential(mode)) fill(t.evidential, out.evi);
    if (mode_uses_positive(mode)) fill(t.positive, out.pos);
    if (mode_uses_negative(mode)) fill(t.negative, out.neg);
  }
  return out;
}

// Per-class outputs for one image.
struct ClassScores {
  Vec delta_pos;  // 0 in neg_only mode
  Vec delta_neg;  // 0 in pos_only mode
  Vec prob;
};

// Intermediates retained for the backward pass.
struct ForwardTrace {
  Mat evi, pos, neg;   // raw cosine maps, classes x regions (used branches only)
  Mat pos_prime;       // WTA-reweighted positive maps (equals pos when WTA off)
  Mat agg_w;           // aggregation weights per class, classes x regions
  bool wta_applied = false;
};

inline ClassScores forward_image(const ImageContext& ctx, const ClassEmbeddings& emb,
                                 const HeadConfig& head, ForwardTrace* trace = nullptr) {
  validate(head);
  const std::size_t M = emb.num_classes;
  const std::size_t R = ctx.projected.rows;
  if (M == 0) throw ValidationError("forward_image: no classes");

  Mat evi_map, pos_map, neg_map;
  auto fill_maps = [&](const Mat& embs, Mat& maps) {
    if (embs.cols != ctx.projected.cols)
      throw ValidationError("forward_image: embedding dim does not match projected regions");
    maps = Mat(M, R);
    for (std::size_t m = 0; m < M; ++m) {
      auto row = maps.row(m);
      detail::cosine_map_into(ctx.projected, ctx.region_norms, embs.row(m), row);
    }
  };
  if (mode_uses_evidential(head.mode)) fill_maps(emb.evi, evi_map);
  if (mode_uses_positive(head.mode)) fill_maps(emb.pos, pos_map);
  if (mode_uses_negative(head.mode)) fill_maps(emb.neg, neg_map);

  const bool apply_wta = head.wta && mode_uses_positive(head.mode);
  Mat pos_prime = apply_wta ? wta_reweight(pos_map, head.wta_gamma) : pos_map;

  ClassScores out;
  out.delta_pos.assign(M, 0.0);
  out.delta_neg.assign(M, 0.0);
  out.prob.assign(M, 0.0);
  Mat agg_w(M, R);

  Vec source(R), weights(R);
  for (std::size_t m = 0; m < M; ++m) {
    // choose the weight source per mode, scaled by the sharpness knob
    std::span<const double> src_map;
    switch (head.mode) {
      case AggMode::Triple: src_map = evi_map.row(m); break;
      case AggMode::Dual:
      case AggMode::PosOnly: src_map = pos_prime.row(m); break;
      case AggMode::NegOnly: src_map = neg_map.row(m); break;
    }
    for (std::size_t i = 0; i < R; ++i) source[i] = head.sharpness * src_map[i];
    detail::softmax_into(source, weights);
    auto wrow = agg_w.row(m);
    for (std::size_t i = 0; i < R; ++i) wrow[i] = weights[i];

    if (mode_uses_positive(head.mode)) out.delta_pos[m] = dot(weights, pos_prime.row(m));
    if (mode_uses_negative(head.mode)) out.delta_neg[m] = dot(weights, neg_map.row(m));
    out.prob[m] = predict_prob(out.delta_pos[m], out.delta_neg[m], head.tau);
  }

  if (trace) {
    trace->evi = std::move(evi_map);
    trace->pos = std::move(pos_map);
    trace->neg = std::move(neg_map);
    trace->pos_prime = std::move(pos_prime);
    trace->agg_w = std::move(agg_w);
    trace->wta_applied = apply_wta;
  }
  return out;
}

// Gradients w.r.t. class embeddings, accumulated across images.
struct ClassEmbGrads {
  Mat evi, pos, neg;
};

inline ClassEmbGrads zero_emb_grads(const ClassEmbeddings& emb) {
  ClassEmbGrads g;
  if (!emb.evi.empty()) g.evi = Mat(emb.evi.rows, emb.evi.cols);
  if (!emb.pos.empty()) g.pos = Mat(emb.pos.rows, emb.pos.cols);
  if (!emb.neg.empty()) g.neg = Mat(emb.neg.rows, emb.neg.cols);
  return g;
}

namespace detail {

// Reverse of cosine_map_into for one class: scatters map gradients g_s back
// to the embedding. g_E = (1/|E|) * sum_i g_i f_i / |f_i|  -  (sum_i g_i S_i) * E / |E|^2.
inline void cosine_backward_embedding(const Mat& projected, const Vec& region_norms,
                                      std::span<const double> embedding,
                                      std::span<const double> map_vals,
                                      std::span<const double> g_map, std::span<double> g_emb) {
  const std::size_t D = projected.cols;
  const double en = norm2(embedding);
  Vec acc(D, 0.0);
  double gs = 0.0;
  for (std::size_t i = 0; i < projected.rows; ++i) {
    const double gi = g_map[i];
    if (gi == 0.0) continue;
    auto f = projected.row(i);
    const double c = gi / region_norms[i];
    for (std::size_t d = 0; d < D; ++d) acc[d] += c * f[d];
    gs += gi * map_vals[i];
  }
  for (std::size_t d = 0; d < D; ++d)
    g_emb[d] += acc[d] / en - gs * embedding[d] / (en * en);
}

// Reverse of wta_reweight at one region (column): given gp = dL/ds' for every
// class, adds dL/ds into g_col. `s` raw logits, `sp` reweighted, `w` the
// softmax weights. First max index takes the subgradient.
inline void wta_backward_column(std::span<const double> s, std::span<const double> sp,
                                std::span<const double> w, std::span<const double> gp,
                                double gamma, std::span<double> g_col) {
  const std::size_t M = s.size();
  std::size_t arg = 0;
  for (std::size_t m = 1; m < M; ++m)
    if (s[m] > s[arg]) arg = m;
  const double mx = s[arg];
  double B = 0.0, C = 0.0, T = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    B += gp[m] * sp[m];
    C += gp[m] * sp[m] * s[m];
    T += sp[m];
  }
  for (std::size_t m = 0; m < M; ++m)
    g_col[m] += w[m] * gp[m] + gamma * mx * (gp[m] * sp[m] - w[m] * B);
  g_col[arg] += gamma * (C - T * B);
}

}  // namespace detail

// Closed-form reverse pass of forward_image: given dL/d(delta_pos) and
// dL/d(delta_neg) per class, accumulates dL/d(embedding) for every branch.
inline void backward_image(const ImageContext& ctx, const ClassEmbeddings& emb,
                           const HeadConfig& head, const ForwardTrace& trace,
                           const ClassScores& scores, const Vec& g_dpos, const Vec& g_dneg,
                           ClassEmbGrads& grads) {
  const std::size_t M = emb.num_classes;
  const std::size_t R = ctx.projected.rows;

  Mat g_evi_map, g_pos_prime, g_neg_map;
  if (mode_uses_evidential(head.mode)) g_evi_map = Mat(M, R);
  if (mode_uses_positive(head.mode)) g_pos_prime = Mat(M, R);
  if (mode_uses_negative(head.mode)) g_neg_map = Mat(M, R);

  for (std::size_t m = 0; m < M; ++m) {
    const double gp = g_dpos.empty() ? 0.0 : g_dpos[m];
    const double gn = g_dneg.empty() ? 0.0 : g_dneg[m];
    if (gp == 0.0 && gn == 0.0) continue;
    auto w = trace.agg_w.row(m);
    const double dpos = scores.delta_pos[m];
    const double dneg = scores.delta_neg[m];

    switch (head.mode) {
      case AggMode::Triple: {
        auto vpos = trace.pos_prime.row(m);
        auto vneg = trace.neg.row(m);
        auto ge = g_evi_map.row(m);
        auto gpp = g_pos_prime.row(m);
        auto gnm = g_neg_map.row(m);
        for (std::size_t i = 0; i < R; ++i) {
          gpp[i] += w[i] * gp;
          gnm[i] += w[i] * gn;
          ge[i] += head.sharpness * w[i] * ((vpos[i] - dpos) * gp + (vneg[i] - dneg) * gn);
        }
        break;
      }
      case AggMode::Dual: {
        auto vpos = trace.pos_prime.row(m);
        auto vneg = trace.neg.row(m);
        auto gpp = g_pos_prime.row(m);
        auto gnm = g_neg_map.row(m);
        for (std::size_t i = 0; i < R; ++i) {
          gpp[i] += w[i] * gp +
                    head.sharpness * w[i] * ((vpos[i] - dpos) * gp + (vneg[i] - dneg) * gn);
          gnm[i] += w[i] * gn;
        }
        break;
      }
      case AggMode::PosOnly: {
        auto vpos = trace.pos_prime.row(m);
        auto gpp = g_pos_prime.row(m);
        for (std::size_t i = 0; i < R; ++i)
          gpp[i] += w[i] * gp + head.sharpness * w[i] * (vpos[i] - dpos) * gp;
        break;
      }
      case AggMode::NegOnly: {
        auto vneg = trace.neg.row(m);
        auto gnm = g_neg_map.row(m);
        for (std::size_t i = 0; i < R; ++i)
          gnm[i] += w[i] * gn + head.sharpness * w[i] * (vneg[i] - dneg) * gn;
        break;
      }
    }
  }

  // WTA couples classes at each region, so its reverse runs column-wise.
  Mat g_pos_map;
  if (mode_uses_positive(head.mode)) {
    if (trace.wta_applied) {
      g_pos_map = Mat(M, R);
      Vec s(M), sp(M), w(M), gp(M), gcol(M);
      for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t m = 0; m < M; ++m) {
          s[m] = trace.pos(m, i);
          sp[m] = trace.pos_prime(m, i);
          gp[m] = g_pos_prime(m, i);
          gcol[m] = 0.0;
        }
        // recover the softmax weights without re-running softmax: sp = w * s,
        // but s can be zero, so recompute from z for exactness
        std::size_t arg = 0;
        for (std::size_t m = 1; m < M; ++m)
          if (s[m] > s[arg]) arg = m;
        const double mx = s[arg];
        Vec z(M);
        for (std::size_t m = 0; m < M; ++m) z[m] = head.wta_gamma * s[m] * mx;
        detail::softmax_into(z, w);
        detail::wta_backward_column(s, sp, w, gp, head.wta_gamma, gcol);
        for (std::size_t m = 0; m < M; ++m) g_pos_map(m, i) += gcol[m];
      }
    } else {
      g_pos_map = std::move(g_pos_prime);
    }
  }

  for (std::size_t m = 0; m < M; ++m) {
    if (mode_uses_evidential(head.mode))
      detail::cosine_backward_embedding(ctx.projected, ctx.region_norms, emb.evi.row(m),
                                        trace.evi.row(m), g_evi_map.row(m), grads.evi.row(m));
    if (mode_uses_positive(head.mode))
      detail::cosine_backward_embedding(ctx.projected, ctx.region_norms, emb.pos.row(m),
                                        trace.pos.row(m), g_pos_map.row(m), grads.pos.row(m));
    if (mode_uses_negative(head.mode))
      detail::cosine_backward_embedding(ctx.projected, ctx.region_norms, emb.neg.row(m),
                                        trace.neg.row(m), g_neg_map.row(m), grads.neg.row(m));
  }
}

// Serialization of the frozen projection (checkpoint + immutability tests).
inline void serialize_projection(const ProjectionParams& p, std::string& buf) {
  put_u64(buf, p.seed);
  put_u32(buf, static_cast<std::uint32_t>(p.proj.rows));
  put_u32(buf, static_cast<std::uint32_t>(p.proj.cols));
  for (double x : p.proj.a) put_f64(buf, x);
  put_u32(buf, static_cast<std::uint32_t>(p.bias.size()));
  for (double x : p.bias) put_f64(buf, x);
}

inline ProjectionParams deserialize_projection(ByteReader& r) {
  ProjectionParams p;
  p.seed = r.u64();
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  p.proj = Mat(rows, cols);
  for (auto& x : p.proj.a) x = r.f64();
  const std::uint32_t nb = r.u32();
  p.bias.resize(nb);
  for (auto& x : p.bias) x = r.f64();
  return p;
}

}  // namespace triprompt
