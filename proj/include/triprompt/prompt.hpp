// Learnable prompt contexts and the frozen text-side encoder.
//
// Each class is scored against three prompt branches — evidential, positive,
// negative — that share a class-name token but carry their own learnable
// context tokens. The encoder is a frozen seeded surrogate: a position-weighted
// token sum followed by a fixed linear mix. It is linear by construction, which
// keeps gradients exact, but it is treated as an opaque frozen module
// everywhere else (training may only ever touch context tokens).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace triprompt {

using TokenVector = Vec;  // one context token, dim D_tok

enum class Binding { ClassSpecific, Shared };

// Three context-token sequences for one binding unit (one class, or all
// classes when shared). Also reused as the gradient container: grads mirror
// the token layout exactly.
struct PromptTriplet {
  std::vector<TokenVector> evidential;
  std::vector<TokenVector> positive;
  std::vector<TokenVector> negative;
};

struct ClassToken {
  int class_id = -1;
  Vec embedding;  // dim D_tok, unit norm when drawn from the vocabulary
};

// Frozen text encoder: E = mix * (sum_j w_j t_j + w_last cls).
struct TextEncoderParams {
  Vec position_weights;  // length n_tokens + 1; last entry weights the class token
  Mat mix;               // text_dim x token_dim
  std::uint64_t seed = 0;

  std::size_t n_tokens() const { return position_weights.size() - 1; }
  std::size_t token_dim() const { return mix.cols; }
  std::size_t text_dim() const { return mix.rows; }
};

// The cross-modal mixing matrix. The visual projection uses the same sampler
// with the same tag: equal seeds and matching dimensions make the two sides
// share a map, which is what stands in for pretrained vision-language
// alignment at this scale.
inline Mat cross_modal_matrix(std::uint64_t seed, std::size_t out_dim, std::size_t in_dim) {
  Rng rng(derive_seed(seed, "xmodal"));
  Mat m = gaussian_mat(rng, out_dim, in_dim, 1.0 / std::sqrt(static_cast<double>(out_dim)));
  for (std::size_t r = 0; r < m.rows; ++r) {
    double mx = 0.0;
    for (double x : m.row(r)) mx = std::max(mx, std::abs(x));
    if (mx <= 0.0) throw NumericError("sampled mixing matrix has a zero row");
  }
  return m;
}

inline TextEncoderParams make_text_encoder(std::uint64_t seed, std::size_t n_tokens,
                                           std::size_t text_dim, std::size_t token_dim) {
  if (n_tokens < 1) throw ValidationError("text encoder requires at least one context position");
  if (text_dim < 1 || token_dim < 1) throw ValidationError("text encoder dims must be positive");
  TextEncoderParams p;
  p.seed = seed;
  p.mix = cross_modal_matrix(seed, text_dim, token_dim);
  Rng rng(derive_seed(seed, "posw"));
  p.position_weights.resize(n_tokens + 1);
  for (auto& w : p.position_weights) w = rng.uniform(0.5, 1.5);
  return p;
}

// Class-name token embedding from the shared concept vocabulary.
inline ClassToken class_token(int class_id, std::uint64_t vocab_seed, std::size_t token_dim) {
  if (class_id < 0) throw ValidationError("class id must be non-negative");
  ClassToken t;
  t.class_id = class_id;
  t.embedding = concept_unit_vector(vocab_seed, static_cast<std::uint64_t>(class_id), token_dim);
  return t;
}

// Fresh learnable contexts: i.i.d. Gaussian entries scaled by init_scale.
// Shared binding yields a single triplet used for every class; class-specific
// yields one per class, each from its own keyed stream so the draw for class
// m does not depend on how many classes exist.
inline std::vector<PromptTriplet> init_prompts(std::size_t num_classes, std::size_t n_tokens,
                                               std::size_t token_dim, Binding binding,
                                               double init_scale, std::uint64_t seed) {
  if (num_classes < 1) throw ValidationError("init_prompts: need at least one class");
  if (n_tokens < 1) throw ValidationError("init_prompts: need at least one context token");
  if (token_dim < 1) throw ValidationError("init_prompts: token dim must be positive");
  if (!(init_scale > 0.0)) throw ValidationError("init_prompts: init scale must be positive");

  const std::size_t units = binding == Binding::Shared ? 1 : num_classes;
  std::vector<PromptTriplet> out(units);
  for (std::size_t u = 0; u < units; ++u) {
    Rng rng(derive_seed(seed, "prompt", u));
    auto draw = [&] {
      std::vector<TokenVector> seq(n_tokens);
      for (auto& t : seq) t = gaussian_vec(rng, token_dim, init_scale);
      return seq;
    };
    out[u].evidential = draw();
    out[u].positive = draw();
    out[u].negative = draw();
  }
  return out;
}

inline PromptTriplet zero_like(const PromptTriplet& t) {
  PromptTriplet z;
  auto zero_seq = [](const std::vector<TokenVector>& seq) {
    std::vector<TokenVector> out(seq.size());
    for (std::size_t i = 0; i < seq.size(); ++i) out[i].assign(seq[i].size(), 0.0);
    return out;
  };
  z.evidential = zero_seq(t.evidential);
  z.positive = zero_seq(t.positive);
  z.negative = zero_seq(t.negative);
  return z;
}

inline std::vector<PromptTriplet> zero_like(const std::vector<PromptTriplet>& ts) {
  std::vector<PromptTriplet> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(zero_like(t));
  return out;
}

// E = mix * (sum_j w_j t_j + w_last * cls). Shapes are checked, the encoder
// itself is never modified.
inline Vec encode_prompt(const std::vector<TokenVector>& tokens, const ClassToken& cls,
                         const TextEncoderParams& enc) {
  if (tokens.size() != enc.n_tokens())
    throw ValidationError("encode_prompt: token count does not match encoder positions");
  if (cls.embedding.size() != enc.token_dim())
    throw ValidationError("encode_prompt: class token dim mismatch");
  Vec u(enc.token_dim(), 0.0);
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (tokens[j].size() != enc.token_dim())
      throw ValidationError("encode_prompt: context token dim mismatch");
    const double w = enc.position_weights[j];
    for (std::size_t d = 0; d < u.size(); ++d) u[d] += w * tokens[j][d];
  }
  const double wc = enc.position_weights.back();
  for (std::size_t d = 0; d < u.size(); ++d) u[d] += wc * cls.embedding[d];
  Vec e(enc.text_dim());
  matvec(enc.mix, u, e);
  return e;
}

// Pulls an embedding-space gradient g_E back onto the context tokens:
// d E / d t_j = w_j * mix, so g_{t_j} = w_j * mix^T g_E. The shared
// mix^T g_E is computed once. Accumulates into `grads`.
inline void accumulate_token_grads(const TextEncoderParams& enc, std::span<const double> g_e,
                                   std::vector<TokenVector>& grads) {
  if (grads.size() != enc.n_tokens())
    throw ValidationError("accumulate_token_grads: token count mismatch");
  Vec back(enc.token_dim());
  matvec_t(enc.mix, g_e, back);
  for (std::size_t j = 0; j < grads.size(); ++j) {
    const double w = enc.position_weights[j];
    for (std::size_t d = 0; d < back.size(); ++d) grads[j][d] += w * back[d];
  }
}

// Byte-stable serialization of the frozen encoder, used by the checkpoint
// format and by tests that prove training never touches frozen state.
inline void serialize_encoder(const TextEncoderParams& p, std::string& buf) {
  put_u64(buf, p.seed);
  put_u32(buf, static_cast<std::uint32_t>(p.position_weights.size()));
  for (double w : p.position_weights) put_f64(buf, w);
  put_u32(buf, static_cast<std::uint32_t>(p.mix.rows));
  put_u32(buf, static_cast<std::uint32_t>(p.mix.cols));
  for (double x : p.mix.a) put_f64(buf, x);
}

inline TextEncoderParams deserialize_encoder(ByteReader& r) {
  TextEncoderParams p;
  p.seed = r.u64();
  const std::uint32_t nw = r.u32();
  if (nw < 2) throw ValidationError("encoder payload: too few position weights");
  p.position_weights.resize(nw);
  for (auto& w : p.position_weights) w = r.f64();
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  p.mix = Mat(rows, cols);
  for (auto& x : p.mix.a) x = r.f64();
  return p;
}

}  // namespace triprompt
