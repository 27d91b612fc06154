// Finite-difference verification of the analytic gradients, plus the branch
// disentanglement probes. Each case is a small randomized instance (grid,
// dims, labels, prompts all seeded); the analytic gradient of the batch loss
// is compared entry-by-entry against central differences through the full
// forward pipeline. Relative error uses max(|analytic|, |fd|, 1) in the
// denominator so near-zero entries are judged on absolute terms.
//
// Temperatures here are kept moderate (0.25 / 1.0): the product default of
// 0.01 saturates the sigmoid on random inputs, which would make every
// gradient vanish and the check vacuous.
#pragma once

#include <string>
#include <vector>

#include "grad.hpp"
#include "train.hpp"

namespace triprompt {

struct CheckCase {
  std::vector<ImageContext> ctxs;
  LabelMatrix labels;
  std::vector<PromptTriplet> prompts;
  Binding binding = Binding::ClassSpecific;
  std::vector<ClassToken> tokens;
  std::vector<int> active;
  TextEncoderParams enc;
  ProjectionParams proj;
  HeadConfig head;
  AslConfig asl;
  std::vector<std::size_t> batch;
};

inline CheckCase make_check_case(std::uint64_t seed, AggMode mode, bool wta) {
  Rng rng(derive_seed(seed, "checkcase"));
  CheckCase c;
  const std::size_t H = 2 + rng.below(2);
  const std::size_t W = 2 + rng.below(2);
  const std::size_t Dv = 6 + rng.below(3);
  const std::size_t Dtok = 5 + rng.below(3);
  const std::size_t Dt = 6 + rng.below(4);
  const std::size_t M = 2 + rng.below(3);
  const std::size_t N = 1 + rng.below(3);
  const std::size_t images = 2 + rng.below(2);

  c.binding = rng.below(2) == 0 ? Binding::ClassSpecific : Binding::Shared;
  c.enc = make_text_encoder(derive_seed(seed, "enc"), N, Dt, Dtok);
  c.proj = make_projection(derive_seed(seed, "proj"), Dt, Dv, 0.1);
  c.prompts = init_prompts(M, N, Dtok, c.binding, 0.3, derive_seed(seed, "init"));
  for (std::size_t m = 0; m < M; ++m) {
    c.tokens.push_back(class_token(static_cast<int>(m), derive_seed(seed, "vocab"), Dtok));
    c.active.push_back(static_cast<int>(m));
  }

  c.labels = LabelMatrix(images, M);
  for (std::size_t i = 0; i < images; ++i) {
    RegionFeatureMap fmap;
    fmap.image_id = static_cast<int>(i);
    fmap.height = H;
    fmap.width = W;
    fmap.dim = Dv;
    fmap.data.resize(H * W * Dv);
    for (auto& f : fmap.data) f = static_cast<float>(rng.normal());
    c.ctxs.push_back(make_image_context(fmap, c.proj));
    c.batch.push_back(i);
    for (std::size_t m = 0; m < M; ++m) {
      const auto u = rng.below(5);
      c.labels.set(i, m, u < 2 ? 1 : (u < 4 ? -1 : 0));
    }
  }
  if (c.labels.known_count() == 0) c.labels.set(0, 0, 1);

  c.head.mode = mode;
  c.head.wta = wta;
  c.head.wta_gamma = rng.below(2) == 0 ? 2.0 : 5.0;
  c.head.tau = rng.below(2) == 0 ? 0.25 : 1.0;
  c.head.sharpness = rng.below(2) == 0 ? 0.8 : 1.5;
  c.asl.gamma_pos = rng.below(2) == 0 ? 0.0 : 1.0;
  c.asl.gamma_neg = c.asl.gamma_pos + (rng.below(2) == 0 ? 1.0 : 2.0);
  c.asl.margin = rng.below(2) == 0 ? 0.0 : 0.05;
  return c;
}

// Loss through the forward path only (used as the FD functional).
inline double case_loss(const CheckCase& c, const std::vector<PromptTriplet>& prompts) {
  const ClassEmbeddings emb =
      build_class_embeddings(prompts, c.binding, c.tokens, c.active, c.enc, c.head.mode);
  double sum = 0.0;
  std::size_t known = 0;
  for (std::size_t img : c.batch) {
    const ClassScores scores = forward_image(c.ctxs[img], emb, c.head);
    for (std::size_t r = 0; r < c.active.size(); ++r) {
      const int y = c.labels.at(img, static_cast<std::size_t>(c.active[r]));
      if (y == 0) continue;
      sum += asl_loss(scores.prob[r], y, c.asl);
      ++known;
    }
  }
  return sum / static_cast<double>(known);
}

inline double gradcheck_rel_err(double analytic, double fd) {
  const double denom = std::max({std::abs(analytic), std::abs(fd), 1.0});
  return std::abs(analytic - fd) / denom;
}

// Max relative error between analytic and central-difference gradients over
// every token entry of every branch (including branches the mode ignores,
// whose gradients must be exactly zero).
inline double max_grad_rel_err(const CheckCase& c, double h = 1e-5) {
  const BatchGrad bg = grad_prompts(c.ctxs, c.batch, c.labels, c.prompts, c.binding, c.tokens,
                                    c.active, c.enc, c.head, c.asl);
  double worst = 0.0;
  std::vector<PromptTriplet> work = c.prompts;
  for (std::size_t u = 0; u < work.size(); ++u) {
    auto probe_seq = [&](std::vector<TokenVector>& seq, const std::vector<TokenVector>& gseq) {
      for (std::size_t j = 0; j < seq.size(); ++j) {
        for (std::size_t d = 0; d < seq[j].size(); ++d) {
          const double keep = seq[j][d];
          seq[j][d] = keep + h;
          const double lp = case_loss(c, work);
          seq[j][d] = keep - h;
          const double lm = case_loss(c, work);
          seq[j][d] = keep;
          const double fd = (lp - lm) / (2.0 * h);
          worst = std::max(worst, gradcheck_rel_err(gseq[j][d], fd));
        }
      }
    };
    probe_seq(work[u].evidential, bg.grads[u].evidential);
    probe_seq(work[u].positive, bg.grads[u].positive);
    probe_seq(work[u].negative, bg.grads[u].negative);
  }
  return worst;
}

namespace detail {

inline double max_abs_entry(const std::vector<TokenVector>& seq) {
  double mx = 0.0;
  for (const auto& t : seq)
    for (double x : t) mx = std::max(mx, std::abs(x));
  return mx;
}

// FD of one aggregated delta w.r.t. one token entry.
inline double fd_delta(const CheckCase& c, std::vector<PromptTriplet>& work, std::size_t unit,
                       int branch, std::size_t j, std::size_t d, std::size_t class_row,
                       DeltaSide side, double h) {
  auto& seq = branch == 0   ? work[unit].evidential
              : branch == 1 ? work[unit].positive
                            : work[unit].negative;
  auto delta_at = [&]() {
    const ClassEmbeddings emb =
        build_class_embeddings(work, c.binding, c.tokens, c.active, c.enc, c.head.mode);
    const ClassScores s = forward_image(c.ctxs[0], emb, c.head);
    return side == DeltaSide::Pos ? s.delta_pos[class_row] : s.delta_neg[class_row];
  };
  const double keep = seq[j][d];
  seq[j][d] = keep + h;
  const double dp = delta_at();
  seq[j][d] = keep - h;
  const double dm = delta_at();
  seq[j][d] = keep;
  return (dp - dm) / (2.0 * h);
}

}  // namespace detail

struct DisentangleProbe {
  bool cross_grads_zero = false;      // analytic cross-branch block identically zero
  bool fd_agrees = false;             // FD confirms on sampled entries
  double max_cross_abs = 0.0;
};

// Probes d(delta_neg)/d(positive tokens) — or with side flipped,
// d(delta_pos)/d(negative tokens) — on image 0, class row 0.
inline DisentangleProbe probe_cross_branch(const CheckCase& c, DeltaSide side, double h = 1e-5) {
  const std::size_t row = 0;
  const auto grads = delta_token_grads(c.ctxs[0], c.prompts, c.binding, c.tokens, c.active, c.enc,
                                       c.head, row, side);
  // the "other" branch: positive tokens for the neg delta, negative tokens
  // for the pos delta
  const int branch = side == DeltaSide::Neg ? 1 : 2;
  double mx = 0.0;
  for (const auto& g : grads)
    mx = std::max(mx, detail::max_abs_entry(branch == 1 ? g.positive : g.negative));

  DisentangleProbe out;
  out.max_cross_abs = mx;
  out.cross_grads_zero = mx == 0.0;

  // FD spot check on the first unit's first token, three entries
  std::vector<PromptTriplet> work = c.prompts;
  const auto& seq = branch == 1 ? work[0].positive : work[0].negative;
  const std::size_t dims = seq.empty() ? 0 : seq[0].size();
  double fd_mx = 0.0;
  for (std::size_t d = 0; d < std::min<std::size_t>(3, dims); ++d)
    fd_mx = std::max(fd_mx,
                     std::abs(detail::fd_delta(c, work, 0, branch, 0, d, row, side, h)));
  out.fd_agrees = out.cross_grads_zero ? fd_mx < 1e-8 : fd_mx > 1e-9;
  return out;
}

struct GradCheckCell {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckCell> cells;
  std::size_t triple_zero_ok = 0, triple_total = 0;
  std::size_t dual_nonzero = 0, dual_total = 0;
  bool disentangle_pass = false;
  bool pass = false;
  double tolerance = 1e-5;
};

inline GradCheckReport run_gradcheck(std::size_t configs_per_cell = 20, double tol = 1e-5,
                                     std::uint64_t seed = 417) {
  GradCheckReport rep;
  rep.tolerance = tol;
  struct Combo {
    AggMode mode;
    bool wta;
    const char* name;
  };
  const Combo combos[] = {
      {AggMode::PosOnly, false, "pos_only"},      {AggMode::PosOnly, true, "pos_only+wta"},
      {AggMode::Dual, false, "dual"},             {AggMode::Dual, true, "dual+wta"},
      {AggMode::Triple, false, "triple"},         {AggMode::Triple, true, "triple+wta"},
      {AggMode::NegOnly, false, "neg_only"},
  };
  bool all = true;
  std::uint64_t case_index = 0;
  for (const auto& combo : combos) {
    GradCheckCell cell;
    cell.name = combo.name;
    for (std::size_t i = 0; i < configs_per_cell; ++i) {
      const CheckCase c = make_check_case(derive_seed(seed, "cell", case_index++), combo.mode,
                                          combo.wta);
      cell.max_rel_err = std::max(cell.max_rel_err, max_grad_rel_err(c));
    }
    cell.pass = cell.max_rel_err < tol;
    all = all && cell.pass;
    rep.cells.push_back(cell);
  }

  // disentanglement: triple cross-branch blocks are exactly zero; dual keeps
  // a live path from positive tokens into the negative delta
  for (std::size_t i = 0; i < configs_per_cell; ++i) {
    const CheckCase c =
        make_check_case(derive_seed(seed, "disen-triple", i), AggMode::Triple, i % 2 == 1);
    const DisentangleProbe a = probe_cross_branch(c, DeltaSide::Neg);
    const DisentangleProbe b = probe_cross_branch(c, DeltaSide::Pos);
    rep.triple_total += 2;
    rep.triple_zero_ok += (a.cross_grads_zero && a.fd_agrees) + (b.cross_grads_zero && b.fd_agrees);
  }
  for (std::size_t i = 0; i < configs_per_cell; ++i) {
    const CheckCase c =
        make_check_case(derive_seed(seed, "disen-dual", i), AggMode::Dual, i % 2 == 1);
    const DisentangleProbe a = probe_cross_branch(c, DeltaSide::Neg);
    rep.dual_total += 1;
    rep.dual_nonzero += !a.cross_grads_zero;
  }
  rep.disentangle_pass =
      rep.triple_zero_ok == rep.triple_total &&
      rep.dual_nonzero * 10 >= rep.dual_total * 9;  // at least 90%
  rep.pass = all && rep.disentangle_pass;
  return rep;
}

inline std::string render_gradcheck(const GradCheckReport& rep) {
  std::string out;
  char line[160];
  for (const auto& c : rep.cells) {
    std::snprintf(line, sizeof(line), "gradcheck  %-14s max_rel_err=%.3e  %s\n", c.name.c_str(),
                  c.max_rel_err, c.pass ? "PASS" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof(line),
                "disentangle  triple cross-branch zero: %zu/%zu  dual live path: %zu/%zu  %s\n",
                rep.triple_zero_ok, rep.triple_total, rep.dual_nonzero, rep.dual_total,
                rep.disentangle_pass ? "PASS" : "FAIL");
  out += line;
  out += rep.pass ? "gradcheck overall: PASS\n" : "gradcheck overall: FAIL\n";
  return out;
}

}  // namespace triprompt
