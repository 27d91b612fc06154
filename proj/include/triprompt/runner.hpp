// Command implementations behind the CLI verbs. Each cmd_* returns a process
// exit code: 0 success, 1 validation error, 2 numeric/runtime failure,
// 3 acceptance-style check failure (gradcheck, compare orderings). The thin
// CLI in tools/ maps exceptions to the same codes, so tests can drive these
// functions directly.
#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "gradcheck.hpp"
#include "metrics.hpp"
#include "train.hpp"

namespace triprompt {

struct FrozenWorld {
  TextEncoderParams enc;
  ProjectionParams proj;
  std::vector<ClassToken> tokens;  // one per dataset class
};

inline FrozenWorld make_world(const RunConfig& c) {
  FrozenWorld w;
  w.enc = make_text_encoder(c.frozen_seed, c.n_tokens, c.text_dim, c.token_dim);
  w.proj = make_projection(c.frozen_seed, c.text_dim, c.data.feature_dim, c.proj_bias_scale);
  w.tokens.reserve(c.data.num_classes);
  for (std::size_t m = 0; m < c.data.num_classes; ++m)
    w.tokens.push_back(class_token(static_cast<int>(m), c.vocab_seed, c.token_dim));
  return w;
}

inline std::vector<ImageContext> build_image_contexts(const std::vector<RegionFeatureMap>& maps,
                                                      const ProjectionParams& proj, int threads) {
  std::vector<ImageContext> ctxs(maps.size());
  parallel_for(maps.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) ctxs[i] = make_image_context(maps[i], proj);
  });
  return ctxs;
}

// Probability scores for every image x class. Rows are filled in parallel
// into disjoint slots, so the matrix is identical for any thread count.
inline Mat score_matrix(const std::vector<ImageContext>& ctxs,
                        const std::vector<PromptTriplet>& prompts, Binding binding,
                        const std::vector<ClassToken>& tokens, const TextEncoderParams& enc,
                        const HeadConfig& head, int threads) {
  std::vector<int> active(tokens.size());
  for (std::size_t m = 0; m < tokens.size(); ++m) active[m] = static_cast<int>(m);
  const ClassEmbeddings emb = build_class_embeddings(prompts, binding, tokens, active, enc,
                                                     head.mode);
  Mat scores(ctxs.size(), tokens.size());
  parallel_for(ctxs.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const ClassScores s = forward_image(ctxs[i], emb, head);
      auto row = scores.row(i);
      for (std::size_t m = 0; m < tokens.size(); ++m) row[m] = s.prob[m];
    }
  });
  return scores;
}

inline void check_dataset_matches_config(const Dataset& ds, const RunConfig& c) {
  if (ds.labels.num_classes != c.data.num_classes)
    throw ValidationError("dataset class count does not match config");
  if (ds.features.empty()) throw ValidationError("dataset has no images");
  const auto& f = ds.features[0];
  if (f.dim != c.data.feature_dim || f.height != c.data.height || f.width != c.data.width)
    throw ValidationError("dataset grid/feature dims do not match config");
}

// ---- gen-data ----

struct DataPair {
  Dataset train, test;
};

// Train and test sets from one config: the test set reuses the full data spec
// with its own image count and a sample stream derived from the train stream.
inline DataPair make_datasets(const RunConfig& cfg) {
  SyntheticSpec train_spec = cfg.data;
  SyntheticSpec test_spec = cfg.data;
  test_spec.num_images = cfg.num_test_images;
  test_spec.sample_seed = derive_seed(cfg.data.sample_seed, "testset");
  validate(train_spec);
  validate(test_spec);

  DataPair p;
  p.train = generate_synthetic(train_spec);
  p.train.role = "train";
  p.test = generate_synthetic(test_spec);
  p.test.role = "test";
  return p;
}

inline int cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  const DataPair p = make_datasets(cfg);
  save_dataset(out_dir / "train", p.train);
  save_dataset(out_dir / "test", p.test);

  std::printf("wrote %s: %zu train + %zu test images, %zu classes, %zux%zu grid, dim %zu\n",
              out_dir.string().c_str(), p.train.spec.num_images, p.test.spec.num_images,
              p.train.spec.num_classes, p.train.spec.height, p.train.spec.width,
              p.train.spec.feature_dim);
  std::printf("train hash %s  test hash %s\n", to_hex(dataset_hash(p.train)).c_str(),
              to_hex(dataset_hash(p.test)).c_str());
  return 0;
}

// ---- train ----

struct TrainOutcome {
  Checkpoint checkpoint;
  std::vector<TraceRow> trace;
};

// Library-level train pipeline; cmd_train adds file I/O around it.
inline TrainOutcome run_training(const RunConfig& cfg, const Dataset& train_ds,
                                 const Checkpoint* resume, std::size_t epoch_limit) {
  check_dataset_matches_config(train_ds, cfg);
  const FrozenWorld world = make_world(cfg);

  // protocol: partial-label masking, or zero-shot label removal + seen-only
  // training (unseen classes are unknown at training time, so they take no
  // part in the forward pass or the winner-take-all coupling)
  LabelMatrix labels;
  std::vector<int> active;
  if (cfg.protocol == Protocol::Partial) {
    labels = mask_labels(train_ds.labels, cfg.keep_proportion, cfg.mask_seed);
    for (std::size_t m = 0; m < cfg.data.num_classes; ++m) active.push_back(static_cast<int>(m));
  } else {
    const SplitSpec split =
        split_zero_shot(cfg.data.num_classes, cfg.unseen_fraction, cfg.split_seed);
    labels = mask_unseen(train_ds.labels, split.unseen);
    active = split.seen;
  }

  std::vector<PromptTriplet> prompts;
  std::size_t start_epoch = 0;
  if (resume) {
    if (resume->config_hash != config_hash(cfg))
      throw ValidationError("resume checkpoint was produced by a different config");
    prompts = resume->prompts;
    start_epoch = resume->epochs_done;
  } else {
    prompts = init_prompts(cfg.data.num_classes, cfg.n_tokens, cfg.token_dim, cfg.binding,
                           cfg.init_scale, cfg.train_seed);
  }

  const std::vector<ImageContext> ctxs =
      build_image_contexts(train_ds.features, world.proj, cfg.threads);

  TrainOutcome out;
  if (cfg.mode == RunMode::Contextless) {
    // frozen random prompts: nothing to optimize
    out.checkpoint.epochs_done = 0;
    out.checkpoint.prompts = std::move(prompts);
  } else {
    TrainResult res = train(ctxs, labels, std::move(prompts), cfg.binding, world.tokens, active,
                            world.enc, cfg.train(), start_epoch,
                            std::min(epoch_limit, cfg.epochs));
    out.trace = std::move(res.trace);
    out.checkpoint.epochs_done = static_cast<std::uint32_t>(res.next_epoch);
    out.checkpoint.prompts = std::move(res.prompts);
  }
  out.checkpoint.config_json = config_to_json(cfg).dump();
  out.checkpoint.config_hash = config_hash(cfg);
  out.checkpoint.binding = cfg.binding;
  out.checkpoint.encoder = world.enc;
  out.checkpoint.projection = world.proj;
  return out;
}

inline int cmd_train(const RunConfig& cfg, const std::filesystem::path& data_root,
                     const std::filesystem::path& out_dir, const std::string& resume_path = "",
                     std::size_t epoch_limit = SIZE_MAX) {
  const Dataset train_ds = load_dataset(data_root / "train");
  Checkpoint resume;
  const bool resuming = !resume_path.empty();
  if (resuming) resume = load_checkpoint(resume_path);

  const TrainOutcome out =
      run_training(cfg, train_ds, resuming ? &resume : nullptr, epoch_limit);

  std::filesystem::create_directories(out_dir);
  save_checkpoint(out_dir / "checkpoint.bin", out.checkpoint);
  write_file_bytes(out_dir / "train_log.csv", render_trace_csv(out.trace));

  if (!out.trace.empty()) {
    const auto means = epoch_mean_losses(out.trace);
    std::size_t first = 0;
    while (first < means.size() && means[first] == 0.0 &&
           out.trace.front().epoch > first)
      ++first;  // resumed runs have no rows for earlier epochs
    std::printf("trained epochs %zu..%zu  first-epoch loss %.6f  last-epoch loss %.6f\n",
                out.trace.front().epoch, out.trace.back().epoch,
                means[out.trace.front().epoch], means.back());
  } else {
    std::printf("contextless run: prompts frozen at initialization, no training\n");
  }
  std::printf("checkpoint %s  config %s\n", (out_dir / "checkpoint.bin").string().c_str(),
              to_hex(out.checkpoint.config_hash).c_str());
  return 0;
}

// ---- eval ----

struct EvalRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path data_root;
  std::string split = "all";  // all | seen | unseen
  std::filesystem::path out_json;  // optional
};

inline MetricsReport run_eval(const Checkpoint& ckpt, const RunConfig& cfg,
                              const Dataset& test_ds, const std::string& split) {
  check_dataset_matches_config(test_ds, cfg);

  std::vector<int> classes;
  if (split == "all") {
    for (std::size_t m = 0; m < cfg.data.num_classes; ++m) classes.push_back(static_cast<int>(m));
  } else if (split == "seen" || split == "unseen") {
    if (cfg.protocol != Protocol::ZeroShot)
      throw ValidationError("split '" + split + "' requires the zero-shot protocol");
    const SplitSpec sp = split_zero_shot(cfg.data.num_classes, cfg.unseen_fraction,
                                         cfg.split_seed);
    classes = split == "seen" ? sp.seen : sp.unseen;
  } else {
    throw ValidationError("unknown split '" + split + "' (use all, seen or unseen)");
  }

  std::vector<ClassToken> tokens;
  for (std::size_t m = 0; m < cfg.data.num_classes; ++m)
    tokens.push_back(class_token(static_cast<int>(m), cfg.vocab_seed, cfg.token_dim));

  HeadConfig head = cfg.head();
  head.wta = cfg.wta_eval;

  const std::vector<ImageContext> ctxs =
      build_image_contexts(test_ds.features, ckpt.projection, cfg.threads);
  const Mat scores = score_matrix(ctxs, ckpt.prompts, ckpt.binding, tokens, ckpt.encoder, head,
                                  cfg.threads);

  MetricsReport rep = build_metrics_report(scores, test_ds.labels, classes, cfg.topk,
                                           cfg.threshold);
  rep.split = split;
  rep.config_hash = to_hex(ckpt.config_hash);
  rep.seed = cfg.train_seed;
  rep.checkpoint_epoch = ckpt.epochs_done;
  return rep;
}

inline int cmd_eval(const EvalRequest& req, const RunConfig* expect_config = nullptr) {
  const Checkpoint ckpt = load_checkpoint(req.checkpoint);
  RunConfig cfg;
  try {
    cfg = config_from_json(json::parse(ckpt.config_json));
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint embeds unreadable config: " + std::string(e.what()));
  }
  validate(cfg);
  if (expect_config && config_hash(*expect_config) != ckpt.config_hash)
    throw ValidationError("checkpoint config hash does not match the provided config");

  const Dataset test_ds = load_dataset(req.data_root / "test");
  const MetricsReport rep = run_eval(ckpt, cfg, test_ds, req.split);

  const std::string table = render_metrics_table(rep);
  const std::string js = metrics_to_json(rep).dump(2) + "\n";
  std::fputs(table.c_str(), stdout);
  if (!req.out_json.empty())
    write_file_bytes(req.out_json, js);
  else
    std::fputs(js.c_str(), stdout);
  return 0;
}

// ---- gradcheck ----

inline int cmd_gradcheck(std::size_t configs_per_cell = 20, double tol = 1e-5,
                         std::uint64_t seed = 417) {
  const GradCheckReport rep = run_gradcheck(configs_per_cell, tol, seed);
  std::fputs(render_gradcheck(rep).c_str(), stdout);
  return rep.pass ? 0 : 3;
}

// ---- compare ----

// Ablation grid over aggregation modes and WTA, every cell trained and
// evaluated on the identical dataset with the identical seed list. The
// "contextless" row stands in for hand-written prompts: class-name anchors
// with random frozen contexts and no training.
struct CompareRow {
  RunMode mode = RunMode::Triple;
  bool wta = false;
  bool trained = true;
  double map = 0.0;  // mean over seeds
  double of1 = 0.0;
};

struct CompareCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  bool pass = false;
};

struct CompareReport {
  std::vector<CompareRow> rows;
  std::vector<CompareCheck> checks;
  std::string train_hash, test_hash;
  std::vector<std::uint64_t> seeds;
  double tolerance = 0.01;
  bool pass = false;
};

inline CompareReport compare_run(const RunConfig& base, const Dataset& train_ds,
                                 const Dataset& test_ds) {
  struct Cell {
    RunMode mode;
    bool wta;
  };
  const Cell cells[] = {
      {RunMode::Contextless, false}, {RunMode::PosOnly, false}, {RunMode::PosOnly, true},
      {RunMode::Dual, false},        {RunMode::Dual, true},     {RunMode::Triple, false},
      {RunMode::Triple, true},
  };

  CompareReport rep;
  rep.seeds = base.compare_seeds;
  rep.train_hash = to_hex(dataset_hash(train_ds));
  rep.test_hash = to_hex(dataset_hash(test_ds));

  for (const auto& cell : cells) {
    CompareRow row;
    row.mode = cell.mode;
    row.wta = cell.wta;
    row.trained = cell.mode != RunMode::Contextless;
    for (const std::uint64_t seed : base.compare_seeds) {
      RunConfig cfg = base;
      cfg.mode = cell.mode;
      cfg.wta = cell.wta;
      // keep each cell's evaluation geometry consistent with its own training
      cfg.wta_eval = cell.wta && base.wta_eval;
      cfg.train_seed = seed;
      const TrainOutcome out = run_training(cfg, train_ds, nullptr, SIZE_MAX);
      const MetricsReport ev = run_eval(out.checkpoint, cfg, test_ds, "all");
      row.map += ev.map;
      row.of1 += ev.overall.f1;
    }
    const auto n = static_cast<double>(base.compare_seeds.size());
    row.map /= n;
    row.of1 /= n;
    rep.rows.push_back(row);
  }

  auto cell_map = [&](RunMode mode, bool wta) {
    for (const auto& r : rep.rows)
      if (r.mode == mode && r.wta == wta) return r.map;
    throw NumericError("compare: missing grid cell");
  };
  auto check = [&](const std::string& name, double lhs, double rhs) {
    CompareCheck c;
    c.name = name;
    c.lhs = lhs;
    c.rhs = rhs;
    c.pass = lhs >= rhs - rep.tolerance;
    rep.checks.push_back(c);
  };
  check("mAP(triple) >= mAP(dual)", cell_map(RunMode::Triple, false),
        cell_map(RunMode::Dual, false));
  check("mAP(triple+wta) >= mAP(triple)", cell_map(RunMode::Triple, true),
        cell_map(RunMode::Triple, false));
  check("mAP(dual) >= mAP(pos_only)", cell_map(RunMode::Dual, false),
        cell_map(RunMode::PosOnly, false));

  rep.pass = true;
  for (const auto& c : rep.checks) rep.pass = rep.pass && c.pass;
  return rep;
}

inline std::string render_compare(const CompareReport& rep) {
  std::string out;
  char line[200];
  out += "mode         wta  trained   mAP      O_F1    dataset(train/test)\n";
  for (const auto& r : rep.rows) {
    std::snprintf(line, sizeof(line), "%-12s %-4s %-8s %7.4f  %7.4f  %s/%s\n",
                  run_mode_name(r.mode).c_str(), r.wta ? "on" : "off", r.trained ? "yes" : "no",
                  r.map, r.of1, rep.train_hash.c_str(), rep.test_hash.c_str());
    out += line;
  }
  std::snprintf(line, sizeof(line), "seeds averaged: %zu   tolerance: %.3g\n", rep.seeds.size(),
                rep.tolerance);
  out += line;
  for (const auto& c : rep.checks) {
    std::snprintf(line, sizeof(line), "check %-36s %7.4f vs %7.4f  %s\n", c.name.c_str(), c.lhs,
                  c.rhs, c.pass ? "PASS" : "FAIL");
    out += line;
  }
  out += "note: the untrained contextless row plays the role of fixed hand-written prompts\n";
  out += rep.pass ? "compare overall: PASS\n" : "compare overall: FAIL\n";
  return out;
}

inline json compare_to_json(const CompareReport& rep) {
  json rows = json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"mode", run_mode_name(r.mode)},
                    {"wta", r.wta},
                    {"trained", r.trained},
                    {"mAP", r.map},
                    {"O_F1", r.of1},
                    {"dataset", {{"train", rep.train_hash}, {"test", rep.test_hash}}}});
  json checks = json::array();
  for (const auto& c : rep.checks)
    checks.push_back({{"name", c.name}, {"lhs", c.lhs}, {"rhs", c.rhs}, {"pass", c.pass}});
  return json{{"rows", rows},
              {"checks", checks},
              {"seeds", rep.seeds},
              {"tolerance", rep.tolerance},
              {"pass", rep.pass}};
}

inline int cmd_compare(const RunConfig& cfg, const std::filesystem::path& data_root,
                       const std::filesystem::path& out_json = {}) {
  const Dataset train_ds = load_dataset(data_root / "train");
  const Dataset test_ds = load_dataset(data_root / "test");
  const CompareReport rep = compare_run(cfg, train_ds, test_ds);
  std::fputs(render_compare(rep).c_str(), stdout);
  if (!out_json.empty()) write_file_bytes(out_json, compare_to_json(rep).dump(2) + "\n");
  return rep.pass ? 0 : 3;
}

}  // namespace triprompt
