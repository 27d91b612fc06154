// Run configuration: one JSON document covering data generation, the frozen
// encoders, the scoring head, training, protocol and evaluation. Parsing is
// strict — unknown keys anywhere are rejected — and validation runs before
// any compute. The config hash is FNV-1a over the canonical resolved dump, so
// two configs that resolve identically hash identically.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "data.hpp"
#include "loss.hpp"
#include "spatial.hpp"
#include "train.hpp"

namespace triprompt {

enum class Protocol { Partial, ZeroShot };

// "contextless" is a compare-grid mode: triple-head forward on freshly
// initialized, untrained prompts.
enum class RunMode { Triple, Dual, PosOnly, NegOnly, Contextless };

inline AggMode agg_mode(RunMode m) {
  switch (m) {
    case RunMode::Dual: return AggMode::Dual;
    case RunMode::PosOnly: return AggMode::PosOnly;
    case RunMode::NegOnly: return AggMode::NegOnly;
    case RunMode::Triple:
    case RunMode::Contextless: return AggMode::Triple;
  }
  throw ValidationError("unreachable mode");
}

struct RunConfig {
  // data
  SyntheticSpec data;
  std::size_t num_test_images = 200;

  // frozen encoders
  std::size_t n_tokens = 12;
  std::size_t token_dim = 16;
  std::size_t text_dim = 16;
  std::uint64_t frozen_seed = 11;  // text mix + projection
  std::uint64_t vocab_seed = 7;    // class-name tokens (defaults tied to prototype_seed)
  double init_scale = 0.02;
  double proj_bias_scale = 0.1;
  Binding binding = Binding::ClassSpecific;

  // head
  RunMode mode = RunMode::Triple;
  bool wta = true;        // during training
  bool wta_eval = false;  // during evaluation
  double wta_gamma = 5.0;
  double tau = 0.01;
  double sharpness = 1.0;

  // train
  double lr0 = 0.002;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t train_seed = 1;
  std::string lr_schedule = "per_step";  // or "per_epoch"
  AslConfig asl;

  // protocol
  Protocol protocol = Protocol::Partial;
  double keep_proportion = 0.5;
  std::uint64_t mask_seed = 5;
  double unseen_fraction = 0.25;
  std::uint64_t split_seed = 3;

  // eval
  std::vector<std::size_t> topk = {3};
  double threshold = 0.5;

  // compare
  std::vector<std::uint64_t> compare_seeds = {1, 2, 3, 4, 5};

  int threads = 1;

  HeadConfig head() const {
    HeadConfig h;
    h.mode = agg_mode(mode);
    h.wta = wta;
    h.wta_gamma = wta_gamma;
    h.tau = tau;
    h.sharpness = sharpness;
    return h;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.lr0 = lr0;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.seed = train_seed;
    t.per_epoch_lr = lr_schedule == "per_epoch";
    t.asl = asl;
    t.head = head();
    t.head.wta = wta;
    t.threads = threads;
    return t;
  }
};

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  if (!j.is_object()) throw ValidationError("config: " + where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) {
        ok = true;
        break;
      }
    if (!ok) throw ValidationError("config: unknown key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: bad value type for '") + key + "'");
  }
}

}  // namespace detail

inline RunMode parse_run_mode(const std::string& s) {
  if (s == "triple") return RunMode::Triple;
  if (s == "dual") return RunMode::Dual;
  if (s == "pos_only") return RunMode::PosOnly;
  if (s == "neg_only") return RunMode::NegOnly;
  if (s == "contextless") return RunMode::Contextless;
  throw ValidationError("config: unknown mode '" + s + "'");
}

inline std::string run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::Triple: return "triple";
    case RunMode::Dual: return "dual";
    case RunMode::PosOnly: return "pos_only";
    case RunMode::NegOnly: return "neg_only";
    case RunMode::Contextless: return "contextless";
  }
  return "?";
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  detail::reject_unknown(
      j, {"data", "encoder", "head", "train", "protocol", "eval", "compare", "threads"}, "");

  if (j.contains("data")) {
    const json& d = j.at("data");
    detail::reject_unknown(d,
                           {"num_images", "num_test_images", "num_classes", "height", "width",
                            "feature_dim", "prototype_seed", "sample_seed", "noise_sigma",
                            "min_planted", "max_planted", "signal_magnitude", "confusion_pairs"},
                           "data.");
    detail::read(d, "num_images", c.data.num_images);
    detail::read(d, "num_test_images", c.num_test_images);
    detail::read(d, "num_classes", c.data.num_classes);
    detail::read(d, "height", c.data.height);
    detail::read(d, "width", c.data.width);
    detail::read(d, "feature_dim", c.data.feature_dim);
    detail::read(d, "prototype_seed", c.data.prototype_seed);
    detail::read(d, "sample_seed", c.data.sample_seed);
    detail::read(d, "noise_sigma", c.data.noise_sigma);
    detail::read(d, "min_planted", c.data.min_planted);
    detail::read(d, "max_planted", c.data.max_planted);
    detail::read(d, "signal_magnitude", c.data.signal_magnitude);
    if (d.contains("confusion_pairs")) {
      c.data.confusion_pairs.clear();
      if (!d.at("confusion_pairs").is_array())
        throw ValidationError("config: data.confusion_pairs must be an array");
      for (const auto& p : d.at("confusion_pairs")) {
        if (!p.is_array() || p.size() != 3)
          throw ValidationError("config: confusion pair must be [class_a, class_b, angle]");
        c.data.confusion_pairs.push_back({p[0].get<int>(), p[1].get<int>(), p[2].get<double>()});
      }
    }
  }

  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    detail::reject_unknown(e,
                           {"n_tokens", "token_dim", "text_dim", "frozen_seed", "vocab_seed",
                            "init_scale", "proj_bias_scale", "binding"},
                           "encoder.");
    detail::read(e, "n_tokens", c.n_tokens);
    detail::read(e, "token_dim", c.token_dim);
    detail::read(e, "text_dim", c.text_dim);
    detail::read(e, "frozen_seed", c.frozen_seed);
    detail::read(e, "vocab_seed", c.vocab_seed);
    detail::read(e, "init_scale", c.init_scale);
    detail::read(e, "proj_bias_scale", c.proj_bias_scale);
    if (e.contains("binding")) {
      const auto b = e.at("binding").get<std::string>();
      if (b == "class_specific")
        c.binding = Binding::ClassSpecific;
      else if (b == "shared")
        c.binding = Binding::Shared;
      else
        throw ValidationError("config: encoder.binding must be class_specific or shared");
    }
  }

  if (j.contains("head")) {
    const json& h = j.at("head");
    detail::reject_unknown(h, {"mode", "wta", "wta_eval", "gamma", "tau", "sharpness"}, "head.");
    if (h.contains("mode")) c.mode = parse_run_mode(h.at("mode").get<std::string>());
    detail::read(h, "wta", c.wta);
    detail::read(h, "wta_eval", c.wta_eval);
    detail::read(h, "gamma", c.wta_gamma);
    detail::read(h, "tau", c.tau);
    detail::read(h, "sharpness", c.sharpness);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::reject_unknown(t, {"lr0", "epochs", "batch_size", "seed", "lr_schedule", "asl"},
                           "train.");
    detail::read(t, "lr0", c.lr0);
    detail::read(t, "epochs", c.epochs);
    detail::read(t, "batch_size", c.batch_size);
    detail::read(t, "seed", c.train_seed);
    detail::read(t, "lr_schedule", c.lr_schedule);
    if (t.contains("asl")) {
      const json& a = t.at("asl");
      detail::reject_unknown(a, {"gamma_pos", "gamma_neg", "margin_c"}, "train.asl.");
      detail::read(a, "gamma_pos", c.asl.gamma_pos);
      detail::read(a, "gamma_neg", c.asl.gamma_neg);
      detail::read(a, "margin_c", c.asl.margin);
    }
  }

  if (j.contains("protocol")) {
    const json& p = j.at("protocol");
    detail::reject_unknown(
        p, {"kind", "keep_proportion", "mask_seed", "unseen_fraction", "split_seed"}, "protocol.");
    if (p.contains("kind")) {
      const auto k = p.at("kind").get<std::string>();
      if (k == "partial")
        c.protocol = Protocol::Partial;
      else if (k == "zero_shot")
        c.protocol = Protocol::ZeroShot;
      else
        throw ValidationError("config: protocol.kind must be partial or zero_shot");
    }
    detail::read(p, "keep_proportion", c.keep_proportion);
    detail::read(p, "mask_seed", c.mask_seed);
    detail::read(p, "unseen_fraction", c.unseen_fraction);
    detail::read(p, "split_seed", c.split_seed);
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    detail::reject_unknown(e, {"topk", "threshold"}, "eval.");
    if (e.contains("topk")) {
      c.topk.clear();
      for (const auto& k : e.at("topk")) c.topk.push_back(k.get<std::size_t>());
    }
    detail::read(e, "threshold", c.threshold);
  }

  if (j.contains("compare")) {
    const json& cm = j.at("compare");
    detail::reject_unknown(cm, {"seeds"}, "compare.");
    if (cm.contains("seeds")) {
      c.compare_seeds.clear();
      for (const auto& s : cm.at("seeds")) c.compare_seeds.push_back(s.get<std::uint64_t>());
    }
  }

  detail::read(j, "threads", c.threads);
  return c;
}

inline json config_to_json(const RunConfig& c) {
  json pairs = json::array();
  for (const auto& p : c.data.confusion_pairs) pairs.push_back({p.a, p.b, p.angle});
  json topk = json::array();
  for (auto k : c.topk) topk.push_back(k);
  json seeds = json::array();
  for (auto s : c.compare_seeds) seeds.push_back(s);
  return json{
      {"data",
       {{"num_images", c.data.num_images},
        {"num_test_images", c.num_test_images},
        {"num_classes", c.data.num_classes},
        {"height", c.data.height},
        {"width", c.data.width},
        {"feature_dim", c.data.feature_dim},
        {"prototype_seed", c.data.prototype_seed},
        {"sample_seed", c.data.sample_seed},
        {"noise_sigma", c.data.noise_sigma},
        {"min_planted", c.data.min_planted},
        {"max_planted", c.data.max_planted},
        {"signal_magnitude", c.data.signal_magnitude},
        {"confusion_pairs", pairs}}},
      {"encoder",
       {{"n_tokens", c.n_tokens},
        {"token_dim", c.token_dim},
        {"text_dim", c.text_dim},
        {"frozen_seed", c.frozen_seed},
        {"vocab_seed", c.vocab_seed},
        {"init_scale", c.init_scale},
        {"proj_bias_scale", c.proj_bias_scale},
        {"binding", c.binding == Binding::Shared ? "shared" : "class_specific"}}},
      {"head",
       {{"mode", run_mode_name(c.mode)},
        {"wta", c.wta},
        {"wta_eval", c.wta_eval},
        {"gamma", c.wta_gamma},
        {"tau", c.tau},
        {"sharpness", c.sharpness}}},
      {"train",
       {{"lr0", c.lr0},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"seed", c.train_seed},
        {"lr_schedule", c.lr_schedule},
        {"asl",
         {{"gamma_pos", c.asl.gamma_pos},
          {"gamma_neg", c.asl.gamma_neg},
          {"margin_c", c.asl.margin}}}}},
      {"protocol",
       {{"kind", c.protocol == Protocol::Partial ? "partial" : "zero_shot"},
        {"keep_proportion", c.keep_proportion},
        {"mask_seed", c.mask_seed},
        {"unseen_fraction", c.unseen_fraction},
        {"split_seed", c.split_seed}}},
      {"eval", {{"topk", topk}, {"threshold", c.threshold}}},
      {"compare", {{"seeds", seeds}}},
      {"threads", c.threads}};
}

inline void validate(const RunConfig& c) {
  validate(c.data);
  if (c.num_test_images < 1) throw ValidationError("config: need at least one test image");
  if (c.n_tokens < 1) throw ValidationError("config: need at least one context token");
  if (c.token_dim < 1 || c.text_dim < 1) throw ValidationError("config: dims must be positive");
  if (!(c.init_scale > 0.0)) throw ValidationError("config: init scale must be positive");
  if (c.proj_bias_scale < 0.0) throw ValidationError("config: bias scale must be non-negative");
  if (c.lr_schedule != "per_step" && c.lr_schedule != "per_epoch")
    throw ValidationError("config: lr_schedule must be per_step or per_epoch");
  if (c.threads < 1) throw ValidationError("config: threads must be >= 1");
  if (c.threshold <= 0.0 || c.threshold >= 1.0)
    throw ValidationError("config: threshold must be inside (0, 1)");
  if (c.topk.empty()) throw ValidationError("config: eval.topk must not be empty");
  for (auto k : c.topk)
    if (k < 1 || k > c.data.num_classes)
      throw ValidationError("config: top-k exceeds the number of classes");
  if (c.compare_seeds.empty()) throw ValidationError("config: compare.seeds must not be empty");
  if (c.protocol == Protocol::Partial) {
    if (!(c.keep_proportion > 0.0) || c.keep_proportion > 1.0)
      throw ValidationError("config: keep proportion must be in (0, 1]");
  } else {
    if (!(c.unseen_fraction > 0.0) || !(c.unseen_fraction < 1.0))
      throw ValidationError("config: unseen fraction must be in (0, 1)");
    if (c.binding != Binding::Shared)
      throw ValidationError("config: zero-shot protocol requires shared prompt binding");
  }
  validate(c.asl);
  // head + train invariants via the derived configs
  TrainConfig t = c.train();
  validate(t);
}

// FNV-1a over the canonical resolved dump: insertion order does not matter
// because keys are serialized sorted.
inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(config_to_json(c).dump()); }

// Applies one `--set path.to.key=value` override onto raw JSON. Values parse
// as JSON when possible (numbers, bools, arrays), otherwise as strings.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override must look like section.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // plain string
  }

  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dott = path.find('.', start);
    const std::string key = path.substr(start, dott == std::string::npos ? dott : dott - start);
    if (key.empty()) throw ValidationError("override has an empty path segment: " + assignment);
    if (dott == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dott + 1;
  }
}

inline RunConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(read_file_bytes(path));
  } catch (const json::exception& e) {
    throw ValidationError("config parse error: " + std::string(e.what()));
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = config_from_json(j);
  validate(c);
  return c;
}

}  // namespace triprompt
