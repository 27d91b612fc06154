#include <gtest/gtest.h>

#include <filesystem>

#include "triprompt/config.hpp"

using namespace triprompt;
namespace fs = std::filesystem;

TEST(Config, DefaultsValidateAndRoundTripThroughJson) {
  const RunConfig c;
  EXPECT_NO_THROW(validate(c));

  const json j = config_to_json(c);
  const RunConfig back = config_from_json(j);
  EXPECT_EQ(config_to_json(back).dump(), j.dump());
  EXPECT_EQ(config_hash(back), config_hash(c));

  // an empty document resolves to the defaults
  const RunConfig empty = config_from_json(json::object());
  EXPECT_EQ(config_to_json(empty).dump(), j.dump());
}

TEST(Config, ParsesEverySection) {
  const json j = {
      {"data",
       {{"num_images", 40},
        {"num_test_images", 20},
        {"num_classes", 6},
        {"noise_sigma", 0.2},
        {"confusion_pairs", json::array({json::array({0, 1, 0.35})})}}},
      {"encoder", {{"n_tokens", 4}, {"binding", "shared"}}},
      {"head", {{"mode", "dual"}, {"wta", false}, {"wta_eval", true}, {"gamma", 3.0}}},
      {"train",
       {{"lr0", 0.01},
        {"epochs", 7},
        {"lr_schedule", "per_epoch"},
        {"asl", {{"gamma_pos", 0.5}, {"gamma_neg", 2.5}, {"margin_c", 0.02}}}}},
      {"protocol", {{"kind", "zero_shot"}, {"unseen_fraction", 0.3}, {"split_seed", 11}}},
      {"eval", {{"topk", json::array({1, 2})}, {"threshold", 0.4}}},
      {"compare", {{"seeds", json::array({8, 9})}}},
      {"threads", 2}};
  const RunConfig c = config_from_json(j);
  EXPECT_EQ(c.data.num_images, 40u);
  EXPECT_EQ(c.num_test_images, 20u);
  EXPECT_EQ(c.data.num_classes, 6u);
  EXPECT_DOUBLE_EQ(c.data.noise_sigma, 0.2);
  ASSERT_EQ(c.data.confusion_pairs.size(), 1u);
  EXPECT_EQ(c.data.confusion_pairs[0].b, 1);
  EXPECT_EQ(c.n_tokens, 4u);
  EXPECT_EQ(c.binding, Binding::Shared);
  EXPECT_EQ(c.mode, RunMode::Dual);
  EXPECT_FALSE(c.wta);
  EXPECT_TRUE(c.wta_eval);
  EXPECT_DOUBLE_EQ(c.wta_gamma, 3.0);
  EXPECT_DOUBLE_EQ(c.lr0, 0.01);
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(c.lr_schedule, "per_epoch");
  EXPECT_DOUBLE_EQ(c.asl.gamma_neg, 2.5);
  EXPECT_EQ(c.protocol, Protocol::ZeroShot);
  EXPECT_DOUBLE_EQ(c.unseen_fraction, 0.3);
  EXPECT_EQ(c.split_seed, 11u);
  EXPECT_EQ(c.topk, (std::vector<std::size_t>{1, 2}));
  EXPECT_DOUBLE_EQ(c.threshold, 0.4);
  EXPECT_EQ(c.compare_seeds, (std::vector<std::uint64_t>{8, 9}));
  EXPECT_EQ(c.threads, 2);

  // derived configs inherit the parsed fields
  EXPECT_EQ(c.head().mode, AggMode::Dual);
  EXPECT_FALSE(c.head().wta);
  EXPECT_TRUE(c.train().per_epoch_lr);
  EXPECT_EQ(c.train().epochs, 7u);
}

TEST(Config, RejectsUnknownKeysInEverySection) {
  auto bad = [](const json& j) {
    try {
      config_from_json(j);
      FAIL() << "expected a validation error for " << j.dump();
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos);
    }
  };
  bad({{"bogus", 1}});
  bad({{"data", {{"images", 5}}}});
  bad({{"encoder", {{"seed", 5}}}});
  bad({{"head", {{"temperature", 0.1}}}});
  bad({{"train", {{"momentum", 0.9}}}});
  bad({{"train", {{"asl", {{"gamma", 1.0}}}}}});
  bad({{"protocol", {{"fraction", 0.5}}}});
  bad({{"eval", {{"top_k", json::array({3})}}}});
  bad({{"compare", {{"seed", 1}}}});
}

TEST(Config, RejectsBadValueTypesAndEnumStrings) {
  EXPECT_THROW(config_from_json({{"data", {{"num_images", "many"}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"head", {{"mode", "septuple"}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"encoder", {{"binding", "fused"}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"protocol", {{"kind", "full"}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"data", {{"confusion_pairs", 3}}}}), ValidationError);
  EXPECT_THROW(config_from_json({{"data", {{"confusion_pairs", json::array({json::array({0, 1})})}}}}),
               ValidationError);
}

TEST(Config, ValidateCatchesCrossFieldViolations) {
  auto expect_bad = [](RunConfig c) { EXPECT_THROW(validate(c), ValidationError); };
  {
    RunConfig c;
    c.protocol = Protocol::ZeroShot;  // requires shared binding
    expect_bad(c);
  }
  {
    RunConfig c;
    c.protocol = Protocol::ZeroShot;
    c.binding = Binding::Shared;
    EXPECT_NO_THROW(validate(c));
    c.unseen_fraction = 1.0;
    expect_bad(c);
  }
  {
    RunConfig c;
    c.keep_proportion = 0.0;
    expect_bad(c);
  }
  {
    RunConfig c;
    c.threshold = 1.0;
    expect_bad(c);
  }
  {
    RunConfig c;
    c.topk = {};
    expect_bad(c);
  }
  {
    RunConfig c;
    c.topk = {c.data.num_classes + 1};
    expect_bad(c);
  }
  {
    RunConfig c;
    c.lr_schedule = "sometimes";
    expect_bad(c);
  }
  {
    RunConfig c;
    c.threads = 0;
    expect_bad(c);
  }
  {
    RunConfig c;
    c.init_scale = 0.0;
    expect_bad(c);
  }
  {
    RunConfig c;
    c.compare_seeds = {};
    expect_bad(c);
  }
  {
    RunConfig c;
    c.num_test_images = 0;
    expect_bad(c);
  }
  {
    RunConfig c;
    c.asl.gamma_neg = -1.0;
    expect_bad(c);
  }
  {
    RunConfig c;
    c.lr0 = 0.0;  // surfaces through the derived train config
    expect_bad(c);
  }
}

TEST(Config, HashTracksEveryResolvedField) {
  const RunConfig base;
  RunConfig tweaked = base;
  tweaked.tau = 0.05;
  EXPECT_NE(config_hash(base), config_hash(tweaked));
  EXPECT_EQ(config_hash(base), fnv1a64(config_to_json(base).dump()));
}

TEST(Overrides, ParseJsonValuesWithStringFallback) {
  json j = json::object();
  apply_override(j, "head.tau=0.25");
  apply_override(j, "head.wta=false");
  apply_override(j, "encoder.binding=shared");
  apply_override(j, "eval.topk=[1,2]");
  apply_override(j, "data.confusion_pairs=[[0,1,0.35]]");
  apply_override(j, "train.asl.margin_c=0.02");

  EXPECT_TRUE(j["head"]["tau"].is_number());
  EXPECT_DOUBLE_EQ(j["head"]["tau"].get<double>(), 0.25);
  EXPECT_EQ(j["head"]["wta"], json(false));
  EXPECT_EQ(j["encoder"]["binding"], json("shared"));
  EXPECT_EQ(j["eval"]["topk"], json::array({1, 2}));
  EXPECT_DOUBLE_EQ(j["data"]["confusion_pairs"][0][2].get<double>(), 0.35);
  EXPECT_DOUBLE_EQ(j["train"]["asl"]["margin_c"].get<double>(), 0.02);

  // the overridden document parses to the matching config
  const RunConfig c = config_from_json(j);
  EXPECT_DOUBLE_EQ(c.tau, 0.25);
  EXPECT_FALSE(c.wta);
  EXPECT_EQ(c.binding, Binding::Shared);
}

TEST(Overrides, RejectMalformedAssignments) {
  json j = json::object();
  EXPECT_THROW(apply_override(j, "noequals"), ValidationError);
  EXPECT_THROW(apply_override(j, "=5"), ValidationError);
  EXPECT_THROW(apply_override(j, "a..b=1"), ValidationError);
  EXPECT_THROW(apply_override(j, "a.=1"), ValidationError);
}

TEST(Config, LoadAppliesOverridesBeforeValidation) {
  const fs::path dir = fs::path(::testing::TempDir()) / "triprompt_config";
  fs::create_directories(dir);
  const fs::path file = dir / "run.json";
  write_file_bytes(file, R"({"head": {"tau": 0.5}, "train": {"epochs": 5}})");

  const RunConfig c = load_config(file, {"train.epochs=3", "head.mode=dual"});
  EXPECT_DOUBLE_EQ(c.tau, 0.5);
  EXPECT_EQ(c.epochs, 3u);
  EXPECT_EQ(c.mode, RunMode::Dual);

  // an override can break validation even when the file is fine
  EXPECT_THROW(load_config(file, {"eval.threshold=2.0"}), ValidationError);

  const fs::path broken = dir / "broken.json";
  write_file_bytes(broken, "{nope");
  EXPECT_THROW(load_config(broken, {}), ValidationError);
  EXPECT_THROW(load_config(dir / "absent.json", {}), ValidationError);
}
