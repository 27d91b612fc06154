#include <gtest/gtest.h>

#include <filesystem>

#include "triprompt/checkpoint.hpp"
#include "triprompt/config.hpp"

using namespace triprompt;
namespace fs = std::filesystem;

namespace {

Checkpoint sample_checkpoint() {
  RunConfig cfg;
  cfg.data.num_classes = 3;
  Checkpoint c;
  c.config_json = config_to_json(cfg).dump();
  c.config_hash = config_hash(cfg);
  c.epochs_done = 17;
  c.binding = Binding::ClassSpecific;
  c.encoder = make_text_encoder(11, 4, 8, 6);
  c.projection = make_projection(11, 8, 10, 0.1);
  c.prompts = init_prompts(3, 4, 6, Binding::ClassSpecific, 0.02, 21);
  return c;
}

}  // namespace

TEST(Checkpoint, SerializeParseRoundTripIsByteExact) {
  const Checkpoint c = sample_checkpoint();
  const std::string bytes = serialize_checkpoint(c);
  const Checkpoint back = parse_checkpoint(bytes);

  EXPECT_EQ(back.config_json, c.config_json);
  EXPECT_EQ(back.config_hash, c.config_hash);
  EXPECT_EQ(back.epochs_done, c.epochs_done);
  EXPECT_EQ(back.binding, c.binding);
  ASSERT_EQ(back.prompts.size(), c.prompts.size());
  for (std::size_t u = 0; u < c.prompts.size(); ++u) {
    EXPECT_EQ(back.prompts[u].evidential, c.prompts[u].evidential);
    EXPECT_EQ(back.prompts[u].positive, c.prompts[u].positive);
    EXPECT_EQ(back.prompts[u].negative, c.prompts[u].negative);
  }
  // the parsed checkpoint re-serializes to the same bytes
  EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, FileRoundTripMatchesInMemoryBytes) {
  const Checkpoint c = sample_checkpoint();
  const fs::path dir = fs::path(::testing::TempDir()) / "triprompt_ckpt";
  fs::create_directories(dir);
  const fs::path file = dir / "model.ckpt";
  save_checkpoint(file, c);
  EXPECT_EQ(read_file_bytes(file), serialize_checkpoint(c));
  const Checkpoint back = load_checkpoint(file);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(c));
}

TEST(Checkpoint, RejectsForeignAndDamagedFiles) {
  const Checkpoint c = sample_checkpoint();
  const std::string bytes = serialize_checkpoint(c);

  // wrong magic
  {
    std::string bad = bytes;
    bad[0] = 'X';
    try {
      parse_checkpoint(bad);
      FAIL() << "bad magic accepted";
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find("not a checkpoint file"), std::string::npos);
    }
  }
  // too short to even hold the header
  EXPECT_THROW(parse_checkpoint("TPCK"), ValidationError);
  EXPECT_THROW(parse_checkpoint(""), ValidationError);

  // one flipped payload byte breaks the trailing checksum
  {
    std::string bad = bytes;
    bad[bytes.size() / 2] = static_cast<char>(bad[bytes.size() / 2] ^ 0x01);
    try {
      parse_checkpoint(bad);
      FAIL() << "corrupt payload accepted";
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find("corrupt"), std::string::npos);
    }
  }
  // truncation breaks the checksum as well
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 1)), ValidationError);
}

TEST(Checkpoint, RejectsUnsupportedVersionsAndTrailingBytes) {
  const Checkpoint c = sample_checkpoint();
  const std::string bytes = serialize_checkpoint(c);

  // bump the version field (offset 4) and fix the checksum so only the
  // version check can fire
  {
    std::string bad = bytes.substr(0, bytes.size() - 8);
    bad[4] = 2;
    std::string fixed = bad;
    put_u64(fixed, fnv1a64(bad));
    try {
      parse_checkpoint(fixed);
      FAIL() << "future version accepted";
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
  }
  // extra payload bytes before the checksum
  {
    std::string bad = bytes.substr(0, bytes.size() - 8) + std::string(4, '\0');
    std::string fixed = bad;
    put_u64(fixed, fnv1a64(bad));
    try {
      parse_checkpoint(fixed);
      FAIL() << "trailing bytes accepted";
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find("trailing"), std::string::npos);
    }
  }
}

TEST(Checkpoint, EncoderAndProjectionSurviveTheRoundTrip) {
  const Checkpoint c = sample_checkpoint();
  const Checkpoint back = parse_checkpoint(serialize_checkpoint(c));
  EXPECT_EQ(back.encoder.mix.a, c.encoder.mix.a);
  EXPECT_EQ(back.encoder.position_weights, c.encoder.position_weights);
  EXPECT_EQ(back.projection.proj.a, c.projection.proj.a);
  EXPECT_EQ(back.projection.bias, c.projection.bias);
}
