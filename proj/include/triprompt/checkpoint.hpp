// Versioned binary checkpoint: magic + version header, the canonical config
// (full JSON plus its hash), completed-epoch counter, frozen encoder and
// projection parameters, and the learned prompts, with a trailing FNV-1a
// checksum over everything before it. Loads refuse wrong magic, unsupported
// versions, corrupt payloads, and truncation.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"
#include "prompt.hpp"
#include "spatial.hpp"

namespace triprompt {

constexpr char kCheckpointMagic[4] = {'T', 'P', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_json;  // canonical resolved config at save time
  std::uint64_t config_hash = 0;
  std::uint32_t epochs_done = 0;
  Binding binding = Binding::ClassSpecific;
  TextEncoderParams encoder;
  ProjectionParams projection;
  std::vector<PromptTriplet> prompts;
};

namespace detail {

inline void put_token_seq(std::string& buf, const std::vector<TokenVector>& seq) {
  put_u32(buf, static_cast<std::uint32_t>(seq.size()));
  for (const auto& t : seq) {
    put_u32(buf, static_cast<std::uint32_t>(t.size()));
    for (double x : t) put_f64(buf, x);
  }
}

inline std::vector<TokenVector> read_token_seq(ByteReader& r) {
  std::vector<TokenVector> seq(r.u32());
  for (auto& t : seq) {
    t.resize(r.u32());
    for (auto& x : t) x = r.f64();
  }
  return seq;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::string buf;
  buf.append(kCheckpointMagic, 4);
  put_u32(buf, kCheckpointVersion);
  put_u64(buf, c.config_hash);
  put_u32(buf, c.epochs_done);
  put_u32(buf, c.binding == Binding::Shared ? 1u : 0u);
  put_u32(buf, static_cast<std::uint32_t>(c.config_json.size()));
  buf += c.config_json;
  serialize_encoder(c.encoder, buf);
  serialize_projection(c.projection, buf);
  put_u32(buf, static_cast<std::uint32_t>(c.prompts.size()));
  for (const auto& t : c.prompts) {
    detail::put_token_seq(buf, t.evidential);
    detail::put_token_seq(buf, t.positive);
    detail::put_token_seq(buf, t.negative);
  }
  put_u64(buf, fnv1a64(buf));
  return buf;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_bytes(path, serialize_checkpoint(c));
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0)
    throw ValidationError("not a checkpoint file (bad magic)");
  const std::string_view body(bytes.data(), bytes.size() - 8);
  ByteReader tail(std::string_view(bytes).substr(bytes.size() - 8));
  if (tail.u64() != fnv1a64(std::string_view(body)))
    throw ValidationError("checkpoint checksum mismatch (corrupt file)");

  ByteReader r(body);
  r.bytes(4);  // magic, already verified
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint c;
  c.config_hash = r.u64();
  c.epochs_done = r.u32();
  c.binding = r.u32() == 1 ? Binding::Shared : Binding::ClassSpecific;
  const std::uint32_t cfg_len = r.u32();
  c.config_json = std::string(r.bytes(cfg_len));
  c.encoder = deserialize_encoder(r);
  c.projection = deserialize_projection(r);
  c.prompts.resize(r.u32());
  for (auto& t : c.prompts) {
    t.evidential = detail::read_token_seq(r);
    t.positive = detail::read_token_seq(r);
    t.negative = detail::read_token_seq(r);
  }
  if (r.remaining() != 0) throw ValidationError("checkpoint has trailing bytes");
  return c;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file_bytes(path));
}

}  // namespace triprompt
