// Synthetic data protocol: planted-prototype feature grids, partial-label
// masking, zero-shot class splits, and the on-disk dataset format.
//
// Generation model: each class m owns a unit prototype direction u_m from the
// shared concept vocabulary (see rng.hpp). An image plants k distinct classes
// at k distinct grid cells — cell feature = signal * u_m + sigma * noise —
// and every other cell is pure noise. Confusion pairs rotate one prototype to
// sit at a fixed angle from its partner, creating controlled class overlap.
//
// Directory layout: manifest.json (dims, seeds, provenance spec, checksums),
// features.bin (raw little-endian float32, image-major, region-major,
// vector-contiguous), labels.csv (one row per image: image_id, then one
// {-1,0,1} entry per class).
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "rng.hpp"
#include "spatial.hpp"

namespace triprompt {

using nlohmann::json;

// Full label matrix, entries in {+1, -1, 0}; 0 marks an unknown pair.
struct LabelMatrix {
  std::size_t num_images = 0;
  std::size_t num_classes = 0;
  std::vector<std::int8_t> v;

  LabelMatrix() = default;
  LabelMatrix(std::size_t ni, std::size_t nc) : num_images(ni), num_classes(nc), v(ni * nc, 0) {}

  std::int8_t at(std::size_t i, std::size_t m) const { return v[i * num_classes + m]; }
  void set(std::size_t i, std::size_t m, std::int8_t val) { v[i * num_classes + m] = val; }

  std::size_t known_count() const {
    std::size_t n = 0;
    for (auto x : v) n += x != 0;
    return n;
  }
};

struct ConfusionPair {
  int a = 0;
  int b = 0;
  double angle = 0.0;  // radians between the two prototypes after rotation
};

struct SyntheticSpec {
  std::size_t num_images = 400;
  std::size_t num_classes = 10;
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t feature_dim = 16;
  std::uint64_t prototype_seed = 7;
  std::uint64_t sample_seed = 99;
  double noise_sigma = 0.1;
  std::size_t min_planted = 1;
  std::size_t max_planted = 3;
  double signal_magnitude = 1.0;
  std::vector<ConfusionPair> confusion_pairs;

  std::size_t regions() const { return height * width; }
};

inline void validate(const SyntheticSpec& s) {
  if (s.num_images < 1) throw ValidationError("dataset spec: need at least one image");
  if (s.num_classes < 1) throw ValidationError("dataset spec: need at least one class");
  if (s.height < 1 || s.width < 1) throw ValidationError("dataset spec: grid dims must be positive");
  if (s.feature_dim < 1) throw ValidationError("dataset spec: feature dim must be positive");
  if (s.noise_sigma < 0.0) throw ValidationError("dataset spec: noise sigma must be non-negative");
  if (!(s.signal_magnitude > 0.0))
    throw ValidationError("dataset spec: signal magnitude must be positive");
  if (s.min_planted > s.max_planted)
    throw ValidationError("dataset spec: min planted exceeds max planted");
  if (s.max_planted > s.num_classes)
    throw ValidationError("dataset spec: cannot plant more classes than exist");
  if (s.max_planted > s.regions())
    throw ValidationError("dataset spec: cannot plant more classes than grid cells");
  std::vector<bool> used(s.num_classes, false);
  for (const auto& p : s.confusion_pairs) {
    if (p.a < 0 || p.b < 0 || static_cast<std::size_t>(p.a) >= s.num_classes ||
        static_cast<std::size_t>(p.b) >= s.num_classes)
      throw ValidationError("dataset spec: confusion pair class out of range");
    if (p.a == p.b) throw ValidationError("dataset spec: confusion pair needs distinct classes");
    if (!(p.angle > 0.0) || p.angle > std::numbers::pi / 2.0)
      throw ValidationError("dataset spec: confusion angle must be in (0, pi/2]");
    if (used[static_cast<std::size_t>(p.a)] || used[static_cast<std::size_t>(p.b)])
      throw ValidationError("dataset spec: a class may appear in at most one confusion pair");
    used[static_cast<std::size_t>(p.a)] = used[static_cast<std::size_t>(p.b)] = true;
  }
}

struct Dataset {
  SyntheticSpec spec;
  std::string role = "train";
  std::vector<RegionFeatureMap> features;
  LabelMatrix labels;
};

// Unit prototypes for every class, confusion rotations applied.
inline std::vector<Vec> class_prototypes(const SyntheticSpec& s) {
  std::vector<Vec> protos(s.num_classes);
  for (std::size_t m = 0; m < s.num_classes; ++m)
    protos[m] = concept_unit_vector(s.prototype_seed, m, s.feature_dim);
  for (const auto& p : s.confusion_pairs) {
    const Vec& ua = protos[static_cast<std::size_t>(p.a)];
    Vec& ub = protos[static_cast<std::size_t>(p.b)];
    // orthogonalize ub against ua, then place ub exactly `angle` away
    const double d = dot(ua, ub);
    Vec w(ub.size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = ub[k] - d * ua[k];
    const double wn = norm2(w);
    if (wn < 1e-9) throw NumericError("confusion pair prototypes are collinear");
    const double ca = std::cos(p.angle), sa = std::sin(p.angle);
    for (std::size_t k = 0; k < ub.size(); ++k) ub[k] = ca * ua[k] + sa * w[k] / wn;
  }
  return protos;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const std::vector<Vec> protos = class_prototypes(spec);
  const std::size_t R = spec.regions();
  const std::size_t D = spec.feature_dim;

  Dataset ds;
  ds.spec = spec;
  ds.features.resize(spec.num_images);
  ds.labels = LabelMatrix(spec.num_images, spec.num_classes);

  std::vector<std::size_t> class_order(spec.num_classes), region_order(R);
  for (std::size_t i = 0; i < spec.num_images; ++i) {
    Rng rng(derive_seed(spec.sample_seed, "image", i));
    const std::size_t span = spec.max_planted - spec.min_planted + 1;
    const std::size_t k = spec.min_planted + static_cast<std::size_t>(rng.below(span));

    for (std::size_t m = 0; m < spec.num_classes; ++m) class_order[m] = m;
    rng.shuffle(class_order);
    for (std::size_t r = 0; r < R; ++r) region_order[r] = r;
    rng.shuffle(region_order);

    // planted class per region, or num_classes for noise-only cells
    std::vector<std::size_t> planted_class(R, spec.num_classes);
    for (std::size_t j = 0; j < k; ++j) planted_class[region_order[j]] = class_order[j];

    RegionFeatureMap& fmap = ds.features[i];
    fmap.image_id = static_cast<int>(i);
    fmap.height = spec.height;
    fmap.width = spec.width;
    fmap.dim = D;
    fmap.data.resize(R * D);
    // noise is drawn for every cell in grid order so the stream layout does
    // not depend on which cells were planted
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t m = planted_class[r];
      for (std::size_t d = 0; d < D; ++d) {
        double x = spec.noise_sigma * rng.normal();
        if (m < spec.num_classes) x += spec.signal_magnitude * protos[m][d];
        fmap.data[r * D + d] = static_cast<float>(x);
      }
    }

    for (std::size_t m = 0; m < spec.num_classes; ++m) ds.labels.set(i, m, -1);
    for (std::size_t j = 0; j < k; ++j) ds.labels.set(i, class_order[j], 1);
  }
  return ds;
}

// Keeps exactly round(keep * entries) labels, chosen uniformly without
// replacement; the rest become unknown (0). Kept entries are never altered.
inline LabelMatrix mask_labels(const LabelMatrix& full, double keep, std::uint64_t seed) {
  if (!(keep > 0.0) || keep > 1.0)
    throw ValidationError("mask_labels: keep proportion must be in (0, 1]");
  for (auto x : full.v)
    if (x == 0) throw ValidationError("mask_labels: input labels must be fully known");
  const std::size_t total = full.v.size();
  if (total == 0) throw ValidationError("mask_labels: empty label matrix");
  const auto kept = static_cast<std::size_t>(std::llround(keep * static_cast<double>(total)));
  if (kept == 0) throw ValidationError("mask_labels: keep proportion keeps zero labels");

  LabelMatrix out = full;
  const auto perm = keyed_permutation(seed, "mask", 0, total);
  for (std::size_t r = kept; r < total; ++r) out.v[perm[r]] = 0;
  return out;
}

struct SplitSpec {
  std::vector<int> seen;
  std::vector<int> unseen;
};

// Random disjoint seen/unseen class partition; both sides must be non-empty.
inline SplitSpec split_zero_shot(std::size_t num_classes, double unseen_fraction,
                                 std::uint64_t seed) {
  if (num_classes < 2) throw ValidationError("split_zero_shot: need at least two classes");
  if (!(unseen_fraction > 0.0) || !(unseen_fraction < 1.0))
    throw ValidationError("split_zero_shot: unseen fraction must be in (0, 1)");
  const auto n_unseen = static_cast<std::size_t>(
      std::llround(unseen_fraction * static_cast<double>(num_classes)));
  if (n_unseen == 0 || n_unseen >= num_classes)
    throw ValidationError("split_zero_shot: fraction yields an empty split side");
  const auto perm = keyed_permutation(seed, "split", 0, num_classes);
  SplitSpec out;
  for (std::size_t i = 0; i < num_classes; ++i) {
    const int cls = static_cast<int>(perm[i]);
    if (i < n_unseen)
      out.unseen.push_back(cls);
    else
      out.seen.push_back(cls);
  }
  std::sort(out.seen.begin(), out.seen.end());
  std::sort(out.unseen.begin(), out.unseen.end());
  return out;
}

// Zero-shot training protocol: all supervision for unseen classes is removed.
inline LabelMatrix mask_unseen(const LabelMatrix& labels, const std::vector<int>& unseen) {
  LabelMatrix out = labels;
  for (std::size_t i = 0; i < out.num_images; ++i)
    for (int m : unseen) out.set(i, static_cast<std::size_t>(m), 0);
  return out;
}

// ---- on-disk format ----

inline json spec_to_json(const SyntheticSpec& s) {
  json pairs = json::array();
  for (const auto& p : s.confusion_pairs) pairs.push_back({p.a, p.b, p.angle});
  return json{{"num_images", s.num_images},
              {"num_classes", s.num_classes},
              {"height", s.height},
              {"width", s.width},
              {"feature_dim", s.feature_dim},
              {"prototype_seed", s.prototype_seed},
              {"sample_seed", s.sample_seed},
              {"noise_sigma", s.noise_sigma},
              {"min_planted", s.min_planted},
              {"max_planted", s.max_planted},
              {"signal_magnitude", s.signal_magnitude},
              {"confusion_pairs", pairs}};
}

inline SyntheticSpec spec_from_json(const json& j);

inline std::string features_payload(const Dataset& ds) {
  std::string buf;
  buf.reserve(ds.features.size() * (ds.features.empty() ? 0 : ds.features[0].data.size()) * 4);
  for (const auto& fmap : ds.features)
    for (float f : fmap.data) put_f32(buf, f);
  return buf;
}

inline std::string labels_payload(const Dataset& ds) {
  std::string out;
  for (std::size_t i = 0; i < ds.labels.num_images; ++i) {
    out += std::to_string(i);
    for (std::size_t m = 0; m < ds.labels.num_classes; ++m) {
      out += ',';
      out += std::to_string(static_cast<int>(ds.labels.at(i, m)));
    }
    out += '\n';
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  validate(ds.spec);
  if (ds.features.size() != ds.labels.num_images || ds.features.size() != ds.spec.num_images)
    throw ValidationError("save_dataset: image count mismatch between spec, features and labels");

  const std::string feats = features_payload(ds);
  const std::string labels = labels_payload(ds);

  json manifest{{"format", "triprompt-dataset"},
                {"version", 1},
                {"role", ds.role},
                {"num_images", ds.spec.num_images},
                {"num_classes", ds.spec.num_classes},
                {"height", ds.spec.height},
                {"width", ds.spec.width},
                {"feature_dim", ds.spec.feature_dim},
                {"spec", spec_to_json(ds.spec)},
                {"checksum",
                 {{"features.bin", to_hex(fnv1a64(feats))}, {"labels.csv", to_hex(fnv1a64(labels))}}}};

  std::filesystem::create_directories(dir);
  write_file_bytes(dir / "features.bin", feats);
  write_file_bytes(dir / "labels.csv", labels);
  write_file_bytes(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file_bytes(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest: " + std::string(e.what()));
  }
  try {
    if (manifest.at("format").get<std::string>() != "triprompt-dataset")
      throw ValidationError("malformed manifest: unknown format");
    if (manifest.at("version").get<int>() != 1)
      throw ValidationError("malformed manifest: unsupported version");

    Dataset ds;
    ds.role = manifest.at("role").get<std::string>();
    ds.spec = spec_from_json(manifest.at("spec"));
    const auto ni = manifest.at("num_images").get<std::size_t>();
    const auto nc = manifest.at("num_classes").get<std::size_t>();
    const auto h = manifest.at("height").get<std::size_t>();
    const auto w = manifest.at("width").get<std::size_t>();
    const auto d = manifest.at("feature_dim").get<std::size_t>();
    if (ni != ds.spec.num_images || nc != ds.spec.num_classes || h != ds.spec.height ||
        w != ds.spec.width || d != ds.spec.feature_dim)
      throw ValidationError("malformed manifest: top-level dims disagree with spec");
    validate(ds.spec);

    const std::string feats = read_file_bytes(dir / "features.bin");
    const std::size_t expected = ni * h * w * d * 4;
    if (feats.size() != expected)
      throw ValidationError("features payload size does not match manifest dims");
    if (to_hex(fnv1a64(feats)) != manifest.at("checksum").at("features.bin").get<std::string>())
      throw ValidationError("checksum mismatch: features.bin");

    const std::string labels_text = read_file_bytes(dir / "labels.csv");
    if (to_hex(fnv1a64(labels_text)) != manifest.at("checksum").at("labels.csv").get<std::string>())
      throw ValidationError("checksum mismatch: labels.csv");

    ds.features.resize(ni);
    ByteReader r(feats);
    for (std::size_t i = 0; i < ni; ++i) {
      auto& fmap = ds.features[i];
      fmap.image_id = static_cast<int>(i);
      fmap.height = h;
      fmap.width = w;
      fmap.dim = d;
      fmap.data.resize(h * w * d);
      for (auto& f : fmap.data) f = r.f32();
    }

    ds.labels = LabelMatrix(ni, nc);
    std::istringstream ls(labels_text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(ls, line)) {
      if (line.empty()) continue;
      if (row >= ni) throw ValidationError("labels.csv has more rows than images");
      std::istringstream fields(line);
      std::string field;
      if (!std::getline(fields, field, ',') || field != std::to_string(row))
        throw ValidationError("labels.csv: image ids must be 0..n-1 in order");
      for (std::size_t m = 0; m < nc; ++m) {
        if (!std::getline(fields, field, ','))
          throw ValidationError("labels.csv: missing label entries");
        if (field != "1" && field != "-1" && field != "0")
          throw ValidationError("labels.csv: entries must be -1, 0 or 1");
        ds.labels.set(row, m, static_cast<std::int8_t>(std::stoi(field)));
      }
      if (std::getline(fields, field, ','))
        throw ValidationError("labels.csv: too many label entries");
      ++row;
    }
    if (row != ni) throw ValidationError("labels.csv has fewer rows than images");
    return ds;
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest: " + std::string(e.what()));
  }
}

inline SyntheticSpec spec_from_json(const json& j) {
  SyntheticSpec s;
  s.num_images = j.at("num_images").get<std::size_t>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.feature_dim = j.at("feature_dim").get<std::size_t>();
  s.prototype_seed = j.at("prototype_seed").get<std::uint64_t>();
  s.sample_seed = j.at("sample_seed").get<std::uint64_t>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.min_planted = j.at("min_planted").get<std::size_t>();
  s.max_planted = j.at("max_planted").get<std::size_t>();
  s.signal_magnitude = j.at("signal_magnitude").get<double>();
  for (const auto& p : j.at("confusion_pairs")) {
    if (!p.is_array() || p.size() != 3)
      throw ValidationError("confusion pair must be [class_a, class_b, angle]");
    s.confusion_pairs.push_back(
        {p[0].get<int>(), p[1].get<int>(), p[2].get<double>()});
  }
  return s;
}

// Content hash of a dataset (manifest checksums already pin the payloads).
inline std::uint64_t dataset_hash(const Dataset& ds) {
  Fnv1a h;
  const std::string feats = features_payload(ds);
  const std::string labels = labels_payload(ds);
  h.update(feats);
  h.update(labels);
  return h.value();
}

}  // namespace triprompt
