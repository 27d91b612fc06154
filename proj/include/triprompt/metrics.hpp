// Ranking and thresholded metrics for multi-label evaluation: per-class
// average precision / mAP, class-wise and overall precision-recall-F1, and
// pooled top-k variants. Ties in scores always break toward the lower index
// so every ranking is total and reproducible.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "data.hpp"

namespace triprompt {

// Uninterpolated AP: mean over positives of precision at their rank, ranking
// by descending score with ascending-index tie-break.
inline double average_precision(const Vec& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw ValidationError("average_precision: scores and labels must match and be non-empty");
  std::size_t positives = 0;
  for (int y : labels) {
    if (y != 1 && y != -1) throw ValidationError("average_precision: labels must be +1 or -1");
    positives += y == 1;
  }
  if (positives == 0) throw ValidationError("average_precision: no positive labels");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] == 1) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(r + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

struct MeanApResult {
  double value = 0.0;
  std::vector<int> skipped;  // classes with no positives, excluded with a warning
};

namespace detail {

inline void check_eval_labels(const Mat& scores, const LabelMatrix& labels,
                              const std::vector<int>& classes) {
  if (scores.rows != labels.num_images || scores.cols != labels.num_classes)
    throw ValidationError("metrics: score matrix and label matrix shapes differ");
  if (classes.empty()) throw ValidationError("metrics: empty class subset");
  for (int m : classes) {
    if (m < 0 || static_cast<std::size_t>(m) >= labels.num_classes)
      throw ValidationError("metrics: class subset entry out of range");
    for (std::size_t i = 0; i < labels.num_images; ++i)
      if (labels.at(i, static_cast<std::size_t>(m)) == 0)
        throw ValidationError("metrics: evaluation labels must be fully known");
  }
}

}  // namespace detail

// Mean AP over a class subset. Classes without a single positive are excluded
// and reported; excluding every class is an error.
inline MeanApResult mean_ap(const Mat& scores, const LabelMatrix& labels,
                            const std::vector<int>& classes) {
  detail::check_eval_labels(scores, labels, classes);
  MeanApResult out;
  double sum = 0.0;
  std::size_t used = 0;
  Vec col(scores.rows);
  std::vector<int> lab(scores.rows);
  for (int m : classes) {
    const auto mc = static_cast<std::size_t>(m);
    std::size_t positives = 0;
    for (std::size_t i = 0; i < scores.rows; ++i) {
      col[i] = scores(i, mc);
      lab[i] = labels.at(i, mc);
      positives += lab[i] == 1;
    }
    if (positives == 0) {
      out.skipped.push_back(m);
      continue;
    }
    sum += average_precision(col, lab);
    ++used;
  }
  if (used == 0) throw ValidationError("mean_ap: every class in the subset lacks positives");
  out.value = sum / static_cast<double>(used);
  return out;
}

struct PrfResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace detail {

inline double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline PrfResult prf_from_counts(double tp, double pred_pos, double actual_pos) {
  PrfResult r;
  r.precision = safe_div(tp, pred_pos);
  r.recall = safe_div(tp, actual_pos);
  r.f1 = safe_div(2.0 * r.precision * r.recall, r.precision + r.recall);
  return r;
}

}  // namespace detail

// Class-wise PRF: per-class precision/recall/F1 at `threshold`, averaged over
// the subset. Empty denominators follow the 0-by-convention rule.
inline PrfResult class_wise_prf(const Mat& scores, const LabelMatrix& labels,
                                const std::vector<int>& classes, double threshold) {
  detail::check_eval_labels(scores, labels, classes);
  PrfResult mean;
  for (int m : classes) {
    const auto mc = static_cast<std::size_t>(m);
    double tp = 0, pred = 0, actual = 0;
    for (std::size_t i = 0; i < scores.rows; ++i) {
      const bool hit = scores(i, mc) > threshold;
      const bool pos = labels.at(i, mc) == 1;
      tp += hit && pos;
      pred += hit;
      actual += pos;
    }
    const PrfResult r = detail::prf_from_counts(tp, pred, actual);
    mean.precision += r.precision;
    mean.recall += r.recall;
    mean.f1 += r.f1;
  }
  const auto n = static_cast<double>(classes.size());
  mean.precision /= n;
  mean.recall /= n;
  mean.f1 /= n;
  return mean;
}

// Overall PRF: counts pooled across every (image, class) pair in the subset.
inline PrfResult overall_prf(const Mat& scores, const LabelMatrix& labels,
                             const std::vector<int>& classes, double threshold) {
  detail::check_eval_labels(scores, labels, classes);
  double tp = 0, pred = 0, actual = 0;
  for (int m : classes) {
    const auto mc = static_cast<std::size_t>(m);
    for (std::size_t i = 0; i < scores.rows; ++i) {
      const bool hit = scores(i, mc) > threshold;
      const bool pos = labels.at(i, mc) == 1;
      tp += hit && pos;
      pred += hit;
      actual += pos;
    }
  }
  return detail::prf_from_counts(tp, pred, actual);
}

// Pooled top-k PRF: each image predicts its k best classes within the subset
// (ties break toward the lower class index); counts are pooled over images.
inline PrfResult topk_prf(const Mat& scores, const LabelMatrix& labels,
                          const std::vector<int>& classes, std::size_t k) {
  detail::check_eval_labels(scores, labels, classes);
  if (k < 1 || k > classes.size())
    throw ValidationError("topk_prf: k must be in [1, subset size]");
  double tp = 0, actual = 0;
  std::vector<int> sorted(classes);
  for (std::size_t i = 0; i < scores.rows; ++i) {
    std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
      const double sa = scores(i, static_cast<std::size_t>(a));
      const double sb = scores(i, static_cast<std::size_t>(b));
      if (sa != sb) return sa > sb;
      return a < b;
    });
    for (std::size_t r = 0; r < k; ++r)
      tp += labels.at(i, static_cast<std::size_t>(sorted[r])) == 1;
    for (int m : classes) actual += labels.at(i, static_cast<std::size_t>(m)) == 1;
  }
  const double pred = static_cast<double>(k) * static_cast<double>(scores.rows);
  return detail::prf_from_counts(tp, pred, actual);
}

struct MetricsReport {
  double map = 0.0;
  PrfResult cls;      // class-wise (C_P, C_R, C_F)
  PrfResult overall;  // pooled (O_P, O_R, O_F)
  std::vector<std::pair<std::size_t, PrfResult>> topk;
  std::vector<int> skipped_classes;
  // metadata
  std::string split = "all";
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t num_images = 0;
  std::size_t num_classes = 0;
  std::size_t checkpoint_epoch = 0;
  double threshold = 0.5;
};

inline MetricsReport build_metrics_report(const Mat& scores, const LabelMatrix& labels,
                                          const std::vector<int>& classes,
                                          const std::vector<std::size_t>& ks, double threshold) {
  MetricsReport rep;
  const MeanApResult map = mean_ap(scores, labels, classes);
  rep.map = map.value;
  rep.skipped_classes = map.skipped;
  rep.cls = class_wise_prf(scores, labels, classes, threshold);
  rep.overall = overall_prf(scores, labels, classes, threshold);
  for (std::size_t k : ks) rep.topk.emplace_back(k, topk_prf(scores, labels, classes, k));
  rep.num_images = scores.rows;
  rep.num_classes = classes.size();
  rep.threshold = threshold;
  return rep;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json topk = nlohmann::json::object();
  for (const auto& [k, prf] : r.topk)
    topk[std::to_string(k)] = {{"P", prf.precision}, {"R", prf.recall}, {"F1", prf.f1}};
  return nlohmann::json{
      {"mAP", r.map},
      {"C_P", r.cls.precision},
      {"C_R", r.cls.recall},
      {"C_F", r.cls.f1},
      {"O_P", r.overall.precision},
      {"O_R", r.overall.recall},
      {"O_F", r.overall.f1},
      {"topk", topk},
      {"metadata",
       {{"split", r.split},
        {"config_hash", r.config_hash},
        {"seed", r.seed},
        {"num_images", r.num_images},
        {"num_classes", r.num_classes},
        {"checkpoint_epoch", r.checkpoint_epoch},
        {"threshold", r.threshold},
        {"skipped_classes", r.skipped_classes}}}};
}

inline std::string render_metrics_table(const MetricsReport& r) {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof(line), "%-12s %-10s %8s %8s %8s\n", "split", "metric", "P", "R", "F1");
  out += line;
  std::snprintf(line, sizeof(line), "%-12s %-10s %8.4f\n", r.split.c_str(), "mAP", r.map);
  out += line;
  std::snprintf(line, sizeof(line), "%-12s %-10s %8.4f %8.4f %8.4f\n", r.split.c_str(),
                "class-wise", r.cls.precision, r.cls.recall, r.cls.f1);
  out += line;
  std::snprintf(line, sizeof(line), "%-12s %-10s %8.4f %8.4f %8.4f\n", r.split.c_str(), "overall",
                r.overall.precision, r.overall.recall, r.overall.f1);
  out += line;
  for (const auto& [k, prf] : r.topk) {
    const std::string name = "top-" + std::to_string(k);
    std::snprintf(line, sizeof(line), "%-12s %-10s %8.4f %8.4f %8.4f\n", r.split.c_str(),
                  name.c_str(), prf.precision, prf.recall, prf.f1);
    out += line;
  }
  if (!r.skipped_classes.empty()) {
    out += "warning: classes without positives excluded from mAP:";
    for (int m : r.skipped_classes) out += " " + std::to_string(m);
    out += "\n";
  }
  return out;
}

}  // namespace triprompt
