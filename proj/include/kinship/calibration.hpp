#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kinship/detail/io.hpp"
#include "kinship/embedding_store.hpp"
#include "kinship/error.hpp"
#include "kinship/pairs.hpp"

namespace kinship {

struct LabeledScore {
  double score = 0.0;
  bool positive = false;
};

struct TypedScore {
  double score = 0.0;
  bool positive = false;
  std::optional<KinType> kin_type;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;

  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// Points run from (0, 0) to (1, 1) with strictly decreasing thresholds.
/// The first threshold is max score + 1, which admits nothing.
struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

namespace detail {

inline void check_both_classes(std::size_t positives, std::size_t negatives) {
  if (positives == 0 || negatives == 0) {
    fail(ErrorKind::kDegenerateLabels, std::to_string(positives) + " positives and " +
                                           std::to_string(negatives) + " negatives");
  }
}

inline void check_rate(double target, const char* name) {
  if (!(target >= 0.0 && target <= 1.0)) {
    fail(ErrorKind::kInvalidConfig, std::string(name) + " must lie in [0, 1]");
  }
}

}  // namespace detail

/**
 * Mann-Whitney AUC: the fraction of (positive, negative) pairs in which the
 * positive scores higher, ties counting one half.
 *
 * Sorting groups tied scores; each group contributes
 * pos_in_group * (neg_below + neg_in_group / 2). All partial sums are
 * half-integers, so the result is a single rounding of the exact ratio.
 */
inline double compute_auc(std::span<const LabeledScore> scores) {
  std::vector<LabeledScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const LabeledScore& a, const LabeledScore& b) { return a.score < b.score; });
  double negatives_below = 0.0;
  double positives_total = 0.0;
  double favourable = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    double pos = 0.0, neg = 0.0;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      (sorted[j].positive ? pos : neg) += 1.0;
      ++j;
    }
    favourable += pos * (negatives_below + 0.5 * neg);
    negatives_below += neg;
    positives_total += pos;
    i = j;
  }
  detail::check_both_classes(static_cast<std::size_t>(positives_total),
                             static_cast<std::size_t>(negatives_below));
  return favourable / (positives_total * negatives_below);
}

/// One point per distinct score plus the (0, 0) origin; auc is the
/// trapezoidal area under those points.
inline RocCurve compute_roc(std::span<const LabeledScore> scores) {
  std::vector<LabeledScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const LabeledScore& a, const LabeledScore& b) { return a.score > b.score; });
  std::size_t total_pos = 0;
  for (const auto& s : sorted) total_pos += s.positive ? 1 : 0;
  const std::size_t total_neg = sorted.size() - total_pos;
  detail::check_both_classes(total_pos, total_neg);

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, sorted.front().score + 1.0});
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double threshold = sorted[i].score;
    while (i < sorted.size() && sorted[i].score == threshold) {
      (sorted[i].positive ? tp : fp) += 1;
      ++i;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(total_neg),
                            static_cast<double>(tp) / static_cast<double>(total_pos), threshold});
  }
  double area = 0.0;
  for (std::size_t p = 1; p < curve.points.size(); ++p) {
    const auto& a = curve.points[p - 1];
    const auto& b = curve.points[p];
    area += (b.fpr - a.fpr) * (b.tpr + a.tpr) * 0.5;
  }
  curve.auc = area;
  return curve;
}

/**
 * Smallest threshold (among the observed scores and max + 1) whose false
 * positive rate, |{s >= t}| / n, does not exceed `target_fpr`.
 */
inline double threshold_at_fpr(std::span<const double> negative_scores, double target_fpr) {
  if (negative_scores.empty()) fail(ErrorKind::kEmptyScores, "no negative scores");
  detail::check_rate(target_fpr, "target FPR");
  std::vector<double> sorted(negative_scores.begin(), negative_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double n = static_cast<double>(sorted.size());
  double threshold = sorted.front() + 1.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double candidate = sorted[i];
    while (i < sorted.size() && sorted[i] == candidate) ++i;
    if (static_cast<double>(i) / n > target_fpr) break;
    threshold = candidate;
  }
  return threshold;
}

/**
 * Largest threshold (among the observed scores and max + 1) that keeps the
 * true positive rate at or above `target_tpr`.
 */
inline double threshold_at_tpr(std::span<const double> positive_scores, double target_tpr) {
  if (positive_scores.empty()) fail(ErrorKind::kEmptyScores, "no positive scores");
  detail::check_rate(target_tpr, "target TPR");
  std::vector<double> sorted(positive_scores.begin(), positive_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double n = static_cast<double>(sorted.size());
  if (0.0 >= target_tpr) return sorted.front() + 1.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double candidate = sorted[i];
    while (i < sorted.size() && sorted[i] == candidate) ++i;
    if (static_cast<double>(i) / n >= target_tpr) return candidate;
  }
  return sorted.back();
}

class ThresholdPolicy {
 public:
  double default_threshold = 0.0;
  std::map<KinType, double> per_type;

  double threshold_for(std::optional<KinType> type) const {
    if (type) {
      auto it = per_type.find(*type);
      if (it != per_type.end()) return it->second;
    }
    return default_threshold;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json out;
    out["default"] = default_threshold;
    out["per_type"] = nlohmann::ordered_json::object();
    for (KinType type : kAllKinTypes) {
      if (auto it = per_type.find(type); it != per_type.end()) {
        out["per_type"][std::string(kin_type_name(type))] = it->second;
      }
    }
    return out;
  }

  static ThresholdPolicy from_json(const nlohmann::json& in) {
    ThresholdPolicy policy;
    if (!in.is_object() || !in.contains("default") || !in["default"].is_number()) {
      fail(ErrorKind::kParse, "threshold policy needs a numeric 'default'");
    }
    policy.default_threshold = in["default"].get<double>();
    if (in.contains("per_type")) {
      const auto& table = in["per_type"];
      if (!table.is_object()) fail(ErrorKind::kParse, "'per_type' must be an object");
      for (const auto& [key, value] : table.items()) {
        if (!value.is_number()) fail(ErrorKind::kParse, "per_type '" + key + "' must be numeric");
        policy.per_type[parse_kin_type(key)] = value.get<double>();
      }
    }
    return policy;
  }

  friend bool operator==(const ThresholdPolicy&, const ThresholdPolicy&) = default;
};

inline constexpr std::size_t kDefaultMinTypeCount = 30;

/**
 * Global FPR threshold plus a per-type override for every kin type with at
 * least `min_count` negatives. Types below the cutoff, and untyped pairs,
 * fall back to the global value.
 */
inline ThresholdPolicy per_type_thresholds(std::span<const TypedScore> scores, double target_fpr,
                                           std::size_t min_count = kDefaultMinTypeCount) {
  if (scores.empty()) fail(ErrorKind::kEmptyScores, "no scores");
  std::vector<double> all_negatives;
  std::map<KinType, std::vector<double>> negatives_by_type;
  for (const auto& s : scores) {
    if (s.positive) continue;
    all_negatives.push_back(s.score);
    if (s.kin_type) negatives_by_type[*s.kin_type].push_back(s.score);
  }
  ThresholdPolicy policy;
  policy.default_threshold = threshold_at_fpr(all_negatives, target_fpr);
  for (const auto& [type, negatives] : negatives_by_type) {
    if (negatives.size() >= min_count) policy.per_type[type] = threshold_at_fpr(negatives, target_fpr);
  }
  return policy;
}

/// Key under which untyped pairs are reported.
inline constexpr std::string_view kUntypedKey = "ALL";

struct VerificationReport {
  std::map<std::string, double> accuracy_by_type;
  std::map<std::string, std::size_t> counts_by_type;
  /// Correct decisions over all pairs.
  double average_accuracy = 0.0;
  /// Unweighted mean of the per-type accuracies.
  double macro_accuracy = 0.0;

  /// Keys in table order: the kin types, then ALL.
  std::vector<std::string> ordered_keys() const {
    std::vector<std::string> keys;
    for (KinType type : kAllKinTypes) {
      std::string key(kin_type_name(type));
      if (accuracy_by_type.contains(key)) keys.push_back(key);
    }
    if (accuracy_by_type.contains(std::string(kUntypedKey))) keys.emplace_back(kUntypedKey);
    return keys;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json out;
    out["by_type"] = nlohmann::ordered_json::object();
    out["counts"] = nlohmann::ordered_json::object();
    for (const auto& key : ordered_keys()) {
      out["by_type"][key] = accuracy_by_type.at(key);
      out["counts"][key] = counts_by_type.at(key);
    }
    out["average"] = average_accuracy;
    out["macro_average"] = macro_accuracy;
    return out;
  }
};

/// Kin decision per pair: score >= policy threshold for the pair's type.
inline std::vector<bool> decide(const PairSet& pairs, std::span<const double> scores,
                                const ThresholdPolicy& policy) {
  if (scores.size() != pairs.pairs.size()) {
    fail(ErrorKind::kLengthMismatch, std::to_string(pairs.pairs.size()) + " pairs but " +
                                         std::to_string(scores.size()) + " scores");
  }
  std::vector<bool> decisions(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    decisions[i] = scores[i] >= policy.threshold_for(pairs.pairs[i].kin_type);
  }
  return decisions;
}

inline VerificationReport evaluate_verification(const PairSet& pairs,
                                                std::span<const double> scores,
                                                const ThresholdPolicy& policy) {
  const auto decisions = decide(pairs, scores, policy);
  std::map<std::string, std::size_t> correct;
  VerificationReport report;
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const auto& pair = pairs.pairs[i];
    const std::string key =
        pair.kin_type ? std::string(kin_type_name(*pair.kin_type)) : std::string(kUntypedKey);
    const bool ok = decisions[i] == pair.kin;
    report.counts_by_type[key] += 1;
    correct[key] += ok ? 1 : 0;
    total_correct += ok ? 1 : 0;
  }
  double macro = 0.0;
  for (const auto& [key, count] : report.counts_by_type) {
    const double accuracy = static_cast<double>(correct[key]) / static_cast<double>(count);
    report.accuracy_by_type[key] = accuracy;
    macro += accuracy;
  }
  if (!decisions.empty()) {
    report.average_accuracy =
        static_cast<double>(total_correct) / static_cast<double>(decisions.size());
    report.macro_accuracy = macro / static_cast<double>(report.counts_by_type.size());
  }
  return report;
}

inline std::string serialize_roc(const RocCurve& curve) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : curve.points) {
    out += detail::format_double(p.fpr) + "," + detail::format_double(p.tpr) + "," +
           detail::format_double(p.threshold) + "\n";
  }
  out += "# auc=" + detail::format_double(curve.auc) + "\n";
  return out;
}

inline void write_roc(const RocCurve& curve, const std::filesystem::path& path) {
  detail::write_file(path, serialize_roc(curve));
}

/// Collects the (score, label) view used by the AUC/ROC routines.
inline std::vector<LabeledScore> labeled_scores(const PairSet& pairs,
                                                std::span<const double> scores) {
  if (scores.size() != pairs.pairs.size()) {
    fail(ErrorKind::kLengthMismatch, std::to_string(pairs.pairs.size()) + " pairs but " +
                                         std::to_string(scores.size()) + " scores");
  }
  std::vector<LabeledScore> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = {scores[i], pairs.pairs[i].kin};
  return out;
}

inline std::vector<TypedScore> typed_scores(const PairSet& pairs, std::span<const double> scores) {
  if (scores.size() != pairs.pairs.size()) {
    fail(ErrorKind::kLengthMismatch, std::to_string(pairs.pairs.size()) + " pairs but " +
                                         std::to_string(scores.size()) + " scores");
  }
  std::vector<TypedScore> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = {scores[i], pairs.pairs[i].kin, pairs.pairs[i].kin_type};
  }
  return out;
}

}  // namespace kinship
