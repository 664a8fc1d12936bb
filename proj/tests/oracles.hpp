#pragma once

// Reference implementations used only by the tests. Each one is written the
// slow, obvious way and shares no code path with the library routine it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "kinship/calibration.hpp"
#include "kinship/finetune.hpp"
#include "kinship/rng.hpp"

namespace kinship::oracle {

/// Pairwise Mann-Whitney count: O(P * N).
inline double pairwise_auc(const std::vector<LabeledScore>& scores) {
  double favourable = 0.0, pairs = 0.0;
  for (const auto& p : scores) {
    if (!p.positive) continue;
    for (const auto& n : scores) {
      if (n.positive) continue;
      pairs += 1.0;
      if (p.score > n.score) favourable += 1.0;
      else if (p.score == n.score) favourable += 0.5;
    }
  }
  return favourable / pairs;
}

inline double rate_at_or_above(const std::vector<double>& scores, double threshold) {
  std::size_t count = 0;
  for (double s : scores) count += s >= threshold ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(scores.size());
}

/// Candidate thresholds: every observed score plus max + 1, ascending, unique.
inline std::vector<double> candidates(const std::vector<double>& scores) {
  std::set<double> unique(scores.begin(), scores.end());
  unique.insert(*unique.rbegin() + 1.0);
  return {unique.begin(), unique.end()};
}

inline double fpr_threshold(const std::vector<double>& negatives, double target) {
  for (double c : candidates(negatives)) {
    if (rate_at_or_above(negatives, c) <= target) return c;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

inline double tpr_threshold(const std::vector<double>& positives, double target) {
  auto cs = candidates(positives);
  for (auto it = cs.rbegin(); it != cs.rend(); ++it) {
    if (rate_at_or_above(positives, *it) >= target) return *it;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

/// Ranking by (score descending, index ascending) via a full comparison sort.
inline std::vector<std::size_t> ranking(const std::vector<double>& scores) {
  std::vector<std::pair<double, std::size_t>> keyed;
  for (std::size_t i = 0; i < scores.size(); ++i) keyed.emplace_back(-scores[i], i);
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> out;
  for (const auto& [neg, i] : keyed) out.push_back(i);
  return out;
}

/// AP straight from the definition, recounting the prefix at every hit.
inline double average_precision(const std::vector<std::size_t>& order,
                                const std::vector<bool>& relevant) {
  double sum = 0.0;
  std::size_t total = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!relevant[order[r]]) continue;
    ++total;
    std::size_t in_prefix = 0;
    for (std::size_t q = 0; q <= r; ++q) in_prefix += relevant[order[q]] ? 1 : 0;
    sum += static_cast<double>(in_prefix) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(total);
}

inline bool hit_within(const std::vector<std::size_t>& order, const std::vector<bool>& relevant,
                       std::size_t k) {
  for (std::size_t r = 0; r < order.size() && r < k; ++r) {
    if (relevant[order[r]]) return true;
  }
  return false;
}

inline double cosine(const std::vector<double>& x, const std::vector<double>& y) {
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xy += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  return xy / (std::sqrt(xx) * std::sqrt(yy));
}

/// Classification loss evaluated directly from the parameters, written
/// independently of detail::forward.
inline double loss(const AdapterModel& m, const Matrix& batch, const std::vector<std::size_t>& labels) {
  const std::size_t d_in = m.projection.rows, d_out = m.projection.cols;
  const std::size_t n = m.classifier_weights.rows;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.rows; ++i) {
    std::vector<double> z(d_out, 0.0);
    for (std::size_t c = 0; c < d_out; ++c) {
      for (std::size_t a = 0; a < d_in; ++a) z[c] += batch.data[i * d_in + a] * m.projection.data[a * d_out + c];
    }
    if (m.normalize_embeddings) {
      double norm = 0.0;
      for (double v : z) norm += v * v;
      norm = std::sqrt(norm);
      for (double& v : z) v /= norm;
    }
    std::vector<double> logits(n);
    for (std::size_t j = 0; j < n; ++j) {
      logits[j] = m.classifier_bias[j];
      for (std::size_t c = 0; c < d_out; ++c) logits[j] += m.classifier_weights.data[j * d_out + c] * z[c];
    }
    double denom = 0.0;
    for (double l : logits) denom += std::exp(l);
    total += -std::log(std::exp(logits[labels[i]]) / denom);
  }
  return total / static_cast<double>(batch.rows);
}

/// Central differences for every parameter, in the layout of Gradients.
inline Gradients numeric_gradients(const AdapterModel& model, const Matrix& batch,
                                   const std::vector<std::size_t>& labels, double step = 1e-5) {
  AdapterModel m = model;
  auto diff = [&](double& param) {
    const double saved = param;
    param = saved + step;
    const double up = loss(m, batch, labels);
    param = saved - step;
    const double down = loss(m, batch, labels);
    param = saved;
    return (up - down) / (2.0 * step);
  };
  Gradients g{Matrix(m.projection.rows, m.projection.cols),
              Matrix(m.classifier_weights.rows, m.classifier_weights.cols),
              std::vector<double>(m.classifier_bias.size())};
  for (std::size_t i = 0; i < m.projection.data.size(); ++i) g.projection.data[i] = diff(m.projection.data[i]);
  for (std::size_t i = 0; i < m.classifier_weights.data.size(); ++i) {
    g.classifier_weights.data[i] = diff(m.classifier_weights.data[i]);
  }
  for (std::size_t i = 0; i < m.classifier_bias.size(); ++i) g.classifier_bias[i] = diff(m.classifier_bias[i]);
  return g;
}

/// max |a - b| / max(|a|, |b|, floor). The floor keeps entries that are
/// zero up to rounding from dominating the ratio.
inline double max_relative_error(const Gradients& a, const Gradients& b, double floor = 1e-6) {
  double worst = 0.0;
  auto scan = [&](const std::vector<double>& x, const std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double scale = std::max({std::abs(x[i]), std::abs(y[i]), floor});
      worst = std::max(worst, std::abs(x[i] - y[i]) / scale);
    }
  };
  scan(a.projection.data, b.projection.data);
  scan(a.classifier_weights.data, b.classifier_weights.data);
  scan(a.classifier_bias, b.classifier_bias);
  return worst;
}

/// Random small model: projection near identity, classifier O(1).
inline AdapterModel random_model(Rng& rng, std::size_t d, std::size_t n, bool normalize) {
  AdapterModel m = AdapterModel::zeros(d, d, n, normalize);
  for (double& v : m.projection.data) v += 0.5 * rng.gaussian();
  for (double& v : m.classifier_weights.data) v = rng.gaussian();
  for (double& v : m.classifier_bias) v = 0.5 * rng.gaussian();
  return m;
}

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix x(rows, cols);
  for (double& v : x.data) v = rng.gaussian();
  return x;
}

}  // namespace kinship::oracle
