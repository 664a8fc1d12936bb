#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kinship/detail/io.hpp"
#include "kinship/embedding_store.hpp"
#include "kinship/error.hpp"
#include "kinship/similarity.hpp"

namespace kinship {

struct ProbeSubject {
  std::string person_id;
  std::string family_id;
  std::vector<std::string> image_ids;
  std::vector<std::uint64_t> rows;
};

struct GalleryEntry {
  std::string image_id;
  std::uint64_t row = 0;
  std::string family_id;
};

struct Gallery {
  std::vector<GalleryEntry> entries;
};

enum class Aggregation {
  kMeanEmbedding,  // cosine against the mean of the normalized probe embeddings
  kMeanScore,      // g = mean over the per-image cosine scores
  kMaxScore,       // g = max over the per-image cosine scores
};

inline std::string_view aggregation_name(Aggregation policy) {
  switch (policy) {
    case Aggregation::kMeanEmbedding: return "mean-embedding";
    case Aggregation::kMeanScore: return "mean";
    case Aggregation::kMaxScore: return "max";
  }
  return "?";
}

inline Aggregation parse_aggregation(std::string_view name) {
  for (auto p : {Aggregation::kMeanEmbedding, Aggregation::kMeanScore, Aggregation::kMaxScore}) {
    if (aggregation_name(p) == name) return p;
  }
  fail(ErrorKind::kParse, "unknown aggregation policy '" + std::string(name) + "'");
}

/// Similarity of the probe subject to every gallery entry, in gallery order.
inline std::vector<double> score_probe(const ProbeSubject& probe, const Gallery& gallery,
                                       const EmbeddingMatrix& matrix, Aggregation policy) {
  if (probe.rows.empty()) fail(ErrorKind::kEmptyProbe, "probe '" + probe.person_id + "' has no images");
  std::vector<double> scores(gallery.entries.size());

  if (policy == Aggregation::kMeanEmbedding) {
    std::vector<double> mean(matrix.dim(), 0.0);
    for (auto row : probe.rows) {
      const auto unit = l2_normalize(matrix.row(row));
      for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += unit[c];
    }
    for (double& v : mean) v /= static_cast<double>(probe.rows.size());
    for (std::size_t g = 0; g < scores.size(); ++g) {
      scores[g] = cosine_similarity(mean, matrix.row(gallery.entries[g].row));
    }
    return scores;
  }

  std::vector<double> per_image(probe.rows.size());
  for (std::size_t g = 0; g < scores.size(); ++g) {
    const auto target = matrix.row(gallery.entries[g].row);
    for (std::size_t p = 0; p < probe.rows.size(); ++p) {
      per_image[p] = cosine_similarity(matrix.row(probe.rows[p]), target);
    }
    if (policy == Aggregation::kMaxScore) {
      scores[g] = *std::max_element(per_image.begin(), per_image.end());
    } else {
      scores[g] = std::accumulate(per_image.begin(), per_image.end(), 0.0) /
                  static_cast<double>(per_image.size());
    }
  }
  return scores;
}

/// Gallery indices by descending score; equal scores keep ascending index order.
inline std::vector<std::size_t> rank_gallery(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

/// Mean over relevant items of precision at the item's rank. `relevant` is
/// indexed by gallery position. Throws NoRelevant when nothing is relevant.
inline double average_precision(std::span<const std::size_t> ranking,
                                const std::vector<bool>& relevant) {
  std::size_t total = 0;
  for (std::size_t idx : ranking) total += relevant.at(idx) ? 1 : 0;
  if (total == 0) fail(ErrorKind::kNoRelevant, "no relevant gallery entry");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    if (relevant[ranking[r]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return sum / static_cast<double>(total);
}

struct ProbeResult {
  std::string person_id;
  std::vector<std::size_t> ranking;
  std::vector<double> scores;  // gallery order
  std::vector<bool> relevant;  // gallery order
  double average_precision = 0.0;
};

/// Fraction of probes with a relevant entry among their first `k` results.
inline double rank_at_k(std::span<const ProbeResult> runs, std::size_t k) {
  if (k == 0) fail(ErrorKind::kInvalidConfig, "K must be at least 1");
  if (runs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& run : runs) {
    const std::size_t limit = std::min(k, run.ranking.size());
    for (std::size_t r = 0; r < limit; ++r) {
      if (run.relevant[run.ranking[r]]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(runs.size());
}

struct RetrievalReport {
  Aggregation policy = Aggregation::kMeanEmbedding;
  std::size_t k = 5;
  double mean_average_precision = 0.0;
  double rank_at_k = 0.0;
  std::vector<ProbeResult> probes;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["policy"] = std::string(aggregation_name(policy));
    j["mAP"] = mean_average_precision;
    j["rank_at_K"] = rank_at_k;
    j["K"] = k;
    return j;
  }
};

/// Scores, ranks and evaluates every probe. Relevance is a shared family_id.
inline RetrievalReport run_retrieval(std::span<const ProbeSubject> probes, const Gallery& gallery,
                                     const EmbeddingMatrix& matrix, Aggregation policy,
                                     std::size_t k) {
  if (k == 0) fail(ErrorKind::kInvalidConfig, "K must be at least 1");
  if (gallery.entries.empty()) fail(ErrorKind::kInvalidConfig, "gallery is empty");
  RetrievalReport report;
  report.policy = policy;
  report.k = k;
  report.probes.reserve(probes.size());
  double ap_sum = 0.0;
  for (const auto& probe : probes) {
    ProbeResult result;
    result.person_id = probe.person_id;
    result.relevant.resize(gallery.entries.size());
    bool any = false;
    for (std::size_t g = 0; g < gallery.entries.size(); ++g) {
      result.relevant[g] = gallery.entries[g].family_id == probe.family_id;
      any = any || result.relevant[g];
    }
    if (!any) fail(ErrorKind::kNoRelevant, "probe '" + probe.person_id + "' has no relevant gallery entry");
    result.scores = score_probe(probe, gallery, matrix, policy);
    result.ranking = rank_gallery(result.scores);
    result.average_precision = average_precision(result.ranking, result.relevant);
    ap_sum += result.average_precision;
    report.probes.push_back(std::move(result));
  }
  if (!probes.empty()) {
    report.mean_average_precision = ap_sum / static_cast<double>(probes.size());
    report.rank_at_k = kinship::rank_at_k(report.probes, k);
  }
  return report;
}

/// Gallery in manifest order. Throws DuplicateId or RowOutOfRange.
inline Gallery gallery_from_records(const std::vector<ImageRecord>& records,
                                    const EmbeddingMatrix& matrix) {
  if (records.empty()) fail(ErrorKind::kInvalidConfig, "gallery manifest is empty");
  build_index(records, matrix);
  Gallery gallery;
  for (const auto& r : records) gallery.entries.push_back({r.image_id, r.row, r.family_id});
  return gallery;
}

/// Probes JSONL: {"person_id": ..., "family_id": ..., "image_ids": [...]}.
/// Image ids resolve to rows through `index`.
inline std::vector<ProbeSubject> parse_probes(std::string_view text, const DatasetIndex& index) {
  std::vector<ProbeSubject> probes;
  auto lines = detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string where = "probes line " + std::to_string(i + 1) + ": ";
    auto obj = nlohmann::json::parse(lines[i], nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) fail(ErrorKind::kParse, where + "expected a JSON object");
    if (!obj.contains("person_id") || !obj["person_id"].is_string() || !obj.contains("family_id") ||
        !obj["family_id"].is_string() || !obj.contains("image_ids") || !obj["image_ids"].is_array()) {
      fail(ErrorKind::kParse, where + "needs string person_id, family_id and array image_ids");
    }
    ProbeSubject probe;
    probe.person_id = obj["person_id"].get<std::string>();
    probe.family_id = obj["family_id"].get<std::string>();
    for (const auto& id : obj["image_ids"]) {
      if (!id.is_string()) fail(ErrorKind::kParse, where + "image ids must be strings");
      probe.image_ids.push_back(id.get<std::string>());
      probe.rows.push_back(index.record(probe.image_ids.back()).row);
    }
    if (probe.rows.empty()) fail(ErrorKind::kEmptyProbe, where + "probe '" + probe.person_id + "' has no images");
    probes.push_back(std::move(probe));
  }
  return probes;
}

inline std::vector<ProbeSubject> load_probes(const std::filesystem::path& path,
                                             const DatasetIndex& index) {
  return parse_probes(detail::read_file(path), index);
}

inline std::string serialize_probes(std::span<const ProbeSubject> probes) {
  std::string out;
  for (const auto& p : probes) {
    nlohmann::ordered_json j;
    j["person_id"] = p.person_id;
    j["family_id"] = p.family_id;
    j["image_ids"] = p.image_ids;
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// rank,gallery_image_id,score with 1-based ranks.
inline std::string serialize_ranking(const ProbeResult& result, const Gallery& gallery) {
  std::string out = "rank,gallery_image_id,score\n";
  for (std::size_t r = 0; r < result.ranking.size(); ++r) {
    const std::size_t g = result.ranking[r];
    out += std::to_string(r + 1) + "," + gallery.entries[g].image_id + "," +
           detail::format_double(result.scores[g]) + "\n";
  }
  return out;
}

}  // namespace kinship
