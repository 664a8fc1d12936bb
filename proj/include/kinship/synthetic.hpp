#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kinship/embedding_store.hpp"
#include "kinship/error.hpp"
#include "kinship/rng.hpp"

namespace kinship {

struct SyntheticConfig {
  std::size_t families = 50;
  std::size_t persons_min = 2;
  std::size_t persons_max = 6;
  std::size_t images_min = 1;
  std::size_t images_max = 4;
  std::size_t dim = 64;
  std::size_t signal_dims = 8;
  double family_spread = 1.0;
  double person_spread = 0.3;
  double image_noise = 0.2;
  double distractor_noise = 1.5;
  std::uint64_t seed = 42;

  void validate() const {
    if (families < 2) fail(ErrorKind::kInvalidConfig, "need at least 2 families");
    if (persons_min == 0 || persons_min > persons_max) {
      fail(ErrorKind::kInvalidConfig, "persons per family range must be non-empty and >= 1");
    }
    if (images_min == 0 || images_min > images_max) {
      fail(ErrorKind::kInvalidConfig, "images per person range must be non-empty and >= 1");
    }
    if (signal_dims == 0 || signal_dims > dim) {
      fail(ErrorKind::kInvalidConfig, "signal_dims must be in [1, dim]");
    }
    for (double s : {family_spread, person_spread, image_noise, distractor_noise}) {
      if (!(s >= 0.0)) fail(ErrorKind::kInvalidConfig, "spreads must be non-negative");
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["families"] = families;
    j["persons_per_family"] = {persons_min, persons_max};
    j["images_per_person"] = {images_min, images_max};
    j["dim"] = dim;
    j["signal_dims"] = signal_dims;
    j["family_spread"] = family_spread;
    j["person_spread"] = person_spread;
    j["image_noise"] = image_noise;
    j["distractor_noise"] = distractor_noise;
    j["seed"] = seed;
    return j;
  }
};

struct SyntheticDataset {
  std::vector<ImageRecord> records;
  EmbeddingMatrix matrix;
};

namespace detail {
inline std::string padded(std::size_t value, std::size_t width) {
  std::string s = std::to_string(value);
  if (s.size() < width) s.insert(0, width - s.size(), '0');
  return s;
}
}  // namespace detail

/**
 * Family-structured Gaussian embeddings.
 *
 * Signal dimensions [0, signal_dims): family center ~ N(0, family_spread^2),
 * person = center + N(0, person_spread^2), image = person + N(0, image_noise^2).
 * Remaining dimensions are N(0, distractor_noise^2) per image, independent of
 * identity. Ids are zero-padded so lexicographic order equals generation order.
 */
inline SyntheticDataset generate(const SyntheticConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t family_width = std::max<std::size_t>(4, std::to_string(config.families).size());
  const std::size_t person_width = std::max<std::size_t>(2, std::to_string(config.persons_max).size());
  const std::size_t image_width = std::max<std::size_t>(2, std::to_string(config.images_max).size());

  SyntheticDataset out;
  std::vector<float> values;
  std::vector<double> center(config.signal_dims), person(config.signal_dims);
  for (std::size_t f = 0; f < config.families; ++f) {
    const std::string family_id = "F" + detail::padded(f + 1, family_width);
    for (double& c : center) c = config.family_spread * rng.gaussian();
    const auto persons = rng.between(config.persons_min, config.persons_max);
    for (std::size_t p = 0; p < persons; ++p) {
      const std::string person_id = family_id + "_P" + detail::padded(p + 1, person_width);
      for (std::size_t c = 0; c < person.size(); ++c) {
        person[c] = center[c] + config.person_spread * rng.gaussian();
      }
      const auto images = rng.between(config.images_min, config.images_max);
      for (std::size_t i = 0; i < images; ++i) {
        for (std::size_t c = 0; c < config.signal_dims; ++c) {
          values.push_back(static_cast<float>(person[c] + config.image_noise * rng.gaussian()));
        }
        for (std::size_t c = config.signal_dims; c < config.dim; ++c) {
          values.push_back(static_cast<float>(config.distractor_noise * rng.gaussian()));
        }
        out.records.push_back({person_id + "_I" + detail::padded(i + 1, image_width), person_id,
                               family_id, out.records.size(), true});
      }
    }
  }
  out.matrix = EmbeddingMatrix(config.dim, std::move(values));
  return out;
}

/// Config echo plus the realized counts.
inline nlohmann::ordered_json ground_truth_json(const SyntheticConfig& config,
                                                const SyntheticDataset& data) {
  nlohmann::ordered_json j;
  j["config"] = config.to_json();
  std::size_t persons = 0;
  std::string last;
  for (const auto& r : data.records) {
    if (r.person_id != last) ++persons;
    last = r.person_id;
  }
  j["families"] = config.families;
  j["persons"] = persons;
  j["images"] = data.records.size();
  return j;
}

}  // namespace kinship
