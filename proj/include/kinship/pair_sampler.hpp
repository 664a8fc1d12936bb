#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kinship/embedding_store.hpp"
#include "kinship/error.hpp"
#include "kinship/pairs.hpp"
#include "kinship/rng.hpp"

namespace kinship {

namespace detail {

struct SamplingPerson {
  const std::string* person_id;
  std::vector<const std::string*> images;  // detected images only
};

struct SamplingFamily {
  const std::string* family_id;
  std::vector<SamplingPerson> persons;  // persons with >= 1 detected image
};

inline std::vector<SamplingFamily> sampling_families(const DatasetIndex& index) {
  std::vector<SamplingFamily> out;
  for (const auto& [family_id, persons] : index.families) {
    SamplingFamily family{&family_id, {}};
    for (const auto& [person_id, images] : persons) {
      SamplingPerson person{&person_id, {}};
      for (const auto& image : images) {
        if (index.record(image).detected) person.images.push_back(&image);
      }
      if (!person.images.empty()) family.persons.push_back(std::move(person));
    }
    if (!family.persons.empty()) out.push_back(std::move(family));
  }
  return out;
}

}  // namespace detail

/**
 * Balanced validation pairs drawn uniformly over families.
 *
 * For each of k anchor families (drawn with replacement from families having
 * at least two persons with a detected image) emits a positive pair
 * (anchor_face, face of another member) and a negative pair
 * (anchor_face, face of a member of a different family). Output is
 * interleaved: pairs[2i] is the i-th positive, pairs[2i + 1] the i-th
 * negative, and both share image_a. Images with detected == false never
 * participate.
 *
 * Throws NotEnoughFamilies when fewer than two families have a usable person,
 * NoEligibleAnchor when no family has two.
 */
inline PairSet sample_validation_pairs(const DatasetIndex& index, std::size_t k,
                                       std::uint64_t seed) {
  const auto families = detail::sampling_families(index);
  if (families.size() < 2) {
    fail(ErrorKind::kNotEnoughFamilies,
         std::to_string(families.size()) + " families with a detected image, need 2");
  }
  std::vector<std::size_t> anchor_pool;
  for (std::size_t f = 0; f < families.size(); ++f) {
    if (families[f].persons.size() >= 2) anchor_pool.push_back(f);
  }
  if (anchor_pool.empty()) {
    fail(ErrorKind::kNoEligibleAnchor, "no family has two persons with detected images");
  }

  Rng rng(seed);
  auto pick = [&rng](const auto& items) -> const auto& { return items[rng.below(items.size())]; };

  std::vector<std::size_t> anchors(k);
  for (auto& a : anchors) a = anchor_pool[rng.below(anchor_pool.size())];

  PairSet set;
  set.seed = seed;
  set.pairs.reserve(2 * k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& anchor_family = families[anchors[i]];

    // Other family: uniform over every usable family except the anchor's.
    std::size_t other = rng.below(families.size() - 1);
    if (other >= anchors[i]) ++other;
    const auto& negative_family = families[other];

    const std::size_t anchor_slot = rng.below(anchor_family.persons.size());
    std::size_t positive_slot = rng.below(anchor_family.persons.size() - 1);
    if (positive_slot >= anchor_slot) ++positive_slot;
    const auto& anchor_person = anchor_family.persons[anchor_slot];
    const auto& positive_person = anchor_family.persons[positive_slot];
    const auto& negative_person = pick(negative_family.persons);

    const std::string& anchor_face = *pick(anchor_person.images);
    const std::string& positive_face = *pick(positive_person.images);
    const std::string& negative_face = *pick(negative_person.images);

    set.pairs.push_back(Pair{anchor_face, positive_face, true, std::nullopt});
    set.pairs.push_back(Pair{anchor_face, negative_face, false, std::nullopt});
  }
  return set;
}

}  // namespace kinship
