#pragma once

#include <cmath>
#include <ranges>
#include <type_traits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kinship/embedding_store.hpp"
#include "kinship/error.hpp"
#include "kinship/pairs.hpp"

namespace kinship {

/// Any random-access range of arithmetic values: std::vector, std::span, ...
template <typename R>
concept Vector = std::ranges::random_access_range<R> && std::ranges::sized_range<R> &&
                 std::is_arithmetic_v<std::ranges::range_value_t<R>>;

namespace detail {

template <Vector X>
double squared_norm(const X& x) {
  double sum = 0.0;
  for (auto v : x) sum += static_cast<double>(v) * static_cast<double>(v);
  return sum;
}

template <Vector X, Vector Y>
double dot(const X& x, const Y& y) {
  double sum = 0.0;
  const std::size_t n = std::ranges::size(x);
  for (std::size_t i = 0; i < n; ++i) {
    sum += static_cast<double>(x[i]) * static_cast<double>(y[i]);
  }
  return sum;
}

}  // namespace detail

template <Vector X>
double l2_norm(const X& x) {
  return std::sqrt(detail::squared_norm(x));
}

/// Unit-length copy of `x`. Throws ZeroVector for an all-zero input.
template <Vector X>
std::vector<double> l2_normalize(const X& x) {
  const double norm = l2_norm(x);
  if (!(norm > 0.0)) fail(ErrorKind::kZeroVector, "cannot normalize a zero vector");
  std::vector<double> out;
  out.reserve(std::ranges::size(x));
  for (auto v : x) out.push_back(static_cast<double>(v) / norm);
  return out;
}

/// x.y / (|x| |y|). Larger means more alike; a kin decision is score >= threshold.
template <Vector X, Vector Y>
double cosine_similarity(const X& x, const Y& y) {
  if (std::ranges::size(x) != std::ranges::size(y)) {
    fail(ErrorKind::kDimensionMismatch, std::to_string(std::ranges::size(x)) + " vs " +
                                            std::to_string(std::ranges::size(y)));
  }
  const double nx = detail::squared_norm(x);
  const double ny = detail::squared_norm(y);
  if (!(nx > 0.0) || !(ny > 0.0)) fail(ErrorKind::kZeroVector, "cosine of a zero vector");
  return detail::dot(x, y) / std::sqrt(nx * ny);
}

/// Cosine score for every pair, in input order. Throws UnknownImageId.
inline std::vector<double> score_pairs(const PairSet& pairs, const DatasetIndex& index,
                                       const EmbeddingMatrix& matrix) {
  std::vector<double> scores;
  scores.reserve(pairs.pairs.size());
  for (const auto& pair : pairs.pairs) {
    const auto& a = index.record(pair.image_a);
    const auto& b = index.record(pair.image_b);
    scores.push_back(cosine_similarity(matrix.row(a.row), matrix.row(b.row)));
  }
  return scores;
}

}  // namespace kinship
