#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kinship/detail/io.hpp"
#include "kinship/embedding_store.hpp"
#include "kinship/error.hpp"

namespace kinship {

struct Pair {
  std::string image_a;
  std::string image_b;
  bool kin = false;
  std::optional<KinType> kin_type;

  friend bool operator==(const Pair&, const Pair&) = default;
};

struct PairSet {
  std::vector<Pair> pairs;
  /// Seed the sampler used; 0 for sets read from disk.
  std::uint64_t seed = 0;

  std::size_t positives() const {
    std::size_t n = 0;
    for (const auto& p : pairs) n += p.kin ? 1 : 0;
    return n;
  }
  std::size_t negatives() const { return pairs.size() - positives(); }
};

namespace detail {

inline constexpr std::string_view kPairsHeader = "image_a,image_b,label,kin_type";

inline void check_csv_field(const std::string& field) {
  if (field.empty() || field.find_first_of(",\"\r\n") != std::string::npos) {
    fail(ErrorKind::kParse, "image id '" + field + "' cannot be written as a plain CSV field");
  }
}

inline std::vector<std::string_view> split_csv_row(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace detail

inline std::string serialize_pairs(const PairSet& set) {
  std::string out(detail::kPairsHeader);
  out += '\n';
  for (const auto& p : set.pairs) {
    detail::check_csv_field(p.image_a);
    detail::check_csv_field(p.image_b);
    out += p.image_a;
    out += ',';
    out += p.image_b;
    out += p.kin ? ",1," : ",0,";
    if (p.kin_type) out += kin_type_name(*p.kin_type);
    out += '\n';
  }
  return out;
}

inline PairSet parse_pairs(std::string_view text) {
  auto lines = detail::split_lines(text);
  if (lines.empty() || lines.front() != detail::kPairsHeader) {
    fail(ErrorKind::kParse, "pairs CSV line 1: expected header '" +
                                std::string(detail::kPairsHeader) + "'");
  }
  PairSet set;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = "pairs CSV line " + std::to_string(i + 1) + ": ";
    auto fields = detail::split_csv_row(lines[i]);
    if (fields.size() != 4) {
      fail(ErrorKind::kParse, where + "expected 4 fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) fail(ErrorKind::kParse, where + "empty image id");
    Pair p;
    p.image_a = fields[0];
    p.image_b = fields[1];
    if (fields[2] == "1") {
      p.kin = true;
    } else if (fields[2] == "0") {
      p.kin = false;
    } else {
      fail(ErrorKind::kParse, where + "label must be 1 or 0");
    }
    if (!fields[3].empty()) {
      auto type = try_parse_kin_type(fields[3]);
      if (!type) fail(ErrorKind::kUnknownKinType, where + "'" + std::string(fields[3]) + "'");
      p.kin_type = *type;
    }
    set.pairs.push_back(std::move(p));
  }
  return set;
}

inline void write_pairs(const PairSet& set, const std::filesystem::path& path) {
  detail::write_file(path, serialize_pairs(set));
}

inline PairSet load_pairs(const std::filesystem::path& path) {
  return parse_pairs(detail::read_file(path));
}

}  // namespace kinship
