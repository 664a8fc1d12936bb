#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kinship/detail/io.hpp"
#include "kinship/error.hpp"

namespace kinship {

/// Dense n x d table of face embeddings, stored as binary32 exactly as read
/// from disk. Arithmetic elsewhere widens rows to double.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  /// Throws NonFiniteValue on NaN/Inf and DimensionMismatch when the value
  /// count is not a multiple of `dim`.
  EmbeddingMatrix(std::size_t dim, std::vector<float> values)
      : dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) fail(ErrorKind::kDimensionMismatch, "embedding dimension must be positive");
    if (values_.size() % dim_ != 0) {
      fail(ErrorKind::kDimensionMismatch,
           std::to_string(values_.size()) + " values is not a multiple of dim " +
               std::to_string(dim_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        fail(ErrorKind::kNonFiniteValue, "row " + std::to_string(i / dim_) + " column " +
                                             std::to_string(i % dim_));
      }
    }
  }

  /// Empty matrix with a declared dimension.
  static EmbeddingMatrix empty(std::size_t dim) { return EmbeddingMatrix(dim, {}); }

  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return dim_ == 0 ? 0 : values_.size() / dim_; }

  std::span<const float> row(std::size_t i) const {
    if (i >= rows()) {
      fail(ErrorKind::kRowOutOfRange,
           "row " + std::to_string(i) + " of " + std::to_string(rows()));
    }
    return std::span<const float>(values_).subspan(i * dim_, dim_);
  }

  std::vector<double> row_f64(std::size_t i) const {
    auto r = row(i);
    return std::vector<double>(r.begin(), r.end());
  }

  const std::vector<float>& values() const { return values_; }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

enum class KinType { MD, MS, SIBS, SS, BB, FD, FS, GFGD, GFGS, GMGD, GMGS };

inline constexpr KinType kAllKinTypes[] = {
    KinType::MD,   KinType::MS,   KinType::SIBS, KinType::SS,   KinType::BB,  KinType::FD,
    KinType::FS,   KinType::GFGD, KinType::GFGS, KinType::GMGD, KinType::GMGS};

inline std::string_view kin_type_name(KinType type) {
  switch (type) {
    case KinType::MD: return "MD";
    case KinType::MS: return "MS";
    case KinType::SIBS: return "SIBS";
    case KinType::SS: return "SS";
    case KinType::BB: return "BB";
    case KinType::FD: return "FD";
    case KinType::FS: return "FS";
    case KinType::GFGD: return "GFGD";
    case KinType::GFGS: return "GFGS";
    case KinType::GMGD: return "GMGD";
    case KinType::GMGS: return "GMGS";
  }
  return "?";
}

inline std::optional<KinType> try_parse_kin_type(std::string_view token) {
  for (KinType type : kAllKinTypes) {
    if (kin_type_name(type) == token) return type;
  }
  return std::nullopt;
}

inline KinType parse_kin_type(std::string_view token) {
  if (auto type = try_parse_kin_type(token)) return *type;
  fail(ErrorKind::kUnknownKinType, "'" + std::string(token) + "'");
}

struct ImageRecord {
  std::string image_id;
  std::string person_id;
  std::string family_id;
  std::uint64_t row = 0;
  /// false when the face detector missed and the image was only resized.
  bool detected = true;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// image -> person -> family hierarchy. All maps iterate in lexicographic id
/// order and image lists are sorted, so construction order never leaks out.
struct DatasetIndex {
  using Persons = std::map<std::string, std::vector<std::string>>;

  std::map<std::string, Persons> families;
  std::map<std::string, ImageRecord> image_lookup;
  std::size_t family_count = 0;

  const ImageRecord& record(std::string_view image_id) const {
    auto it = image_lookup.find(std::string(image_id));
    if (it == image_lookup.end()) {
      fail(ErrorKind::kUnknownImageId, "'" + std::string(image_id) + "'");
    }
    return it->second;
  }

  bool contains(std::string_view image_id) const {
    return image_lookup.contains(std::string(image_id));
  }

  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

namespace detail {

/// Enforces unique image ids and a single family per person.
inline void check_record_consistency(const std::vector<ImageRecord>& records) {
  std::map<std::string_view, std::size_t> seen_images;
  std::map<std::string_view, std::string_view> person_family;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!seen_images.emplace(r.image_id, i).second) {
      fail(ErrorKind::kDuplicateId, "image_id '" + r.image_id + "' (record " +
                                        std::to_string(i + 1) + ")");
    }
    auto [it, inserted] = person_family.emplace(r.person_id, r.family_id);
    if (!inserted && it->second != r.family_id) {
      fail(ErrorKind::kPersonFamilyConflict, "person '" + r.person_id + "' in families '" +
                                                 std::string(it->second) + "' and '" +
                                                 r.family_id + "'");
    }
  }
}

inline ImageRecord parse_manifest_line(std::string_view line, std::size_t line_number) {
  auto parse_error = [&](const std::string& what) -> ImageRecord {
    fail(ErrorKind::kParse, "manifest line " + std::to_string(line_number) + ": " + what);
  };
  nlohmann::json obj = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded()) return parse_error("invalid JSON");
  if (!obj.is_object()) return parse_error("expected a JSON object");
  static constexpr std::string_view kKeys[] = {"image_id", "person_id", "family_id", "row",
                                               "detected"};
  if (obj.size() != std::size(kKeys)) {
    return parse_error("expected exactly the keys image_id, person_id, family_id, row, detected");
  }
  for (auto key : kKeys) {
    if (!obj.contains(std::string(key))) return parse_error("missing key '" + std::string(key) + "'");
  }
  ImageRecord record;
  for (auto [key, field] : {std::pair{"image_id", &record.image_id},
                            std::pair{"person_id", &record.person_id},
                            std::pair{"family_id", &record.family_id}}) {
    const auto& value = obj[key];
    if (!value.is_string()) return parse_error(std::string("'") + key + "' must be a string");
    *field = value.get<std::string>();
    if (field->empty()) return parse_error(std::string("'") + key + "' must be non-empty");
  }
  if (!obj["row"].is_number_unsigned() && !(obj["row"].is_number_integer() && obj["row"] >= 0)) {
    return parse_error("'row' must be a non-negative integer");
  }
  record.row = obj["row"].get<std::uint64_t>();
  if (!obj["detected"].is_boolean()) return parse_error("'detected' must be a boolean");
  record.detected = obj["detected"].get<bool>();
  return record;
}

inline constexpr char kEmbeddingMagic[4] = {'K', 'E', 'B', '1'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

}  // namespace detail

inline std::vector<ImageRecord> parse_manifest(std::string_view text) {
  std::vector<ImageRecord> records;
  auto lines = detail::split_lines(text);
  records.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    records.push_back(detail::parse_manifest_line(lines[i], i + 1));
  }
  detail::check_record_consistency(records);
  return records;
}

/// Reads a JSON Lines manifest. Throws ParseError (with line number),
/// DuplicateId or PersonFamilyConflict; never returns a partial list.
inline std::vector<ImageRecord> load_manifest(const std::filesystem::path& path) {
  return parse_manifest(detail::read_file(path));
}

inline std::string serialize_manifest(const std::vector<ImageRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json obj;
    obj["image_id"] = r.image_id;
    obj["person_id"] = r.person_id;
    obj["family_id"] = r.family_id;
    obj["row"] = r.row;
    obj["detected"] = r.detected;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

inline void write_manifest(const std::vector<ImageRecord>& records,
                           const std::filesystem::path& path) {
  detail::write_file(path, serialize_manifest(records));
}

/// KEB1 layout: "KEB1", u32 version, u32 n, u32 d, then n*d binary32 values,
/// all little-endian, row-major.
inline std::string serialize_embeddings(const EmbeddingMatrix& matrix) {
  detail::ByteWriter out;
  out.bytes(std::string_view(detail::kEmbeddingMagic, 4));
  out.u32(detail::kEmbeddingVersion);
  out.u32(static_cast<std::uint32_t>(matrix.rows()));
  out.u32(static_cast<std::uint32_t>(matrix.dim()));
  for (float v : matrix.values()) out.f32(v);
  return out.str();
}

inline EmbeddingMatrix parse_embeddings(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.remaining() < 4 || in.bytes(4) != std::string_view(detail::kEmbeddingMagic, 4)) {
    fail(ErrorKind::kBadMagic, "not a KEB1 embedding file");
  }
  const std::uint32_t version = in.u32();
  if (version != detail::kEmbeddingVersion) {
    fail(ErrorKind::kBadMagic, "unsupported KEB1 version " + std::to_string(version));
  }
  const std::uint64_t n = in.u32();
  const std::uint64_t d = in.u32();
  if (d == 0) fail(ErrorKind::kParse, "embedding dimension must be positive");
  in.require(n * d * 4);
  if (in.remaining() != n * d * 4) {
    fail(ErrorKind::kParse, std::to_string(in.remaining() - n * d * 4) +
                                " trailing bytes after KEB1 payload");
  }
  std::vector<float> values(n * d);
  for (auto& v : values) v = in.f32();
  return EmbeddingMatrix(d, std::move(values));
}

/// Throws BadMagic, TruncatedFile or NonFiniteValue (with row and column).
inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(detail::read_file(path));
}

inline void write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  detail::write_file(path, serialize_embeddings(matrix));
}

/// Groups records into the family/person hierarchy after checking every row
/// reference against `matrix`.
inline DatasetIndex build_index(const std::vector<ImageRecord>& records,
                                const EmbeddingMatrix& matrix) {
  detail::check_record_consistency(records);
  DatasetIndex index;
  for (const auto& r : records) {
    if (r.row >= matrix.rows()) {
      fail(ErrorKind::kRowOutOfRange, "image '" + r.image_id + "' row " +
                                          std::to_string(r.row) + " >= " +
                                          std::to_string(matrix.rows()));
    }
    index.families[r.family_id][r.person_id].push_back(r.image_id);
    index.image_lookup.emplace(r.image_id, r);
  }
  for (auto& [family, persons] : index.families) {
    for (auto& [person, images] : persons) std::sort(images.begin(), images.end());
  }
  index.family_count = index.families.size();
  return index;
}

}  // namespace kinship
