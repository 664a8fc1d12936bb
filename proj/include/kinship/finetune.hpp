#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kinship/calibration.hpp"
#include "kinship/detail/io.hpp"
#include "kinship/embedding_store.hpp"
#include "kinship/error.hpp"
#include "kinship/pairs.hpp"
#include "kinship/rng.hpp"
#include "kinship/similarity.hpp"

namespace kinship {

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < std::min(r, c); ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return std::span<double>(data).subspan(r * cols, cols); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/**
 * Linear adapter over frozen embeddings followed by a per-family softmax
 * classifier:
 *
 *   z = x P,   e = z / |z| (when normalize_embeddings) or z,   logits = e W^T + b.
 *
 * Only P survives into apply_adapter; W and b exist for training.
 */
struct AdapterModel {
  Matrix projection;          // d_in x d_out
  Matrix classifier_weights;  // N x d_out, row j is family j's weight vector
  std::vector<double> classifier_bias;
  bool normalize_embeddings = false;
  std::vector<std::string> family_ids;

  std::size_t input_dim() const { return projection.rows; }
  std::size_t output_dim() const { return projection.cols; }
  std::size_t classes() const { return classifier_weights.rows; }

  /// Zero-initialized model of the given shape with an identity projection.
  static AdapterModel zeros(std::size_t d_in, std::size_t d_out, std::size_t n, bool normalize) {
    AdapterModel m;
    m.projection = Matrix::identity(d_in, d_out);
    m.classifier_weights = Matrix(n, d_out);
    m.classifier_bias.assign(n, 0.0);
    m.normalize_embeddings = normalize;
    for (std::size_t j = 0; j < n; ++j) m.family_ids.push_back("class" + std::to_string(j));
    return m;
  }

  void validate() const {
    if (classifier_weights.cols != projection.cols || classifier_bias.size() != classes() ||
        family_ids.size() != classes()) {
      fail(ErrorKind::kDimensionMismatch, "inconsistent adapter model shapes");
    }
    std::vector<std::string> ids = family_ids;
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      fail(ErrorKind::kDuplicateId, "family ids in model are not unique");
    }
    auto finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!finite(projection.data) || !finite(classifier_weights.data) || !finite(classifier_bias)) {
      fail(ErrorKind::kNonFiniteValue, "adapter model has non-finite parameters");
    }
  }

  friend bool operator==(const AdapterModel&, const AdapterModel&) = default;
};

struct Gradients {
  Matrix projection;
  Matrix classifier_weights;
  std::vector<double> classifier_bias;

  double global_norm() const {
    double sum = 0.0;
    for (double g : projection.data) sum += g * g;
    for (double g : classifier_weights.data) sum += g * g;
    for (double g : classifier_bias) sum += g * g;
    return std::sqrt(sum);
  }
};

namespace detail {

struct ForwardPass {
  Matrix projected;      // z, B x d_out
  Matrix embedded;       // e, B x d_out
  std::vector<double> norms;  // |z| per row; 1 when not normalizing
  Matrix logits;         // B x N
};

inline ForwardPass forward(const AdapterModel& model, const Matrix& batch) {
  if (batch.cols != model.input_dim()) {
    fail(ErrorKind::kDimensionMismatch, "batch has dim " + std::to_string(batch.cols) +
                                            ", model expects " +
                                            std::to_string(model.input_dim()));
  }
  const std::size_t b = batch.rows, d_in = model.input_dim(), d_out = model.output_dim(),
                    n = model.classes();
  ForwardPass pass;
  pass.projected = Matrix(b, d_out);
  for (std::size_t i = 0; i < b; ++i) {
    auto z = pass.projected.row(i);
    for (std::size_t a = 0; a < d_in; ++a) {
      const double x = batch(i, a);
      if (x == 0.0) continue;
      auto p = model.projection.row(a);
      for (std::size_t c = 0; c < d_out; ++c) z[c] += x * p[c];
    }
  }
  pass.embedded = pass.projected;
  pass.norms.assign(b, 1.0);
  if (model.normalize_embeddings) {
    for (std::size_t i = 0; i < b; ++i) {
      const double norm = l2_norm(pass.projected.row(i));
      if (!(norm > 0.0)) fail(ErrorKind::kZeroVector, "projected row " + std::to_string(i) + " is zero");
      pass.norms[i] = norm;
      for (double& v : pass.embedded.row(i)) v /= norm;
    }
  }
  pass.logits = Matrix(b, n);
  for (std::size_t i = 0; i < b; ++i) {
    auto e = pass.embedded.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      pass.logits(i, j) = detail::dot(e, model.classifier_weights.row(j)) + model.classifier_bias[j];
    }
  }
  return pass;
}

inline void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    fail(ErrorKind::kLengthMismatch, std::to_string(rows) + " rows but " +
                                         std::to_string(labels.size()) + " labels");
  }
  if (rows == 0) fail(ErrorKind::kEmptyScores, "empty batch");
  for (std::size_t label : labels) {
    if (label >= classes) {
      fail(ErrorKind::kLabelOutOfRange,
           "label " + std::to_string(label) + " with " + std::to_string(classes) + " classes");
    }
  }
}

/// log(sum(exp(row))) with the max subtracted first.
inline double log_sum_exp(std::span<const double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - m);
  return m + std::log(sum);
}

}  // namespace detail

/// Logits (batch x N) for a batch of input embeddings (batch x d_in).
inline Matrix forward_logits(const AdapterModel& model, const Matrix& batch) {
  return detail::forward(model, batch).logits;
}

/// Mean softmax cross-entropy of `labels` under `logits`.
inline double classification_loss(const Matrix& logits, std::span<const std::size_t> labels) {
  detail::check_labels(labels, logits.rows, logits.cols);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    total += detail::log_sum_exp(logits.row(i)) - logits(i, labels[i]);
  }
  return total / static_cast<double>(logits.rows);
}

struct LossAndGradients {
  double loss = 0.0;
  Gradients gradients;
};

/**
 * Loss plus exact gradients for P, W and b.
 *
 * With delta_i = (softmax(logits_i) - onehot(y_i)) / B:
 *   db = sum_i delta_i,   dW = sum_i delta_i^T e_i,   de_i = delta_i W,
 *   dz_i = (de_i - e_i (e_i . de_i)) / |z_i|  (normalized) or de_i,
 *   dP = sum_i x_i^T dz_i.
 */
inline LossAndGradients loss_and_gradients(const AdapterModel& model, const Matrix& batch,
                                           std::span<const std::size_t> labels) {
  const auto pass = detail::forward(model, batch);
  const std::size_t b = batch.rows, d_in = model.input_dim(), d_out = model.output_dim(),
                    n = model.classes();
  detail::check_labels(labels, b, n);

  LossAndGradients out;
  auto& g = out.gradients;
  g.projection = Matrix(d_in, d_out);
  g.classifier_weights = Matrix(n, d_out);
  g.classifier_bias.assign(n, 0.0);

  const double inv_b = 1.0 / static_cast<double>(b);
  std::vector<double> delta(n), d_embedded(d_out), d_projected(d_out);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    auto logits = pass.logits.row(i);
    const double lse = detail::log_sum_exp(logits);
    total += lse - logits[labels[i]];
    for (std::size_t j = 0; j < n; ++j) delta[j] = std::exp(logits[j] - lse) * inv_b;
    delta[labels[i]] -= inv_b;

    auto e = pass.embedded.row(i);
    std::fill(d_embedded.begin(), d_embedded.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      g.classifier_bias[j] += delta[j];
      auto w = model.classifier_weights.row(j);
      auto gw = g.classifier_weights.row(j);
      for (std::size_t c = 0; c < d_out; ++c) {
        gw[c] += delta[j] * e[c];
        d_embedded[c] += delta[j] * w[c];
      }
    }

    if (model.normalize_embeddings) {
      const double radial = detail::dot(e, d_embedded);
      for (std::size_t c = 0; c < d_out; ++c) {
        d_projected[c] = (d_embedded[c] - e[c] * radial) / pass.norms[i];
      }
    } else {
      d_projected = d_embedded;
    }

    for (std::size_t a = 0; a < d_in; ++a) {
      const double x = batch(i, a);
      if (x == 0.0) continue;
      auto gp = g.projection.row(a);
      for (std::size_t c = 0; c < d_out; ++c) gp[c] += x * d_projected[c];
    }
  }
  out.loss = total * inv_b;
  return out;
}

/// Rescales all gradients together when their global L2 norm exceeds `clip_norm`.
inline Gradients clip_gradients(Gradients grads, double clip_norm) {
  const double norm = grads.global_norm();
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (double& v : grads.projection.data) v *= scale;
    for (double& v : grads.classifier_weights.data) v *= scale;
    for (double& v : grads.classifier_bias) v *= scale;
  }
  return grads;
}

struct TrainConfig {
  double base_lr = 0.0001;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  std::size_t warmup_batches = 200;
  std::size_t cooldown_batches = 400;
  std::vector<std::size_t> milestone_epochs{8, 14, 25, 35, 40};
  double milestone_factor = 0.75;
  double clip_norm = 1.5;
  std::uint64_t seed = 0;
  bool normalize_embeddings = true;
  /// Adapter output width; 0 keeps the input dimension.
  std::size_t output_dim = 0;
  /// With validation pairs, return the epoch with the best validation AUC
  /// instead of the last one.
  bool select_best = true;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["base_lr"] = base_lr;
    j["momentum"] = momentum;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["warmup_batches"] = warmup_batches;
    j["cooldown_batches"] = cooldown_batches;
    j["milestone_epochs"] = milestone_epochs;
    j["milestone_factor"] = milestone_factor;
    j["clip_norm"] = clip_norm;
    j["seed"] = seed;
    j["normalize_embeddings"] = normalize_embeddings;
    j["output_dim"] = output_dim;
    j["select_best"] = select_best;
    return j;
  }

  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail(ErrorKind::kParse, "train config must be a JSON object");
    TrainConfig c;
    try {
      for (const auto& [key, value] : j.items()) {
        if (key == "base_lr") c.base_lr = value.get<double>();
        else if (key == "momentum") c.momentum = value.get<double>();
        else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
        else if (key == "epochs") c.epochs = value.get<std::size_t>();
        else if (key == "warmup_batches") c.warmup_batches = value.get<std::size_t>();
        else if (key == "cooldown_batches") c.cooldown_batches = value.get<std::size_t>();
        else if (key == "milestone_epochs") c.milestone_epochs = value.get<std::vector<std::size_t>>();
        else if (key == "milestone_factor") c.milestone_factor = value.get<double>();
        else if (key == "clip_norm") c.clip_norm = value.get<double>();
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else if (key == "normalize_embeddings") c.normalize_embeddings = value.get<bool>();
        else if (key == "output_dim") c.output_dim = value.get<std::size_t>();
        else if (key == "select_best") c.select_best = value.get<bool>();
        else fail(ErrorKind::kParse, "unknown train config key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, std::string("train config: ") + e.what());
    }
    return c;
  }

  /// Checks everything that does not depend on the dataset size.
  void validate() const {
    if (!(base_lr > 0.0)) fail(ErrorKind::kInvalidConfig, "base_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::kInvalidConfig, "momentum must be in [0, 1)");
    if (batch_size == 0) fail(ErrorKind::kInvalidConfig, "batch_size must be positive");
    if (epochs == 0) fail(ErrorKind::kInvalidConfig, "epochs must be positive");
    if (!(milestone_factor > 0.0)) fail(ErrorKind::kInvalidConfig, "milestone_factor must be positive");
    if (!(clip_norm > 0.0)) fail(ErrorKind::kInvalidConfig, "clip_norm must be positive");
  }
};

/**
 * Learning rate for the batch at 0-based `global_batch_index` in 1-based
 * `epoch`.
 *
 * base_lr is multiplied by milestone_factor once for every milestone epoch
 * <= epoch. The result is then ramped by (index + 1) / warmup_batches over the
 * first warmup_batches batches and by (total - index) / cooldown_batches over
 * the last cooldown_batches.
 */
inline double lr_at(const TrainConfig& config, std::size_t global_batch_index,
                    std::size_t total_batches, std::size_t epoch) {
  if (global_batch_index >= total_batches) {
    fail(ErrorKind::kIndexOutOfRange, "batch " + std::to_string(global_batch_index) + " of " +
                                          std::to_string(total_batches));
  }
  double lr = config.base_lr;
  for (std::size_t milestone : config.milestone_epochs) {
    if (milestone <= epoch) lr *= config.milestone_factor;
  }
  if (global_batch_index < config.warmup_batches) {
    lr *= static_cast<double>(global_batch_index + 1) / static_cast<double>(config.warmup_batches);
  }
  const std::size_t remaining = total_batches - global_batch_index;
  if (remaining <= config.cooldown_batches) {
    lr *= static_cast<double>(remaining) / static_cast<double>(config.cooldown_batches);
  }
  return lr;
}

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> lr_trace;
  std::vector<double> grad_norm_trace;  // before clipping
  std::vector<double> val_auc;          // empty without validation pairs
  std::optional<double> initial_val_auc;
  std::size_t batches_per_epoch = 0;
  /// 1-based epoch whose parameters were returned.
  std::size_t selected_epoch = 0;

  friend bool operator==(const TrainLog&, const TrainLog&) = default;

  std::string to_csv() const {
    std::string out = "epoch,mean_loss,val_auc,lr_first_batch\n";
    for (std::size_t e = 0; e < epoch_loss.size(); ++e) {
      out += std::to_string(e + 1) + "," + detail::format_double(epoch_loss[e]) + ",";
      if (e < val_auc.size()) out += detail::format_double(val_auc[e]);
      out += "," + detail::format_double(lr_trace[e * batches_per_epoch]) + "\n";
    }
    return out;
  }
};

/// Validation pairs plus the index that resolves their image ids (which
/// may differ from the training index when families are held out).
struct Validation {
  const PairSet& pairs;
  const DatasetIndex& index;
};

/// Maps every row through the projection (normalized when the model says so).
inline EmbeddingMatrix apply_adapter(const AdapterModel& model, const EmbeddingMatrix& matrix) {
  if (matrix.dim() != model.input_dim()) {
    fail(ErrorKind::kDimensionMismatch, "embeddings have dim " + std::to_string(matrix.dim()) +
                                            ", model expects " +
                                            std::to_string(model.input_dim()));
  }
  const std::size_t d_out = model.output_dim();
  std::vector<float> out;
  out.reserve(matrix.rows() * d_out);
  std::vector<double> z(d_out);
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    auto x = matrix.row(r);
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t a = 0; a < x.size(); ++a) {
      const double xa = x[a];
      if (xa == 0.0) continue;
      auto p = model.projection.row(a);
      for (std::size_t c = 0; c < d_out; ++c) z[c] += xa * p[c];
    }
    if (model.normalize_embeddings) {
      const double norm = l2_norm(z);
      if (!(norm > 0.0)) fail(ErrorKind::kZeroVector, "projected row " + std::to_string(r) + " is zero");
      for (double& v : z) v /= norm;
    }
    for (double v : z) out.push_back(static_cast<float>(v));
  }
  return EmbeddingMatrix(d_out, std::move(out));
}

/// AUC of cosine scores after mapping the pair images through the adapter.
inline double adapted_auc(const AdapterModel& model, const PairSet& pairs,
                          const DatasetIndex& index, const EmbeddingMatrix& matrix) {
  std::map<std::uint64_t, std::vector<double>> cache;
  auto embed = [&](const std::string& image_id) -> const std::vector<double>& {
    const auto row = index.record(image_id).row;
    auto it = cache.find(row);
    if (it != cache.end()) return it->second;
    Matrix x(1, matrix.dim());
    auto src = matrix.row(row);
    std::copy(src.begin(), src.end(), x.data.begin());
    auto pass = detail::forward(model, x);
    return cache.emplace(row, std::move(pass.embedded.data)).first->second;
  };
  std::vector<LabeledScore> scores;
  scores.reserve(pairs.pairs.size());
  for (const auto& p : pairs.pairs) {
    scores.push_back({cosine_similarity(embed(p.image_a), embed(p.image_b)), p.kin});
  }
  return compute_auc(scores);
}

struct TrainResult {
  AdapterModel model;
  TrainLog log;
};

/**
 * Mini-batch SGD with momentum on the family classification loss.
 *
 * Classes are the families of `index` that have a detected image; every
 * detected image is one training sample. Each epoch reshuffles the samples
 * from the seeded generator; gradients are clipped before the update
 *   v <- momentum * v - lr * g,   theta <- theta + v.
 */
inline TrainResult train(const DatasetIndex& index, const EmbeddingMatrix& matrix,
                         const TrainConfig& config,
                         std::optional<Validation> validation = std::nullopt) {
  config.validate();

  std::vector<std::string> family_ids;
  std::vector<std::pair<std::uint64_t, std::size_t>> samples;  // (row, class)
  for (const auto& [family_id, persons] : index.families) {
    const std::size_t label = family_ids.size();
    bool any = false;
    for (const auto& [person_id, images] : persons) {
      for (const auto& image : images) {
        const auto& rec = index.record(image);
        if (!rec.detected) continue;
        samples.emplace_back(rec.row, label);
        any = true;
      }
    }
    if (any) family_ids.push_back(family_id);
  }
  if (family_ids.size() < 2) {
    fail(ErrorKind::kNotEnoughFamilies,
         std::to_string(family_ids.size()) + " trainable families, need 2");
  }

  const std::size_t d_in = matrix.dim();
  const std::size_t d_out = config.output_dim == 0 ? d_in : config.output_dim;
  const std::size_t n = family_ids.size();
  const std::size_t per_epoch = (samples.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  if (config.warmup_batches + config.cooldown_batches > total) {
    fail(ErrorKind::kInvalidConfig,
         "warmup + cooldown (" + std::to_string(config.warmup_batches + config.cooldown_batches) +
             ") exceeds total batch count " + std::to_string(total));
  }

  Rng rng(config.seed);
  AdapterModel model;
  model.projection = Matrix::identity(d_in, d_out);
  model.classifier_weights = Matrix(n, d_out);
  for (double& w : model.classifier_weights.data) w = 0.01 * rng.gaussian();
  model.classifier_bias.assign(n, 0.0);
  model.normalize_embeddings = config.normalize_embeddings;
  model.family_ids = family_ids;

  Gradients velocity{Matrix(d_in, d_out), Matrix(n, d_out), std::vector<double>(n, 0.0)};

  TrainResult result;
  auto& log = result.log;
  log.batches_per_epoch = per_epoch;
  log.lr_trace.reserve(total);
  log.grad_norm_trace.reserve(total);
  if (validation) log.initial_val_auc = adapted_auc(model, validation->pairs, validation->index, matrix);

  std::optional<AdapterModel> best;
  double best_auc = -std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Matrix batch;
  std::vector<std::size_t> labels;
  std::size_t global = 0;

  auto step = [&](std::vector<double>& param, std::vector<double>& vel,
                  const std::vector<double>& grad, double lr) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      vel[i] = config.momentum * vel[i] - lr * grad[i];
      param[i] += vel[i];
    }
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t size = std::min(config.batch_size, order.size() - start);
      batch = Matrix(size, d_in);
      labels.resize(size);
      for (std::size_t i = 0; i < size; ++i) {
        const auto& [row, label] = samples[order[start + i]];
        auto src = matrix.row(row);
        std::copy(src.begin(), src.end(), batch.row(i).begin());
        labels[i] = label;
      }
      auto [loss, grads] = loss_and_gradients(model, batch, labels);
      epoch_loss += loss * static_cast<double>(size);
      log.grad_norm_trace.push_back(grads.global_norm());
      grads = clip_gradients(std::move(grads), config.clip_norm);
      const double lr = lr_at(config, global, total, epoch);
      log.lr_trace.push_back(lr);
      step(model.projection.data, velocity.projection.data, grads.projection.data, lr);
      step(model.classifier_weights.data, velocity.classifier_weights.data,
           grads.classifier_weights.data, lr);
      step(model.classifier_bias, velocity.classifier_bias, grads.classifier_bias, lr);
      ++global;
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(samples.size()));
    if (validation) {
      const double auc = adapted_auc(model, validation->pairs, validation->index, matrix);
      log.val_auc.push_back(auc);
      if (auc > best_auc) {
        best_auc = auc;
        best = model;
        log.selected_epoch = epoch;
      }
    }
  }

  if (validation && config.select_best && best) {
    result.model = std::move(*best);
  } else {
    result.model = std::move(model);
    log.selected_epoch = config.epochs;
  }
  return result;
}

namespace detail {
inline constexpr char kModelMagic[4] = {'K', 'M', 'D', '1'};
inline constexpr std::uint32_t kModelVersion = 1;
}  // namespace detail

/// KMD1: "KMD1", u32 version, u32 d_in, u32 d_out, u32 N, u8 normalize, then
/// projection, classifier weights and bias as binary64 (all little-endian,
/// row-major), then one JSON string per line with the family ids in class order.
inline std::string serialize_model(const AdapterModel& model) {
  model.validate();
  detail::ByteWriter out;
  out.bytes(std::string_view(detail::kModelMagic, 4));
  out.u32(detail::kModelVersion);
  out.u32(static_cast<std::uint32_t>(model.input_dim()));
  out.u32(static_cast<std::uint32_t>(model.output_dim()));
  out.u32(static_cast<std::uint32_t>(model.classes()));
  out.u8(model.normalize_embeddings ? 1 : 0);
  for (double v : model.projection.data) out.f64(v);
  for (double v : model.classifier_weights.data) out.f64(v);
  for (double v : model.classifier_bias) out.f64(v);
  std::string bytes = out.str();
  for (const auto& id : model.family_ids) {
    bytes += nlohmann::json(id).dump();
    bytes += '\n';
  }
  return bytes;
}

inline AdapterModel parse_model(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.remaining() < 4 || in.bytes(4) != std::string_view(detail::kModelMagic, 4)) {
    fail(ErrorKind::kBadMagic, "not a KMD1 model file");
  }
  const std::uint32_t version = in.u32();
  if (version != detail::kModelVersion) {
    fail(ErrorKind::kBadMagic, "unsupported KMD1 version " + std::to_string(version));
  }
  const std::size_t d_in = in.u32(), d_out = in.u32(), n = in.u32();
  const std::uint8_t flag = in.u8();
  if (flag > 1) fail(ErrorKind::kParse, "normalize flag must be 0 or 1");
  in.require((d_in * d_out + n * d_out + n) * 8);
  AdapterModel model;
  model.normalize_embeddings = flag == 1;
  model.projection = Matrix(d_in, d_out);
  for (double& v : model.projection.data) v = in.f64();
  model.classifier_weights = Matrix(n, d_out);
  for (double& v : model.classifier_weights.data) v = in.f64();
  model.classifier_bias.resize(n);
  for (double& v : model.classifier_bias) v = in.f64();
  for (auto line : detail::split_lines(in.rest())) {
    auto id = nlohmann::json::parse(line, nullptr, false);
    if (id.is_discarded() || !id.is_string()) fail(ErrorKind::kParse, "bad family id line in KMD1 trailer");
    model.family_ids.push_back(id.get<std::string>());
  }
  if (model.family_ids.size() != n) {
    fail(ErrorKind::kTruncatedFile, "KMD1 trailer lists " + std::to_string(model.family_ids.size()) +
                                        " family ids, header says " + std::to_string(n));
  }
  model.validate();
  return model;
}

inline void write_model(const AdapterModel& model, const std::filesystem::path& path) {
  detail::write_file(path, serialize_model(model));
}

inline AdapterModel load_model(const std::filesystem::path& path) {
  return parse_model(detail::read_file(path));
}

}  // namespace kinship
