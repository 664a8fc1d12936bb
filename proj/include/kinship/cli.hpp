#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kinship/calibration.hpp"
#include "kinship/embedding_store.hpp"
#include "kinship/finetune.hpp"
#include "kinship/pair_sampler.hpp"
#include "kinship/retrieval.hpp"
#include "kinship/similarity.hpp"
#include "kinship/synthetic.hpp"

namespace kinship::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

/// Flag combinations CLI11 cannot express; reported with exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

namespace fs = std::filesystem;

inline void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

inline void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  kinship::detail::write_file(path, text);
}

inline std::string pad_right(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

inline std::string pad_left(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

struct Dataset {
  std::vector<ImageRecord> records;
  EmbeddingMatrix matrix;
  DatasetIndex index;
};

inline Dataset load_dataset(const std::string& manifest, const std::string& embeddings) {
  Dataset d;
  d.records = load_manifest(manifest);
  d.matrix = load_embeddings(embeddings);
  d.index = build_index(d.records, d.matrix);
  return d;
}

// ---------------------------------------------------------------------------

struct GenSyntheticArgs {
  SyntheticConfig config;
  std::string out_dir;
  std::size_t holdout_families = 0;
};

inline void gen_synthetic(const GenSyntheticArgs& args, std::ostream& out) {
  const auto data = generate(args.config);
  if (args.holdout_families >= args.config.families) {
    throw UsageError("--holdout-families must be smaller than --families");
  }
  const fs::path dir(args.out_dir);
  fs::create_directories(dir);
  write_manifest(data.records, dir / "manifest.jsonl");
  write_embeddings(data.matrix, dir / "embeddings.keb");
  auto truth = ground_truth_json(args.config, data);

  if (args.holdout_families > 0) {
    // The last `holdout_families` families (in id order) form the validation split.
    std::vector<std::string> family_ids;
    for (const auto& r : data.records) {
      if (family_ids.empty() || family_ids.back() != r.family_id) family_ids.push_back(r.family_id);
    }
    const std::string& first_val = family_ids[family_ids.size() - args.holdout_families];
    std::vector<ImageRecord> train_records, val_records;
    for (const auto& r : data.records) {
      (r.family_id < first_val ? train_records : val_records).push_back(r);
    }
    write_manifest(train_records, dir / "train_manifest.jsonl");
    write_manifest(val_records, dir / "val_manifest.jsonl");
    truth["holdout_families"] = args.holdout_families;
    truth["train_images"] = train_records.size();
    truth["val_images"] = val_records.size();
  }
  write_text(dir / "ground_truth.json", truth.dump(2) + "\n");
  out << "wrote " << data.records.size() << " images from " << args.config.families
      << " families to " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------

struct SamplePairsArgs {
  std::string manifest, embeddings, out;
  std::size_t k = 5000;
  std::uint64_t seed = 0;
};

inline void sample_pairs(const SamplePairsArgs& args, std::ostream& out) {
  const auto data = load_dataset(args.manifest, args.embeddings);
  const auto pairs = sample_validation_pairs(data.index, args.k, args.seed);
  ensure_parent(args.out);
  write_pairs(pairs, args.out);
  out << "wrote " << pairs.positives() << " positive and " << pairs.negatives()
      << " negative pairs to " << args.out << "\n";
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
  std::string pairs, manifest, embeddings;
  std::optional<double> target_fpr, target_tpr;
  bool per_type = false;
  std::size_t min_count = kDefaultMinTypeCount;
  std::string out_policy = "policy.json";
  std::string out_roc = "roc.csv";
};

inline void calibrate(const CalibrateArgs& args, std::ostream& out) {
  if (args.target_fpr.has_value() == args.target_tpr.has_value()) {
    throw UsageError("give exactly one of --target-fpr or --target-tpr");
  }
  if (args.per_type && !args.target_fpr) throw UsageError("--per-type requires --target-fpr");
  const auto data = load_dataset(args.manifest, args.embeddings);
  const auto pairs = load_pairs(args.pairs);
  const auto scores = score_pairs(pairs, data.index, data.matrix);
  const auto roc = compute_roc(labeled_scores(pairs, scores));
  const double auc = compute_auc(labeled_scores(pairs, scores));

  ThresholdPolicy policy;
  if (args.target_fpr) {
    if (args.per_type) {
      policy = per_type_thresholds(typed_scores(pairs, scores), *args.target_fpr, args.min_count);
    } else {
      std::vector<double> negatives;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!pairs.pairs[i].kin) negatives.push_back(scores[i]);
      }
      policy.default_threshold = threshold_at_fpr(negatives, *args.target_fpr);
    }
  } else {
    std::vector<double> positives;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (pairs.pairs[i].kin) positives.push_back(scores[i]);
    }
    policy.default_threshold = threshold_at_tpr(positives, *args.target_tpr);
  }
  write_text(args.out_policy, policy.to_json().dump(2) + "\n");
  write_text(args.out_roc, serialize_roc(roc));

  out << "auc " << kinship::detail::format_fixed(auc, 6) << "\n";
  out << "default threshold " << kinship::detail::format_double(policy.default_threshold) << "\n";
  for (const auto& [type, threshold] : policy.per_type) {
    out << "  " << pad_right(std::string(kin_type_name(type)), 6)
        << kinship::detail::format_double(threshold) << "\n";
  }
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string pairs, manifest, embeddings, policy;
  std::string out_predictions = "predictions.csv";
  std::string out_report = "report.json";
};

inline std::string verification_table(const VerificationReport& report) {
  const auto keys = report.ordered_keys();
  std::string header, row, counts;
  for (const auto& key : keys) {
    header += pad_left(key, 8);
    row += pad_left(kinship::detail::format_fixed(report.accuracy_by_type.at(key), 2), 8);
    counts += pad_left(std::to_string(report.counts_by_type.at(key)), 8);
  }
  return pad_right("", 10) + header + pad_left("Average", 9) + "\n" + pad_right("accuracy", 10) +
         row + pad_left(kinship::detail::format_fixed(report.average_accuracy, 2), 9) + "\n" +
         pad_right("pairs", 10) + counts + "\n";
}

inline void verify(const VerifyArgs& args, std::ostream& out) {
  const auto data = load_dataset(args.manifest, args.embeddings);
  const auto pairs = load_pairs(args.pairs);
  const auto policy = ThresholdPolicy::from_json(
      nlohmann::json::parse(kinship::detail::read_file(args.policy), nullptr, false));
  const auto scores = score_pairs(pairs, data.index, data.matrix);
  const auto decisions = decide(pairs, scores, policy);
  const auto report = evaluate_verification(pairs, scores, policy);

  std::string csv = "image_a,image_b,label,kin_type,score,decision\n";
  for (std::size_t i = 0; i < pairs.pairs.size(); ++i) {
    const auto& p = pairs.pairs[i];
    csv += p.image_a + "," + p.image_b + "," + (p.kin ? "1" : "0") + "," +
           (p.kin_type ? std::string(kin_type_name(*p.kin_type)) : std::string()) + "," +
           kinship::detail::format_double(scores[i]) + "," + (decisions[i] ? "1" : "0") + "\n";
  }
  write_text(args.out_predictions, csv);
  write_text(args.out_report, report.to_json().dump(2) + "\n");
  out << verification_table(report);
}

// ---------------------------------------------------------------------------

struct FinetuneArgs {
  std::string manifest, embeddings, config, val_pairs, val_manifest;
  std::string out = "model.kmd";
  std::string log = "train_log.csv";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  bool print_config = false;
};

inline void finetune(const FinetuneArgs& args, std::ostream& out) {
  TrainConfig config;
  if (!args.config.empty()) {
    auto j = nlohmann::json::parse(kinship::detail::read_file(args.config), nullptr, false);
    if (j.is_discarded()) fail(ErrorKind::kParse, "train config is not valid JSON");
    config = TrainConfig::from_json(j);
  }
  if (args.epochs) config.epochs = *args.epochs;
  if (args.seed) config.seed = *args.seed;
  if (args.print_config) {
    out << config.to_json().dump(2) << "\n";
    return;
  }
  if (!args.seed) throw UsageError("--seed is required");
  if (args.manifest.empty() || args.embeddings.empty()) {
    throw UsageError("--manifest and --embeddings are required");
  }
  const auto data = load_dataset(args.manifest, args.embeddings);

  std::optional<PairSet> val_pairs;
  std::optional<DatasetIndex> val_index;
  std::optional<Validation> validation;
  if (!args.val_pairs.empty()) {
    val_pairs = load_pairs(args.val_pairs);
    if (!args.val_manifest.empty()) {
      val_index = build_index(load_manifest(args.val_manifest), data.matrix);
    }
    validation.emplace(Validation{*val_pairs, val_index ? *val_index : data.index});
  } else if (!args.val_manifest.empty()) {
    throw UsageError("--val-manifest requires --val-pairs");
  }

  const auto result = train(data.index, data.matrix, config, validation);
  ensure_parent(args.out);
  write_model(result.model, args.out);
  write_text(args.log, result.log.to_csv());

  if (result.log.initial_val_auc) {
    out << "pretrained val_auc " << kinship::detail::format_fixed(*result.log.initial_val_auc, 6)
        << "\n";
  }
  out << pad_left("epoch", 6) << pad_left("loss", 12) << pad_left("val_auc", 10) << "\n";
  for (std::size_t e = 0; e < result.log.epoch_loss.size(); ++e) {
    out << pad_left(std::to_string(e + 1), 6)
        << pad_left(kinship::detail::format_fixed(result.log.epoch_loss[e], 6), 12)
        << pad_left(e < result.log.val_auc.size()
                        ? kinship::detail::format_fixed(result.log.val_auc[e], 6)
                        : std::string("-"),
                    10)
        << "\n";
  }
  out << "selected epoch " << result.log.selected_epoch << "\n";
}

// ---------------------------------------------------------------------------

struct ApplyArgs {
  std::string model, embeddings, out;
};

inline void apply(const ApplyArgs& args, std::ostream& out) {
  const auto model = load_model(args.model);
  const auto matrix = load_embeddings(args.embeddings);
  const auto mapped = apply_adapter(model, matrix);
  ensure_parent(args.out);
  write_embeddings(mapped, args.out);
  out << "wrote " << mapped.rows() << " x " << mapped.dim() << " embeddings to " << args.out << "\n";
}

// ---------------------------------------------------------------------------

struct RetrieveArgs {
  std::string probes, gallery, embeddings, probe_manifest;
  std::string policy = "mean-embedding";
  std::size_t k = 5;
  std::string out_dir = "retrieval";
};

inline void retrieve(const RetrieveArgs& args, std::ostream& out) {
  const auto policy = parse_aggregation(args.policy);
  const auto matrix = load_embeddings(args.embeddings);
  const auto gallery_records = load_manifest(args.gallery);
  const auto gallery = gallery_from_records(gallery_records, matrix);
  const auto probe_index = build_index(
      args.probe_manifest.empty() ? gallery_records : load_manifest(args.probe_manifest), matrix);
  const auto probes = load_probes(args.probes, probe_index);
  const auto report = run_retrieval(probes, gallery, matrix, policy, args.k);

  const fs::path dir(args.out_dir);
  fs::create_directories(dir / "rankings");
  for (const auto& probe : report.probes) {
    write_text(dir / "rankings" / (probe.person_id + ".csv"), serialize_ranking(probe, gallery));
  }
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  out << pad_right("method", 16) << pad_left("mAP", 8) << pad_left("Rank@" + std::to_string(args.k), 9)
      << "\n"
      << pad_right(std::string(aggregation_name(policy)), 16)
      << pad_left(kinship::detail::format_fixed(report.mean_average_precision, 3), 8)
      << pad_left(kinship::detail::format_fixed(report.rank_at_k, 2), 9) << "\n";
}

}  // namespace detail

/// Entry point shared by the `kinship` binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Kinship verification and family retrieval on face embeddings", "kinship"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  detail::GenSyntheticArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Generate a family-structured embedding dataset");
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.config.seed, "Generator seed")->required();
  gen_cmd->add_option("--families", gen.config.families, "Number of families");
  gen_cmd->add_option("--persons-min", gen.config.persons_min, "Minimum persons per family");
  gen_cmd->add_option("--persons-max", gen.config.persons_max, "Maximum persons per family");
  gen_cmd->add_option("--images-min", gen.config.images_min, "Minimum images per person");
  gen_cmd->add_option("--images-max", gen.config.images_max, "Maximum images per person");
  gen_cmd->add_option("--dim", gen.config.dim, "Embedding dimension");
  gen_cmd->add_option("--signal-dims", gen.config.signal_dims, "Identity-bearing dimensions");
  gen_cmd->add_option("--family-spread", gen.config.family_spread, "Std-dev of family centers");
  gen_cmd->add_option("--person-spread", gen.config.person_spread, "Std-dev of person offsets");
  gen_cmd->add_option("--image-noise", gen.config.image_noise, "Std-dev of per-image noise");
  gen_cmd->add_option("--distractor-noise", gen.config.distractor_noise,
                      "Std-dev of the non-identity dimensions");
  gen_cmd->add_option("--holdout-families", gen.holdout_families,
                      "Also write train/val manifests holding out this many families");

  detail::SamplePairsArgs sample;
  auto* sample_cmd = app.add_subcommand("sample-pairs", "Sample balanced validation pairs");
  sample_cmd->add_option("--manifest", sample.manifest, "Image manifest (JSONL)")->required();
  sample_cmd->add_option("--embeddings", sample.embeddings, "KEB1 embeddings")->required();
  sample_cmd->add_option("--k", sample.k, "Positive pairs (and as many negatives)");
  sample_cmd->add_option("--seed", sample.seed, "Sampler seed")->required();
  sample_cmd->add_option("--out", sample.out, "Output pairs CSV")->required();

  detail::CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Pick a decision threshold and export the ROC");
  cal_cmd->add_option("--pairs", cal.pairs, "Labeled pairs CSV")->required();
  cal_cmd->add_option("--manifest", cal.manifest, "Image manifest (JSONL)")->required();
  cal_cmd->add_option("--embeddings", cal.embeddings, "KEB1 embeddings")->required();
  auto* fpr_opt = cal_cmd->add_option("--target-fpr", cal.target_fpr, "Target false positive rate")
                      ->check(CLI::Range(0.0, 1.0));
  auto* tpr_opt = cal_cmd->add_option("--target-tpr", cal.target_tpr, "Target true positive rate")
                      ->check(CLI::Range(0.0, 1.0));
  fpr_opt->excludes(tpr_opt);
  cal_cmd->add_flag("--per-type", cal.per_type, "Separate thresholds per kin type");
  cal_cmd->add_option("--min-count", cal.min_count, "Negatives needed for a per-type threshold");
  cal_cmd->add_option("--out-policy", cal.out_policy, "Threshold policy JSON");
  cal_cmd->add_option("--out-roc", cal.out_roc, "ROC curve CSV");

  detail::VerifyArgs ver;
  auto* ver_cmd = app.add_subcommand("verify", "Binarize pair scores and report accuracy");
  ver_cmd->add_option("--pairs", ver.pairs, "Labeled pairs CSV")->required();
  ver_cmd->add_option("--manifest", ver.manifest, "Image manifest (JSONL)")->required();
  ver_cmd->add_option("--embeddings", ver.embeddings, "KEB1 embeddings")->required();
  ver_cmd->add_option("--policy", ver.policy, "Threshold policy JSON")->required();
  ver_cmd->add_option("--out-predictions", ver.out_predictions, "Per-pair decisions CSV");
  ver_cmd->add_option("--out-report", ver.out_report, "Accuracy report JSON");

  detail::FinetuneArgs ft;
  auto* ft_cmd = app.add_subcommand("finetune", "Train the adapter with a family classification head");
  ft_cmd->add_option("--manifest", ft.manifest, "Training manifest (JSONL)");
  ft_cmd->add_option("--embeddings", ft.embeddings, "KEB1 embeddings");
  ft_cmd->add_option("--config", ft.config, "Train config JSON (missing keys use defaults)");
  ft_cmd->add_option("--val-pairs", ft.val_pairs, "Validation pairs CSV for per-epoch AUC");
  ft_cmd->add_option("--val-manifest", ft.val_manifest,
                     "Manifest resolving validation images (default: --manifest)");
  ft_cmd->add_option("--out", ft.out, "Output KMD1 model");
  ft_cmd->add_option("--log", ft.log, "Output training log CSV");
  ft_cmd->add_option("--seed", ft.seed, "Training seed (required unless --print-config)");
  ft_cmd->add_option("--epochs", ft.epochs, "Override epoch count")->check(CLI::PositiveNumber);
  ft_cmd->add_flag("--print-config", ft.print_config, "Print the effective config and exit");

  detail::ApplyArgs ap;
  auto* ap_cmd = app.add_subcommand("apply", "Map embeddings through a trained adapter");
  ap_cmd->add_option("--model", ap.model, "KMD1 model")->required();
  ap_cmd->add_option("--embeddings", ap.embeddings, "Input KEB1 embeddings")->required();
  ap_cmd->add_option("--out", ap.out, "Output KEB1 embeddings")->required();

  detail::RetrieveArgs ret;
  auto* ret_cmd = app.add_subcommand("retrieve", "Rank gallery images for each probe subject");
  ret_cmd->add_option("--probes", ret.probes, "Probes JSONL")->required();
  ret_cmd->add_option("--gallery", ret.gallery, "Gallery manifest (JSONL)")->required();
  ret_cmd->add_option("--embeddings", ret.embeddings, "KEB1 embeddings")->required();
  ret_cmd->add_option("--probe-manifest", ret.probe_manifest,
                      "Manifest resolving probe images (default: --gallery)");
  ret_cmd->add_option("--policy", ret.policy, "Aggregation: mean-embedding, mean or max")
      ->check(CLI::IsMember({"mean-embedding", "mean", "max"}));
  ret_cmd->add_option("--k", ret.k, "Cutoff for rank@K")->check(CLI::PositiveNumber);
  ret_cmd->add_option("--out-dir", ret.out_dir, "Directory for rankings/ and report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: usage: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*gen_cmd) detail::gen_synthetic(gen, out);
    else if (*sample_cmd) detail::sample_pairs(sample, out);
    else if (*cal_cmd) detail::calibrate(cal, out);
    else if (*ver_cmd) detail::verify(ver, out);
    else if (*ft_cmd) detail::finetune(ft, out);
    else if (*ap_cmd) detail::apply(ap, out);
    else if (*ret_cmd) detail::retrieve(ret, out);
  } catch (const UsageError& e) {
    err << "error: usage: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}

}  // namespace kinship::cli
