#include <gtest/gtest.h>

#include <sstream>

#include "kinship/cli.hpp"
#include "test_util.hpp"

namespace kinship {
namespace {

using test::TempDir;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "kinship");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

int line_count(const std::string& text) {
  return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
}

/// Small generated dataset under `dir`/data.
std::string gen(const TempDir& dir, std::vector<std::string> extra = {}) {
  const std::string data = (dir / "data").string();
  std::vector<std::string> args{"gen-synthetic", "--out-dir", data, "--seed", "42", "--families", "20", "--dim", "16"};
  args.insert(args.end(), extra.begin(), extra.end());
  const auto r = run_cli(args);
  EXPECT_EQ(r.code, 0) << r.err;
  return data;
}

TEST(Cli, HelpExitsZeroForEveryCommand) {
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  for (const char* cmd : {"gen-synthetic", "sample-pairs", "calibrate", "verify", "finetune", "apply", "retrieve"}) {
    const auto r = run_cli({cmd, "--help"});
    EXPECT_EQ(r.code, 0) << cmd;
    EXPECT_NE(r.out.find("--"), std::string::npos) << cmd;
  }
}

TEST(Cli, UsageErrorsExitOneWithSingleLine) {
  TempDir dir;
  for (const auto& args : std::vector<std::vector<std::string>>{
           {},
           {"no-such-command"},
           {"gen-synthetic", "--out-dir", (dir / "x").string()},
           {"sample-pairs", "--manifest", "m", "--embeddings", "e", "--seed", "1"},
           {"retrieve", "--probes", "p", "--gallery", "g", "--embeddings", "e", "--policy", "median"},
       }) {
    const auto r = run_cli(args);
    EXPECT_EQ(r.code, 1) << r.err;
    EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;
    EXPECT_EQ(line_count(r.err), 1) << r.err;
  }
}

TEST(Cli, DataErrorsExitTwo) {
  TempDir dir;
  const auto r = run_cli({"gen-synthetic", "--out-dir", (dir / "x").string(), "--seed", "1", "--families", "1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: InvalidConfig: ", 0), 0u) << r.err;
  const auto missing = run_cli({"apply", "--model", (dir / "nope.kmd").string(), "--embeddings", "e", "--out", "o"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_EQ(missing.err.rfind("error: IoError: ", 0), 0u) << missing.err;
}

TEST(Cli, GenSyntheticWritesFilesAndHoldout) {
  TempDir dir;
  const auto data = gen(dir, {"--holdout-families", "5"});
  const auto all = load_manifest(data + "/manifest.jsonl");
  const auto train = load_manifest(data + "/train_manifest.jsonl");
  const auto val = load_manifest(data + "/val_manifest.jsonl");
  EXPECT_EQ(train.size() + val.size(), all.size());
  EXPECT_EQ(build_index(val, load_embeddings(data + "/embeddings.keb")).family_count, 5u);
  const auto truth = nlohmann::json::parse(detail::read_file(data + "/ground_truth.json"));
  EXPECT_EQ(truth["families"], 20);
}

TEST(Cli, SamplePairsDefaultKAndDeterminism) {
  TempDir dir;
  const auto data = gen(dir);
  auto sample = [&](const std::string& name, const std::string& seed) {
    const auto r = run_cli({"sample-pairs", "--manifest", data + "/manifest.jsonl", "--embeddings",
                            data + "/embeddings.keb", "--seed", seed, "--out", (dir / name).string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return dir.read(name);
  };
  const auto a = sample("a.csv", "7");
  EXPECT_EQ(line_count(a), 10001);
  EXPECT_EQ(a, sample("b.csv", "7"));
  EXPECT_NE(a, sample("c.csv", "8"));
}

TEST(Cli, SamplePairsZeroKWritesHeaderOnly) {
  TempDir dir;
  const auto data = gen(dir);
  const auto r = run_cli({"sample-pairs", "--manifest", data + "/manifest.jsonl", "--embeddings",
                          data + "/embeddings.keb", "--seed", "1", "--k", "0", "--out", (dir / "p.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(dir.read("p.csv"), "image_a,image_b,label,kin_type\n");
}

struct Scored {
  TempDir dir;
  std::string data, pairs;
  Scored() {
    data = gen(dir);
    pairs = (dir / "pairs.csv").string();
    const auto r = run_cli({"sample-pairs", "--manifest", data + "/manifest.jsonl", "--embeddings",
                            data + "/embeddings.keb", "--seed", "3", "--k", "300", "--out", pairs});
    EXPECT_EQ(r.code, 0) << r.err;
  }
  std::vector<std::string> inputs() const {
    return {"--pairs", pairs, "--manifest", data + "/manifest.jsonl", "--embeddings", data + "/embeddings.keb"};
  }
};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

TEST(Cli, CalibrateTargetsAreExclusive) {
  Scored s;
  EXPECT_EQ(run_cli(cat(cat({"calibrate"}, s.inputs()), {"--target-fpr", "0.1", "--target-tpr", "0.9"})).code, 1);
  EXPECT_EQ(run_cli(cat({"calibrate"}, s.inputs())).code, 1);
  EXPECT_EQ(run_cli(cat(cat({"calibrate"}, s.inputs()), {"--target-tpr", "0.9", "--per-type"})).code, 1);
}

TEST(Cli, CalibrateWritesPolicyAndRoc) {
  Scored s;
  const auto policy = (s.dir / "policy.json").string();
  const auto roc = (s.dir / "roc.csv").string();
  const auto r = run_cli(cat(cat({"calibrate"}, s.inputs()),
                             {"--target-fpr", "0.1", "--out-policy", policy, "--out-roc", roc}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("auc ", 0), 0u);
  const auto j = nlohmann::json::parse(detail::read_file(policy));
  EXPECT_TRUE(j.contains("default"));
  EXPECT_TRUE(j.contains("per_type"));
  const auto roc_text = detail::read_file(roc);
  EXPECT_EQ(roc_text.rfind("fpr,tpr,threshold\n", 0), 0u);
  EXPECT_NE(roc_text.find("# auc="), std::string::npos);
}

TEST(Cli, CalibratedPolicyMeetsTargetFpr) {
  Scored s;
  const auto policy_path = (s.dir / "policy.json").string();
  ASSERT_EQ(run_cli(cat(cat({"calibrate"}, s.inputs()), {"--target-fpr", "0.2", "--out-policy", policy_path,
                                                         "--out-roc", (s.dir / "roc.csv").string()}))
                .code,
            0);
  const auto policy = ThresholdPolicy::from_json(nlohmann::json::parse(detail::read_file(policy_path)));
  const auto pairs = load_pairs(s.pairs);
  const auto records = load_manifest(s.data + "/manifest.jsonl");
  const auto matrix = load_embeddings(s.data + "/embeddings.keb");
  const auto scores = score_pairs(pairs, build_index(records, matrix), matrix);
  std::size_t negatives = 0, accepted = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (pairs.pairs[i].kin) continue;
    ++negatives;
    accepted += scores[i] >= policy.default_threshold ? 1 : 0;
  }
  EXPECT_LE(static_cast<double>(accepted) / negatives, 0.2);
}

TEST(Cli, CalibratePerTypeKeysPresent) {
  TempDir dir;
  const auto data = gen(dir);
  const auto records = load_manifest(data + "/manifest.jsonl");
  PairSet set;
  for (std::size_t i = 0; i + 1 < records.size(); ++i) {
    set.pairs.push_back({records[i].image_id, records[i + 1].image_id, i % 2 == 0,
                         i % 3 == 0 ? KinType::MD : KinType::FS});
  }
  write_pairs(set, dir / "typed.csv");
  const auto policy = (dir / "policy.json").string();
  const auto r = run_cli({"calibrate", "--pairs", (dir / "typed.csv").string(), "--manifest",
                          data + "/manifest.jsonl", "--embeddings", data + "/embeddings.keb", "--target-fpr",
                          "0.2", "--per-type", "--min-count", "5", "--out-policy", policy});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(detail::read_file(policy));
  EXPECT_TRUE(j["per_type"].contains("MD"));
  EXPECT_TRUE(j["per_type"].contains("FS"));
}

TEST(Cli, VerifyAllKinAndNoneKin) {
  Scored s;
  auto verify = [&](const std::string& threshold) {
    const auto policy = s.dir.write("p" + threshold + ".json", "{\"default\":" + threshold + ",\"per_type\":{}}");
    const auto report = (s.dir / ("r" + threshold + ".json")).string();
    const auto preds = (s.dir / ("d" + threshold + ".csv")).string();
    const auto r = run_cli(cat(cat({"verify"}, s.inputs()), {"--policy", policy.string(), "--out-report", report,
                                                             "--out-predictions", preds}));
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(line_count(detail::read_file(preds)), 601);
    return nlohmann::json::parse(detail::read_file(report));
  };
  // Cosine never exceeds 1, so threshold 2 rejects every pair; -2 accepts every pair.
  EXPECT_EQ(verify("2")["average"], 0.5);
  EXPECT_EQ(verify("-2")["average"], 0.5);
  EXPECT_EQ(verify("-2")["counts"]["ALL"], 600);
}

TEST(Cli, VerifyTypedReportMatchesLibrary) {
  TempDir dir;
  const auto data = gen(dir);
  const auto records = load_manifest(data + "/manifest.jsonl");
  const auto matrix = load_embeddings(data + "/embeddings.keb");
  PairSet set;
  for (std::size_t i = 0; i + 3 < records.size(); i += 2) {
    set.pairs.push_back({records[i].image_id, records[i + 3].image_id, i % 4 == 0,
                         i % 6 == 0 ? std::optional<KinType>() : KinType::GMGS});
  }
  write_pairs(set, dir / "typed.csv");
  ThresholdPolicy policy{0.05, {{KinType::GMGS, -0.02}}};
  dir.write("policy.json", policy.to_json().dump());
  const auto r = run_cli({"verify", "--pairs", (dir / "typed.csv").string(), "--manifest", data + "/manifest.jsonl",
                          "--embeddings", data + "/embeddings.keb", "--policy", (dir / "policy.json").string(),
                          "--out-report", (dir / "report.json").string(), "--out-predictions",
                          (dir / "pred.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto expected =
      evaluate_verification(set, score_pairs(set, build_index(records, matrix), matrix), policy).to_json();
  EXPECT_EQ(nlohmann::json::parse(dir.read("report.json")), nlohmann::json::parse(expected.dump()));
  EXPECT_NE(r.out.find("GMGS"), std::string::npos);
}

TEST(Cli, FinetunePrintConfigMatchesDefaults) {
  const auto r = run_cli({"finetune", "--print-config"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::ordered_json::parse(r.out), TrainConfig{}.to_json());
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["base_lr"], 0.0001);
  EXPECT_EQ(j["batch_size"], 64);
  EXPECT_EQ(j["milestone_epochs"], nlohmann::json({8, 14, 25, 35, 40}));
  EXPECT_EQ(j["clip_norm"], 1.5);
}

TEST(Cli, FinetuneArgumentErrors) {
  EXPECT_EQ(run_cli({"finetune", "--epochs", "0", "--print-config"}).code, 1);
  EXPECT_EQ(run_cli({"finetune", "--manifest", "m", "--embeddings", "e"}).code, 1);
}

TEST(Cli, FinetuneIsReproducibleAndApplyRuns) {
  TempDir dir;
  const auto data = gen(dir);
  const auto config = dir.write("cfg.json",
                                R"({"base_lr":0.5,"batch_size":16,"epochs":3,"warmup_batches":2,)"
                                R"("cooldown_batches":2,"milestone_epochs":[2]})");
  auto train = [&](const std::string& name) {
    const auto r = run_cli({"finetune", "--manifest", data + "/manifest.jsonl", "--embeddings",
                            data + "/embeddings.keb", "--config", config.string(), "--seed", "5", "--out",
                            (dir / name).string(), "--log", (dir / (name + ".csv")).string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("selected epoch 3"), std::string::npos) << r.out;
    return dir.read(name);
  };
  const auto a = train("a.kmd");
  EXPECT_EQ(a, train("b.kmd"));
  EXPECT_EQ(line_count(dir.read("a.kmd.csv")), 4);

  const auto mapped = (dir / "mapped.keb").string();
  const auto r = run_cli({"apply", "--model", (dir / "a.kmd").string(), "--embeddings",
                          data + "/embeddings.keb", "--out", mapped});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = load_embeddings(mapped);
  EXPECT_EQ(m.rows(), load_embeddings(data + "/embeddings.keb").rows());
  for (std::size_t i = 0; i < m.rows(); ++i) EXPECT_NEAR(l2_norm(m.row(i)), 1.0, 1e-6);
}

TEST(Cli, ApplyIdentityModelPreservesEmbeddings) {
  TempDir dir;
  const auto data = gen(dir);
  write_model(AdapterModel::zeros(16, 16, 2, false), dir / "id.kmd");
  const auto r = run_cli({"apply", "--model", (dir / "id.kmd").string(), "--embeddings", data + "/embeddings.keb",
                          "--out", (dir / "out.keb").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(dir.read("out.keb"), detail::read_file(data + "/embeddings.keb"));
  write_model(AdapterModel::zeros(8, 8, 2, false), dir / "narrow.kmd");
  EXPECT_EQ(run_cli({"apply", "--model", (dir / "narrow.kmd").string(), "--embeddings",
                     data + "/embeddings.keb", "--out", (dir / "x.keb").string()})
                .code,
            2);
}

TEST(Cli, ApplyRandomModelMatchesLibrary) {
  TempDir dir;
  const auto data = gen(dir);
  Rng rng(3);
  auto model = AdapterModel::zeros(16, 6, 3, true);
  for (double& v : model.projection.data) v = rng.gaussian();
  write_model(model, dir / "m.kmd");
  ASSERT_EQ(run_cli({"apply", "--model", (dir / "m.kmd").string(), "--embeddings", data + "/embeddings.keb", "--out",
                     (dir / "out.keb").string()})
                .code,
            0);
  EXPECT_EQ(load_embeddings(dir / "out.keb"), apply_adapter(model, load_embeddings(data + "/embeddings.keb")));
}

TEST(Cli, RetrieveOneHotAndSingleImagePolicies) {
  TempDir dir;
  std::vector<ImageRecord> gallery;
  std::vector<float> values;
  std::string probes;
  for (int f = 0; f < 3; ++f) {
    const std::string fam = "F" + std::to_string(f);
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < 3; ++c) values.push_back(c == f ? 1.f + i : 0.f);
      gallery.push_back({fam + "_i" + std::to_string(i), fam + "_p" + std::to_string(i), fam,
                         static_cast<std::uint64_t>(f * 3 + i), true});
    }
    probes += "{\"person_id\":\"" + fam + "_p0\",\"family_id\":\"" + fam + "\",\"image_ids\":[\"" + fam + "_i0\"]}\n";
  }
  write_manifest(gallery, dir / "gallery.jsonl");
  write_embeddings(EmbeddingMatrix(3, values), dir / "e.keb");
  dir.write("probes.jsonl", probes);
  auto retrieve = [&](const std::string& policy) {
    const auto out = dir / policy;
    const auto r = run_cli({"retrieve", "--probes", (dir / "probes.jsonl").string(), "--gallery",
                            (dir / "gallery.jsonl").string(), "--embeddings", (dir / "e.keb").string(), "--policy",
                            policy, "--k", "1", "--out-dir", out.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    const auto report = nlohmann::json::parse(detail::read_file(out / "report.json"));
    EXPECT_EQ(report["mAP"], 1.0);
    EXPECT_EQ(report["rank_at_K"], 1.0);
    EXPECT_EQ(report["K"], 1);
    return detail::read_file(out / "rankings" / "F1_p0.csv");
  };
  EXPECT_EQ(retrieve("max"), retrieve("mean"));
  const auto ranking = retrieve("mean-embedding");
  EXPECT_EQ(ranking.substr(0, ranking.find('\n')), "rank,gallery_image_id,score");
  EXPECT_EQ(line_count(ranking), 10);
}

}  // namespace
}  // namespace kinship
