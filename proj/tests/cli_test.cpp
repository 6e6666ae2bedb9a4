#include "cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "agnet/training.hpp"
#include "test_support.hpp"

namespace agnet::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Settings for a 16x16 synthetic set and a matching two-block model.
std::vector<std::string> small_run(std::vector<std::string> args) {
  for (const char* kv : {"synth.image_side=16", "synth.num_identities=4", "synth.images_per_identity=3",
                         "model.backbone_channels=4,8", "model.embedding_dim=8", "model.mask_dim=6"}) {
    args.push_back("--set");
    args.push_back(kv);
  }
  return args;
}

TEST(CliTest, UnknownCommandIsUsageError) {
  const Result r = invoke({"bogus"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("commands:"), std::string::npos) << r.err;
  EXPECT_EQ(invoke({}).code, kExitUsage);
}

TEST(CliTest, HelpSucceeds) {
  EXPECT_EQ(invoke({"--help"}).code, kExitOk);
  EXPECT_EQ(invoke({"train", "--help"}).code, kExitOk);
}

TEST(CliTest, BadFlagIsUsageError) { EXPECT_EQ(invoke({"synth", "--no-such-flag"}).code, kExitUsage); }

TEST(CliTest, UnknownConfigKeyFailsWithSuggestion) {
  testing::ScratchDir dir("cli_key");
  const Result r = invoke({"synth", "--out", (dir / "run").string(), "--set", "als.thetaa=0.2"});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("did you mean 'als.theta'"), std::string::npos) << r.err;
}

TEST(CliTest, NonEmptyOutputDirectoryIsRefused) {
  testing::ScratchDir dir("cli_nonempty");
  { std::ofstream(dir / "keep.txt") << "x"; }
  EXPECT_EQ(invoke({"synth", "--out", dir.path().string()}).code, kExitFailure);
  EXPECT_TRUE(fs::exists(dir / "keep.txt"));
}

TEST(CliTest, SynthWritesManifestAndResolvedConfig) {
  testing::ScratchDir dir("cli_synth");
  const fs::path run_dir = dir / "synth";
  const Result r = invoke({"synth", "--out", run_dir.string(), "--seed", "7", "--set",
                           "synth.train_fraction=0.5"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(run_dir / "manifest.csv"));
  EXPECT_TRUE(fs::exists(run_dir / "train.csv"));
  EXPECT_TRUE(fs::exists(run_dir / "test.csv"));
  std::ifstream resolved(run_dir / kResolvedConfigFile);
  std::stringstream text;
  text << resolved.rdbuf();
  EXPECT_NE(text.str().find("seed = 7"), std::string::npos);
  EXPECT_NE(text.str().find("synth.train_fraction = 0.5"), std::string::npos);
}

TEST(CliTest, SynthTrainExtractEvalPipeline) {
  testing::ScratchDir dir("cli_pipeline");
  const fs::path data = dir / "data";
  ASSERT_EQ(invoke(small_run({"synth", "--out", data.string()})).code, kExitOk);

  const fs::path train_dir = dir / "train";
  const Result t = invoke(small_run({"train", "--out", train_dir.string(), "--set",
                                     "data.manifest=" + (data / "manifest.csv").string(), "--set",
                                     "train.epochs=2", "--set", "train.lr_schedule=2:0.01", "--set",
                                     "train.batch_size=4", "--set", "train.pairs_per_epoch=8", "--set",
                                     "train.checkpoint_every=1"}));
  ASSERT_EQ(t.code, kExitOk) << t.err;
  EXPECT_TRUE(fs::exists(train_dir / "checkpoints/ckpt_e1.agnc"));
  EXPECT_TRUE(fs::exists(train_dir / "checkpoints/ckpt_e2.agnc"));
  EXPECT_TRUE(fs::exists(train_dir / "checkpoints/ckpt_final.agnc"));
  EXPECT_EQ(read_train_log(train_dir / "train_log.csv").size(), 4u);

  const fs::path extract_dir = dir / "extract";
  const Result x = invoke(small_run({"extract", "--out", extract_dir.string(), "--set",
                                     "data.manifest=" + (data / "manifest.csv").string(), "--set",
                                     "extract.checkpoint=" + (train_dir / "checkpoints/ckpt_final.agnc").string()}));
  ASSERT_EQ(x.code, kExitOk) << x.err;
  ASSERT_TRUE(fs::exists(extract_dir / "features.agnf"));

  const fs::path eval_dir = dir / "eval";
  const Result e = invoke({"eval", "--out", eval_dir.string(), "--set",
                           "eval.features=" + (extract_dir / "features.agnf").string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_NE(e.out.find("mAP"), std::string::npos);
  EXPECT_TRUE(fs::exists(eval_dir / "report.txt"));
  EXPECT_TRUE(fs::exists(eval_dir / "report.csv"));
}

TEST(CliTest, UntrainedModelStillEvaluates) {
  testing::ScratchDir dir("cli_untrained");
  const fs::path data = dir / "data";
  ASSERT_EQ(invoke(small_run({"synth", "--out", data.string()})).code, kExitOk);
  const Result x = invoke(small_run({"extract", "--out", (dir / "x").string(), "--set",
                                     "data.manifest=" + (data / "manifest.csv").string()}));
  ASSERT_EQ(x.code, kExitOk) << x.err;
  const Result e = invoke({"eval", "--out", (dir / "e").string(), "--set",
                           "eval.features=" + (dir / "x/features.agnf").string()});
  EXPECT_EQ(e.code, kExitOk) << e.err;
}

TEST(CliTest, ImageSizeMismatchIsConfigError) {
  testing::ScratchDir dir("cli_mismatch");
  const fs::path data = dir / "data";
  ASSERT_EQ(invoke(small_run({"synth", "--out", data.string()})).code, kExitOk);
  const Result x = invoke({"extract", "--out", (dir / "x").string(), "--set",
                           "data.manifest=" + (data / "manifest.csv").string()});
  EXPECT_EQ(x.code, kExitFailure);
  EXPECT_NE(x.err.find("model expects 32x32"), std::string::npos) << x.err;
}

TEST(CliTest, GradcheckPasses) {
  testing::ScratchDir dir("cli_gradcheck");
  const Result r = invoke({"gradcheck", "--out", (dir / "g").string(), "--set", "gradcheck.instances=20"});
  EXPECT_EQ(r.code, kExitOk) << r.out << r.err;
  EXPECT_TRUE(fs::exists(dir / "g/gradcheck.txt"));
}

}  // namespace
}  // namespace agnet::cli
