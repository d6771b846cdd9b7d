#include "doctest.h"

#include <cstdlib>
#include <fstream>

#include "support.hpp"
#include "tgavc/cli.hpp"
#include "tgavc/errors.hpp"
#include "tgavc/training.hpp"

using namespace tgavc;

namespace {

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "tgavc");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("config layers: file < env < flag") {
  const auto dir = testing::scratch_dir("cfg");
  {
    std::ofstream f(dir / "c.json");
    f << R"({"train": {"lr_a": 0.01, "batch_size": 3}, "model": {"d_model": 32}, "seed": 5})";
  }
  const auto r = cli::resolve_config(4, dir / "c.json", {{"TGAVC_TRAIN__LR_A", "0.02"}, {"TGAVC_SEED", "6"}},
                                     {"train.lr_a=0.03", "model.n_heads=2"});
  CHECK(r.train.lr_a == 0.03);
  CHECK(r.train.batch_size == 3);
  CHECK(r.model.d_model == 32);
  CHECK(r.model.n_heads == 2);
  CHECK(r.model.num_speakers == 4);
  CHECK(r.seed == 6u);
  CHECK(r.origin.at("train.lr_a") == "flag");
  CHECK(r.origin.at("train.batch_size") == "file");
  CHECK(r.origin.at("seed") == "env");

  const auto env_only = cli::resolve_config(4, dir / "c.json", {{"TGAVC_TRAIN__LR_A", "0.02"}}, {});
  CHECK(env_only.train.lr_a == 0.02);
  CHECK(env_only.seed == 5u);
  CHECK_FALSE(cli::resolve_config(4, std::nullopt, {}, {}).seed.has_value());
}

TEST_CASE("unknown or invalid keys are rejected at every layer") {
  const auto dir = testing::scratch_dir("cfgbad");
  {
    std::ofstream f(dir / "c.json");
    f << R"({"train": {"lr": 0.01}})";
  }
  CHECK_THROWS_AS(cli::resolve_config(4, dir / "c.json", {}, {}), ConfigError);
  CHECK_THROWS_AS(cli::resolve_config(4, std::nullopt, {{"TGAVC_TRAIN__NOPE", "1"}}, {}), ConfigError);
  CHECK_THROWS_AS(cli::resolve_config(4, std::nullopt, {}, {"model.d_modle=3"}), ConfigError);
  CHECK_THROWS_AS(cli::resolve_config(4, std::nullopt, {}, {"train.batch_size=0"}), ConfigError);
  CHECK_THROWS_AS(cli::resolve_config(4, std::nullopt, {}, {"nodot"}), ConfigError);
}

TEST_CASE("exit codes") {
  const auto dir = testing::scratch_dir("exits");
  CHECK(invoke({"--help"}) == cli::kExitOk);
  CHECK(invoke({"bogus"}) == cli::kExitValidation);
  CHECK(invoke({"train", "--corpus", (dir / "none.jsonl").string(), "--out", (dir / "o").string(), "--seed", "1"}) == cli::kExitRuntime);
  std::ofstream(dir / "empty.jsonl");
  CHECK(invoke({"plots", "--metrics", (dir / "empty.jsonl").string(), "--out", (dir / "p").string()}) == cli::kExitValidation);
}

TEST_CASE("toy corpus to checkpoint through the command line") {
  const auto dir = testing::scratch_dir("e2e");
  REQUIRE(invoke({"make-toy-corpus", "--out", (dir / "toy").string(), "--speakers", "2", "--utterances", "3", "--seed", "1"}) == 0);
  REQUIRE(std::filesystem::exists(dir / "toy" / "manifest.jsonl"));
  {
    std::ofstream f(dir / "tiny.json");
    f << R"({"model": {"d_model": 8, "d_style": 4, "n_heads": 2, "n_enc_blocks": 1, "n_dec_blocks": 1,
                        "d_ff": 8, "style_hidden": 8, "classifier_hidden": 8},
             "train": {"batch_size": 2}})";
  }
  const std::string manifest = (dir / "toy" / "manifest.jsonl").string();
  // training without a seed is refused
  CHECK(invoke({"train", "--corpus", manifest, "--out", (dir / "noseed").string(), "--steps", "1"}) == cli::kExitValidation);
  CHECK(invoke({"train", "--regime", "tgavc", "--corpus", manifest, "--out", (dir / "run").string(), "--config",
                (dir / "tiny.json").string(), "--seed", "3", "--steps", "2"}) == 0);
  REQUIRE(std::filesystem::exists(dir / "run" / "tgavc.ckpt"));
  CHECK(std::filesystem::exists(dir / "run" / "resolved_config.json"));
  CHECK(training::load_checkpoint(dir / "run" / "tgavc.ckpt").step == 2);
  CHECK(invoke({"train", "--regime", "tgavc", "--corpus", manifest, "--out", (dir / "run").string(), "--config",
                (dir / "tiny.json").string(), "--seed", "3", "--steps", "3", "--resume", (dir / "run" / "tgavc.ckpt").string()}) == 0);
  CHECK(training::load_checkpoint(dir / "run" / "tgavc.ckpt").step == 3);
  CHECK(invoke({"plots", "--metrics", (dir / "run" / "metrics.jsonl").string(), "--out", (dir / "plots").string()}) == 0);
  CHECK(std::filesystem::exists(dir / "plots" / "loss_curves.png"));
}
