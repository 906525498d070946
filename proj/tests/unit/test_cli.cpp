#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "sdtt/bench.hpp"
#include "sdtt/checkpoint.hpp"
#include "sdtt/corpus.hpp"
#include "sdtt/run_config.hpp"
#include "sdtt/train.hpp"
#include "table_denoiser.hpp"

namespace fs = std::filesystem;
using namespace sdtt;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + SDTT_CLI_PATH + "\" " + args + " >>\"" +
                          log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

/// Corpus plus a one-layer micro model, shared by the tests below.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ::unsetenv("SDTT_OUT");
    root_ = new fs::path(sdtt::testing::scratch_dir("cli"));
    const auto log = *root_ / "setup.log";
    ASSERT_EQ(run_cli("corpus --toy 8000 --seed 1 --out " + (*root_ / "corpus").string(), log), 0);
    ASSERT_EQ(run_cli("train --corpus " + (*root_ / "corpus/corpus.txt").string() +
                          " --preset micro --layers 1 --steps 4 --batch 4 --warmup 2 --lr 1e-3"
                          " --log-every 0 --seed 2 --out " + (*root_ / "model").string(),
                      log),
              0);
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }

  static fs::path root() { return *root_; }
  static std::string corpus() { return (root() / "corpus/corpus.txt").string(); }
  static std::string ckpt() { return (root() / "model/checkpoint.bin").string(); }
  static fs::path log() { return root() / "test.log"; }
  static std::string out(const std::string& name) { return " --out " + (root() / name).string(); }

 private:
  static fs::path* root_;
};

fs::path* CliTest::root_ = nullptr;

}  // namespace

TEST_F(CliTest, HelpAndVersionExitZero) {
  EXPECT_EQ(run_cli("--help", log()), 0);
  EXPECT_EQ(run_cli("--version", log()), 0);
  EXPECT_EQ(run_cli("train --help", log()), 0);
  EXPECT_EQ(run_cli("", log()), 2);
}

TEST_F(CliTest, MissingInputsAreUsageErrors) {
  EXPECT_EQ(run_cli("train --seed 1 --corpus " + (root() / "nope.txt").string() + out("x1"), log()),
            2);
  EXPECT_EQ(run_cli("train --seed 1" + out("x2"), log()), 2);
  EXPECT_EQ(run_cli("train --corpus " + corpus() + out("x3"), log()), 2);
  EXPECT_EQ(run_cli("corpus --seed 1" + out("x4"), log()), 2);
}

TEST_F(CliTest, ZeroStepTrainingWritesTheInitialisation) {
  ASSERT_EQ(run_cli("train --corpus " + corpus() +
                        " --preset micro --layers 1 --steps 0 --seed 9 --ema-decay 0.99" +
                        out("init"),
                    log()),
            0);
  const auto state = load_checkpoint(root() / "init/checkpoint.bin");
  const auto vocab = build_vocab(read_text_file(corpus()), TokenizerMode::Char);
  auto cfg = model_preset("micro", vocab.size(), false);
  cfg.n_layers = 1;
  EXPECT_EQ(state.config, cfg);
  const auto ref = init_model(cfg, 9, 0.99);
  EXPECT_EQ(params_hash(state.params), params_hash(ref.params));
  EXPECT_EQ(params_hash(state.ema), params_hash(ref.ema));
  EXPECT_EQ(state.step, 0);
  EXPECT_TRUE(lines_of(root() / "init/metrics.jsonl").empty());
}

TEST_F(CliTest, ManifestRecordsTheRun) {
  const auto manifest = parse_manifest(read_text_file(root() / "model/manifest.json"));
  EXPECT_EQ(manifest.command, "train");
  EXPECT_EQ(manifest.seed, 2u);
  EXPECT_EQ(manifest.code_version, kCodeVersion);
  EXPECT_EQ(manifest.config_hash, config_hash(manifest.config));
  for (const char* a : {"dataset.bin", "metrics.jsonl", "checkpoint.bin"}) {
    EXPECT_NE(std::find(manifest.artifacts.begin(), manifest.artifacts.end(), a),
              manifest.artifacts.end())
        << a;
  }
  const auto metrics = lines_of(root() / "model/metrics.jsonl");
  ASSERT_EQ(metrics.size(), 4u);
  const auto first = nlohmann::json::parse(metrics.front());
  EXPECT_EQ(first.at("step"), 1);
  EXPECT_FALSE(first.contains("wall_ms"));
}

TEST_F(CliTest, DistillWritesOneCheckpointPerRound) {
  ASSERT_EQ(run_cli("distill --teacher " + ckpt() +
                        " --rounds 7 --base-steps 256 --teacher-steps 2 --iters 1 --batch 2"
                        " --warmup 1 --lr 1e-4 --log-every 0 --seed 3" + out("distill"),
                    log()),
            0);
  const auto rounds = lines_of(root() / "distill/rounds.jsonl");
  ASSERT_EQ(rounds.size(), 7u);
  EXPECT_EQ(lines_of(root() / "distill/metrics.jsonl").size(), 7u);
  int expected = 128;
  for (int j = 1; j <= 7; ++j) {
    const auto rec = nlohmann::json::parse(rounds[static_cast<std::size_t>(j - 1)]);
    EXPECT_EQ(rec.at("round"), j);
    EXPECT_EQ(rec.at("nominal_steps"), expected);
    expected /= 2;
    const auto state =
        load_checkpoint(root() / ("distill/round_" + std::to_string(j) + "/checkpoint.bin"));
    EXPECT_EQ(state.round, j);
  }
}

TEST_F(CliTest, EveryDivergenceNameIsAccepted) {
  for (const std::string d : {"kld", "tvd", "mse", "chi2"}) {
    EXPECT_EQ(run_cli("distill --teacher " + ckpt() + " --divergence " + d +
                          " --rounds 1 --base-steps 4 --iters 1 --batch 2 --warmup 1"
                          " --log-every 0 --seed 3" + out("div_" + d),
                      log()),
              0)
        << d;
  }
  EXPECT_EQ(run_cli("distill --teacher " + ckpt() +
                        " --divergence js --rounds 1 --iters 1 --seed 3" + out("div_js"),
                    log()),
            2);
}

TEST_F(CliTest, CorruptCheckpointIsDataError) {
  const auto bad = root() / "bad.bin";
  std::string bytes = read_text_file(ckpt());
  bytes.resize(bytes.size() / 2);
  write_file(bad, bytes);
  EXPECT_EQ(run_cli("sample --ckpt " + bad.string() + " --dataset " +
                        (root() / "model/dataset.bin").string() + " --seed 1" + out("bad"),
                    log()),
            3);
  EXPECT_EQ(run_cli("inspect " + bad.string(), log()), 3);
  EXPECT_EQ(run_cli("inspect " + ckpt(), log()), 0);
}

TEST_F(CliTest, SampleWritesOneRecordPerRow) {
  ASSERT_EQ(run_cli("sample --ckpt " + ckpt() + " --n 5 --batch 2 --steps 4 --seed 4" +
                        out("sample"),
                    log()),
            0);
  const auto rows = lines_of(root() / "sample/samples.jsonl");
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& r : rows) {
    const auto j = nlohmann::json::parse(r);
    EXPECT_EQ(j.at("num_steps"), 4);
    EXPECT_EQ(j.at("seed"), 4);
    EXPECT_EQ(j.at("text").get<std::string>().find("[MASK]"), std::string::npos);
  }
}

TEST_F(CliTest, ConfigFileWithFlagOverride) {
  const auto cfg = root() / "sample.ini";
  write_file(cfg, "[sample]\nn = 3\nsteps = 2\n");
  ASSERT_EQ(run_cli("sample --config " + cfg.string() + " --ckpt " + ckpt() + " --seed 1" +
                        out("cfg_a"),
                    log()),
            0);
  EXPECT_EQ(lines_of(root() / "cfg_a/samples.jsonl").size(), 3u);
  ASSERT_EQ(run_cli("sample --config " + cfg.string() + " --ckpt " + ckpt() + " --seed 1 --n 2" +
                        out("cfg_b"),
                    log()),
            0);
  EXPECT_EQ(lines_of(root() / "cfg_b/samples.jsonl").size(), 2u);
  // A run's saved config replays it.
  ASSERT_EQ(run_cli("sample --config " + (root() / "cfg_a/config.ini").string() + out("cfg_c"),
                    log()),
            0);
  EXPECT_EQ(read_text_file(root() / "cfg_c/samples.jsonl"),
            read_text_file(root() / "cfg_a/samples.jsonl"));
}

TEST_F(CliTest, EvalArgumentChecks) {
  EXPECT_EQ(run_cli("eval --ckpt " + ckpt() + " --metric self-bleu --continuations 1 --seed 1" +
                        out("e1"),
                    log()),
            2);
  EXPECT_EQ(run_cli("eval --ckpt " + ckpt() + " --metric gen-ppl --seed 1" + out("e2"), log()), 2);
  EXPECT_EQ(run_cli("eval --ckpt " + ckpt() + " --metric bogus --seed 1" + out("e3"), log()), 2);
  ASSERT_EQ(run_cli("eval --ckpt " + ckpt() + " --metric self-bleu,suffix --steps 2"
                        " --n-prompts 4 --continuations 2 --cloze-items 8 --seed 1" + out("e4"),
                    log()),
            0);
  const auto reports = lines_of(root() / "e4/eval.jsonl");
  ASSERT_EQ(reports.size(), 3u);
  EXPECT_EQ(nlohmann::json::parse(reports[0]).at("metric"), "self_bleu");
  const auto csv = read_text_file(root() / "e4/summary.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "round,num_steps,metric,value");
}

TEST_F(CliTest, BenchReportsEveryStepCount) {
  ASSERT_EQ(run_cli("bench --ckpt " + ckpt() +
                        " --steps 2,4 --gen-length 8 --batch 1 --runs 3 --warmup 0 --seed 1" +
                        out("bench"),
                    log()),
            0);
  const auto rows = parse_bench_csv(read_text_file(root() / "bench/bench.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].num_steps, 2);
  EXPECT_EQ(rows[1].num_steps, 4);
  EXPECT_EQ(rows[2].kind, "ar_cached");
  EXPECT_EQ(rows[2].forward_passes, 8);
  EXPECT_EQ(run_cli("bench --ckpt " + ckpt() + " --runs 2 --seed 1" + out("bench2"), log()), 2);
}

TEST_F(CliTest, LockedOutputDirectoryIsRejected) {
  const auto dir = root() / "locked";
  fs::create_directories(dir);
  {
    DirectoryLock lock(dir);
    EXPECT_EQ(run_cli("sample --ckpt " + ckpt() + " --n 1 --steps 2 --seed 1 --out " + dir.string(),
                      log()),
              2);
  }
  EXPECT_EQ(run_cli("sample --ckpt " + ckpt() + " --n 1 --steps 2 --seed 1 --out " + dir.string(),
                    log()),
            0);
}

TEST_F(CliTest, RerunIsByteIdentical) {
  for (const char* name : {"rep_a", "rep_b"}) {
    ASSERT_EQ(run_cli("train --corpus " + corpus() +
                          " --preset micro --layers 1 --steps 3 --batch 2 --log-every 0 --seed 5" +
                          out(name),
                      log()),
              0);
  }
  EXPECT_EQ(read_text_file(root() / "rep_a/checkpoint.bin"),
            read_text_file(root() / "rep_b/checkpoint.bin"));
  EXPECT_EQ(read_text_file(root() / "rep_a/metrics.jsonl"),
            read_text_file(root() / "rep_b/metrics.jsonl"));
}
