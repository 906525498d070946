#include <gtest/gtest.h>

#include <cstdlib>

#include "sdtt/corpus.hpp"
#include "sdtt/run_config.hpp"
#include "table_denoiser.hpp"

using namespace sdtt;

TEST(OutputDir, HonoursEnvironmentRoot) {
  ::unsetenv("SDTT_OUT");
  EXPECT_EQ(resolve_output_dir("runs/a"), std::filesystem::path("runs/a"));
  ::setenv("SDTT_OUT", "/tmp/root", 1);
  EXPECT_EQ(resolve_output_dir("runs/a"), std::filesystem::path("/tmp/root/runs/a"));
  EXPECT_EQ(resolve_output_dir("/abs/b"), std::filesystem::path("/abs/b"));
  ::unsetenv("SDTT_OUT");
}

TEST(DirectoryLock, SecondHolderIsRejected) {
  const auto dir = sdtt::testing::scratch_dir("lock") / "run";
  {
    DirectoryLock lock(dir);
    EXPECT_TRUE(std::filesystem::exists(dir / ".lock"));
    EXPECT_THROW(DirectoryLock{dir}, InputError);
  }
  EXPECT_FALSE(std::filesystem::exists(dir / ".lock"));
  EXPECT_NO_THROW(DirectoryLock{dir});
}

TEST(ConfigHash, IgnoresOutputLocation) {
  const std::string a = "seed = 3\nout = \"x\"\nsteps = 10\n";
  const std::string b = "seed = 3\nout = \"y\"\nsteps = 10\nconfig = \"c.ini\"\n";
  const std::string c = "seed = 4\nout = \"x\"\nsteps = 10\n";
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Manifest, RoundTrips) {
  RunManifest m;
  m.command = "train";
  m.config_hash = "0123456789abcdef";
  m.seed = 11;
  m.config = "seed = 11\n";
  m.artifacts = {"checkpoint.bin", "metrics.jsonl"};
  const auto text = manifest_json(m);
  const auto back = parse_manifest(text);
  EXPECT_EQ(back.command, "train");
  EXPECT_EQ(back.seed, 11u);
  EXPECT_EQ(back.code_version, kCodeVersion);
  EXPECT_EQ(back.artifacts, m.artifacts);
  EXPECT_THROW(parse_manifest("{}"), DataError);
  EXPECT_THROW(parse_manifest("not json"), DataError);

  const auto dir = sdtt::testing::scratch_dir("manifest");
  write_manifest(dir, m);
  EXPECT_EQ(read_text_file(dir / "manifest.json"), text);
}
