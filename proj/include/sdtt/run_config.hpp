#pragma once

// Run bookkeeping shared by the command-line subcommands: output directory
// resolution, exclusive directory locks and run manifests.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdtt/distill.hpp"
#include "sdtt/model.hpp"
#include "sdtt/train.hpp"

namespace sdtt {

inline constexpr const char* kCodeVersion = "0.3.0";

/// Typed view of the settings a run was launched with.
struct RunConfig {
  std::filesystem::path corpus;
  std::string preset = "tiny";
  std::string tokenizer = "char";
  std::string schedule = "linear";
  int layers = 0;  // 0 keeps the preset's depth
  bool causal = false;
  TrainOptions train{20000, 32, LrSchedule{6e-5, 500}, AdamConfig{}, 0};
  double ema_decay = 0.9999;
  RoundPlan plan;
  std::filesystem::path out;
  std::uint64_t seed = 0;
};

/// `out` itself when absolute or when SDTT_OUT is unset, else SDTT_OUT / out.
std::filesystem::path resolve_output_dir(const std::filesystem::path& out);

/// Holds `<dir>/.lock` for its lifetime. Throws InputError if another process
/// holds it. Creates `dir` if needed.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Config text with the `out` and `config` keys dropped, hashed.
std::string config_hash(const std::string& config_text);

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string code_version = kCodeVersion;
  std::string config;  // key = value lines
  std::vector<std::string> artifacts;
};

std::string manifest_json(const RunManifest& m);
RunManifest parse_manifest(const std::string& text);
void write_manifest(const std::filesystem::path& dir, const RunManifest& m);

/// Writes `bytes` to `path` (binary, truncating). Throws DataError.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace sdtt
