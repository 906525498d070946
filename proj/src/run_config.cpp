#include "sdtt/run_config.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sdtt {

std::filesystem::path resolve_output_dir(const std::filesystem::path& out) {
  const char* root = std::getenv("SDTT_OUT");
  if (out.is_absolute() || root == nullptr || *root == '\0') return out;
  return std::filesystem::path(root) / out;
}

DirectoryLock::DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw InputError("output directory " + dir.string() + " is in use (remove " + path_.string() +
                     " if no other run owns it)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

std::string config_hash(const std::string& config_text) {
  std::istringstream in(config_text);
  std::string line;
  std::string kept;
  while (std::getline(in, line)) {
    const auto key = line.substr(0, line.find('='));
    const auto trimmed = key.substr(0, key.find_last_not_of(' ') + 1);
    if (trimmed == "out" || trimmed == "config") continue;
    kept += line;
    kept += '\n';
  }
  return hex64(fnv1a64(kept));
}

std::string manifest_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["code_version"] = m.code_version;
  j["config"] = m.config;
  j["artifacts"] = m.artifacts;
  return j.dump(2) + "\n";
}

RunManifest parse_manifest(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.code_version = j.at("code_version").get<std::string>();
    m.config = j.value("config", std::string());
    m.artifacts = j.value("artifacts", std::vector<std::string>());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
}

void write_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  write_file(dir / "manifest.json", manifest_json(m));
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace sdtt
