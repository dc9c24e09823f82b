// SPDX-License-Identifier: Apache-2.0
#include "meg/manifest.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>

#include "meg/io.hpp"

#ifndef MEG_CODE_IDENTITY
#define MEG_CODE_IDENTITY "unknown"
#endif

namespace meg {

std::string code_identity() { return MEG_CODE_IDENTITY; }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "meg-run";
  j["version"] = 1;
  j["command"] = command;
  j["arguments"] = arguments;
  j["seed"] = seed;
  j["code_identity"] = code;
  j["started"] = started;
  j["finished"] = finished;
  j["status"] = status;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [section, kv] : config) {
    nlohmann::ordered_json s = nlohmann::ordered_json::object();
    for (const auto& [k, v] : kv) s[k] = v;
    cfg[section] = s;
  }
  j["config"] = cfg;
  nlohmann::ordered_json arts = nlohmann::ordered_json::array();
  for (const auto& a : artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
  j["artifacts"] = arts;
  j["summary"] = summary.is_null() ? nlohmann::ordered_json::object() : summary;
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::ordered_json& j) {
  if (j.value("format", "") != "meg-run") throw IntegrityError("not a run manifest");
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.arguments = j.at("arguments").get<std::vector<std::string>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.code = j.at("code_identity").get<std::string>();
  m.started = j.at("started").get<std::string>();
  m.finished = j.at("finished").get<std::string>();
  m.status = j.at("status").get<std::string>();
  for (const auto& [section, kv] : j.at("config").items())
    for (const auto& [k, v] : kv.items()) m.config[section][k] = v.get<std::string>();
  for (const auto& a : j.at("artifacts"))
    m.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>(),
                           a.at("bytes").get<std::uintmax_t>()});
  m.summary = j.value("summary", nlohmann::ordered_json::object());
  return m;
}

std::vector<ArtifactEntry> inventory(const std::filesystem::path& dir) {
  std::vector<ArtifactEntry> out;
  if (!std::filesystem::exists(dir)) return out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = std::filesystem::relative(e.path(), dir).generic_string();
    if (rel == kManifestFile || rel == kRunningMarker || rel == kFailedMarker) continue;
    out.push_back({rel, io::file_sha256(e.path()), e.file_size()});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  return out;
}

void begin_run(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::filesystem::remove(dir / kFailedMarker);
  io::write_file_atomic(dir / kRunningMarker, utc_timestamp() + "\n");
}

void finish_run(const std::filesystem::path& dir, RunManifest manifest, const std::string& status) {
  manifest.finished = utc_timestamp();
  manifest.status = status;
  manifest.artifacts = inventory(dir);
  io::write_file_atomic(dir / kManifestFile, manifest.to_json().dump(2) + "\n");
  std::filesystem::remove(dir / kRunningMarker);
}

void fail_run(const std::filesystem::path& dir, const std::string& reason, int exit_code) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  io::write_file_atomic(dir / kFailedMarker,
                        utc_timestamp() + "\nexit " + std::to_string(exit_code) + "\n" + reason + "\n");
  std::filesystem::remove(dir / kRunningMarker, ec);
}

RunManifest read_run_manifest(const std::filesystem::path& dir) {
  return RunManifest::from_json(nlohmann::ordered_json::parse(io::read_file(dir / kManifestFile)));
}

}  // namespace meg
