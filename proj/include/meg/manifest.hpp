// SPDX-License-Identifier: Apache-2.0
//
// Run directories: the manifest with config snapshot and artifact checksums,
// and the marker left behind by runs that did not finish.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "meg/config.hpp"

namespace meg {

/// Build identity compiled into the binary (version control description when available).
std::string code_identity();

inline constexpr const char* kManifestFile = "manifest.json";
/// Present while a command runs; renamed to kFailedMarker when it fails.
inline constexpr const char* kRunningMarker = "RUNNING";
inline constexpr const char* kFailedMarker = "FAILED";

struct ArtifactEntry {
  std::string path;  // relative to the run directory, '/' separated
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::map<std::string, KeyValues> config;
  std::uint64_t seed = 0;
  std::string code;
  std::string started, finished;
  std::string status = "running";
  std::vector<ArtifactEntry> artifacts;
  nlohmann::ordered_json summary;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::ordered_json& j);
};

/// Every regular file under `dir` except the manifest and the markers, sorted by path.
std::vector<ArtifactEntry> inventory(const std::filesystem::path& dir);

/// Marks the start of a command in `dir`.
void begin_run(const std::filesystem::path& dir);
/// Writes the manifest with a fresh inventory and removes the running marker.
void finish_run(const std::filesystem::path& dir, RunManifest manifest, const std::string& status = "complete");
/// Replaces the running marker with a failure marker holding `reason`.
void fail_run(const std::filesystem::path& dir, const std::string& reason, int exit_code);

RunManifest read_run_manifest(const std::filesystem::path& dir);

/// UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

}  // namespace meg
