#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "meg/manifest.hpp"

using namespace meg;
using namespace meg::test;

TEST_CASE("finished runs list every artifact with its checksum") {
  const auto dir = scratch_dir("manifest");
  begin_run(dir);
  CHECK(std::filesystem::exists(dir / kRunningMarker));
  std::filesystem::create_directories(dir / "sub");
  std::ofstream(dir / "a.txt") << "alpha";
  std::ofstream(dir / "sub" / "b.bin") << "beta";
  RunManifest m;
  m.command = "train";
  m.seed = 4;
  m.code = code_identity();
  m.started = utc_timestamp();
  finish_run(dir, m);
  CHECK_FALSE(std::filesystem::exists(dir / kRunningMarker));
  const auto back = read_run_manifest(dir);
  CHECK(back.status == "complete");
  CHECK(back.command == "train");
  CHECK(back.code == code_identity());
  REQUIRE(back.artifacts.size() == 2);
  CHECK(back.artifacts[0].path == "a.txt");
  CHECK(back.artifacts[0].sha256 == "8ed3f6ad685b959ead7022518e1af76cd816f8e8ec7ccdda1ed4018e8f2223f8");
  CHECK(back.artifacts[1].path == "sub/b.bin");
  CHECK(back.artifacts[1].bytes == 4);
  std::filesystem::remove_all(dir);
}

TEST_CASE("failed runs leave a marker with the reason") {
  const auto dir = scratch_dir("failed");
  begin_run(dir);
  fail_run(dir, "numeric fault at iteration 12", 2);
  CHECK_FALSE(std::filesystem::exists(dir / kRunningMarker));
  std::ifstream in(dir / kFailedMarker);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("numeric fault at iteration 12") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest json round trip") {
  RunManifest m;
  m.command = "eval-modes";
  m.arguments = {"eval-modes", "--checkpoint", "x"};
  m.config["train"] = {{"seed", "3"}};
  m.seed = 3;
  m.started = "2024-01-01T00:00:00Z";
  m.finished = "2024-01-01T00:00:01Z";
  m.status = "failed";
  m.artifacts.push_back({"r.json", "00", 3});
  m.summary = {{"kl", 0.5}};
  const auto back = RunManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(utc_timestamp().size() == 20);
}
