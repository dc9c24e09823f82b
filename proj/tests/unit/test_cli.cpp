// Drives the command-line tool end to end on a tiny two-dimensional run.

#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "meg/io.hpp"

using meg::test::scratch_dir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;
};

Outcome run(const std::string& args) {
  const std::string cmd = std::string(MEG_CLI_PATH) + " " + args + " 2>&1";
  Outcome o;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::array<char, 4096> buf{};
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) o.output.append(buf.data(), n);
  const int status = pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

const std::string kTiny =
    "-q -s train.total_iters=12 -s train.batch_size=16 -s train.energy_steps=2 -s data.count=400 "
    "-s run.checkpoint_every=6 -s model.energy=dense:16,lrelu,dense:1 -s model.generator=dense:16,relu,dense:2 "
    "-s model.statistics_head=dense:16,lrelu,dense:1 -s density.nx=40 -s density.ny=40 -s modes.count=500 ";

std::string config() { return std::string("-c ") + MEG_SOURCE_DIR + "/configs/toy-2d-25gaussians.ini "; }

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(meg::io::read_file(dir / "manifest.json")); }

/// path -> sha256 for every artifact listed in a manifest.
std::map<std::string, std::string> checksums(const fs::path& dir) {
  std::map<std::string, std::string> out;
  const auto m = manifest(dir);
  for (const auto& a : m["artifacts"]) out[a["path"].get<std::string>()] = a["sha256"].get<std::string>();
  return out;
}

/// One trained tiny run shared by the tests below.
const fs::path& trained() {
  static const fs::path dir = [] {
    const auto d = scratch_dir("cli-train");
    const auto o = run("train " + config() + kTiny + "-o " + d.string() + " --force");
    REQUIRE_MESSAGE(o.code == 0, o.output);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("train writes a manifest, metrics and checkpoints") {
  const auto& dir = trained();
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "config.ini"));
  CHECK_FALSE(fs::exists(dir / "RUNNING"));
  const auto m = manifest(dir);
  CHECK(m["status"] == "complete");
  CHECK(m["command"] == "train");
  int ckpts = 0;
  for (const auto& [path, sha] : checksums(dir)) {
    CHECK(meg::io::file_sha256(dir / path) == sha);
    ckpts += path.rfind("checkpoints/", 0) == 0;
  }
  CHECK(ckpts >= 1);
  CHECK(m["config"]["train"]["total_iters"] == "12");
}

TEST_CASE("identical command, config and seed reproduce every artifact") {
  const auto dir = scratch_dir("cli-repeat");
  const auto o = run("train " + config() + kTiny + "-o " + dir.string() + " --force");
  REQUIRE_MESSAGE(o.code == 0, o.output);
  CHECK(checksums(dir) == checksums(trained()));
  fs::remove_all(dir);
}

TEST_CASE("interrupted then resumed training matches the uninterrupted run") {
  const auto dir = scratch_dir("cli-resume");
  auto o = run("train " + config() + kTiny + "-o " + dir.string() + " --force --stop-after 6");
  REQUIRE_MESSAGE(o.code == 0, o.output);
  CHECK(manifest(dir)["status"] == "stopped");
  o = run("train " + config() + kTiny + "-o " + dir.string() + " --resume");
  REQUIRE_MESSAGE(o.code == 0, o.output);
  CHECK(manifest(dir)["summary"]["energy_parameter_hash"] == manifest(trained())["summary"]["energy_parameter_hash"]);
  CHECK(manifest(dir)["summary"]["generator_parameter_hash"] ==
        manifest(trained())["summary"]["generator_parameter_hash"]);
  CHECK(meg::io::file_sha256(dir / "metrics.csv") == meg::io::file_sha256(trained() / "metrics.csv"));
  fs::remove_all(dir);
}

TEST_CASE("unknown config keys fail with exit 1 and name the key") {
  const auto dir = scratch_dir("cli-unknown");
  const auto o = run("train " + config() + "-s train.learnig_rate=1 -o " + dir.string() + " --force");
  CHECK(o.code == 1);
  CHECK(o.output.find("train.learnig_rate") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("a missing checkpoint is reported with its path") {
  const auto o = run("eval-density " + config() + "--checkpoint /nonexistent/run/ckpt.bin -o " +
                     scratch_dir("cli-missing").string() + " --force");
  CHECK(o.code == 1);
  CHECK(o.output.find("/nonexistent/run/ckpt.bin") != std::string::npos);
}

TEST_CASE("evaluating with a mismatched latent_dim is a dimension error") {
  const auto o = run("eval-modes --checkpoint " + trained().string() + " -s train.latent_dim=3 -o " +
                     scratch_dir("cli-mismatch").string() + " --force");
  CHECK(o.code != 0);
  CHECK(o.output.find("latent_dim") != std::string::npos);
}

TEST_CASE("eval-density and eval-modes write reports") {
  const auto d = scratch_dir("cli-density");
  auto o = run("eval-density -q --checkpoint " + trained().string() + " -o " + d.string() + " --force");
  REQUIRE_MESSAGE(o.code == 0, o.output);
  CHECK(fs::exists(d / "report.json"));
  CHECK(manifest(d)["status"] == "complete");
  const auto m = scratch_dir("cli-modes");
  o = run("eval-modes -q --checkpoint " + trained().string() + " -o " + m.string() + " --force");
  REQUIRE_MESSAGE(o.code == 0, o.output);
  const auto report = nlohmann::json::parse(meg::io::read_file(m / "report.json"));
  CHECK(report.contains("in_mode_fraction"));
  CHECK(report.contains("captured_modes"));
  fs::remove_all(d);
  fs::remove_all(m);
}

TEST_CASE("eval-anomaly on unlabeled data is a scope error") {
  const auto o = run("eval-anomaly -q --checkpoint " + trained().string() + " -o " +
                     scratch_dir("cli-anomaly").string() + " --force");
  CHECK(o.code == 1);
}

TEST_CASE("sample --compare writes both chains and a comparison") {
  const auto d = scratch_dir("cli-sample");
  const auto o = run("sample -q --checkpoint " + trained().string() + " --compare --count 8 --chain-length 20" +
                     " --burn-in 10 -o " + d.string() + " --force");
  REQUIRE_MESSAGE(o.code == 0, o.output);
  const auto c = nlohmann::json::parse(meg::io::read_file(d / "comparison.json"));
  CHECK(c.contains("latent"));
  CHECK(c.contains("visible"));
  fs::remove_all(d);
}

TEST_CASE("a failing run leaves a failure marker") {
  const auto d = scratch_dir("cli-fail");
  fs::remove_all(d);
  const auto o = run("train " + config() + "-s data.kind=kdd99 -s data.path=/nonexistent/kdd -o " + d.string());
  CHECK(o.code == 1);
  CHECK(fs::exists(d / "FAILED"));
  CHECK_FALSE(fs::exists(d / "RUNNING"));
  fs::remove_all(d);
}

TEST_CASE("an existing run directory is not overwritten without --force") {
  const auto o = run("train " + config() + kTiny + "-o " + trained().string());
  CHECK(o.code == 1);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("sample").code == 1);
}

TEST_CASE("check runs a named suite") {
  const auto d = scratch_dir("cli-check");
  const auto o = run("check --suite partition -o " + d.string() + " --force");
  CHECK(o.code == 0);
  CHECK(o.output.find("PASS partition") != std::string::npos);
  CHECK(run("check --suite nonsense -o " + d.string() + " --force").code == 1);
  fs::remove_all(d);
}
