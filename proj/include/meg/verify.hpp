// SPDX-License-Identifier: Apache-2.0
//
// Self-checks run by `meg check`: gradients against finite differences, the
// mutual-information estimator, the MALA kernel, the grid partition estimate
// and checkpoint resume.

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace meg {

struct SuiteResult {
  std::string name;
  bool passed = false;
  /// One line per individual check: "ok|FAIL <what>: <measured> (<bound>)".
  std::vector<std::string> checks;
  double seconds = 0;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Scratch space for the checkpoint suite; a temporary directory when empty.
  std::filesystem::path scratch;
};

/// gradients, mi, mala, partition, checkpoint
std::vector<std::string> suite_names();
SuiteResult run_suite(const std::string& name, const VerifyOptions& options = {});

// Individual suites, exposed for the acceptance harness.
SuiteResult verify_gradients(const VerifyOptions& options);
SuiteResult verify_mutual_information(const VerifyOptions& options);
SuiteResult verify_mala(const VerifyOptions& options);
SuiteResult verify_partition(const VerifyOptions& options);
SuiteResult verify_checkpoint(const VerifyOptions& options);

}  // namespace meg
