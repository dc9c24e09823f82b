// SPDX-License-Identifier: Apache-2.0
#include "meg/compare.hpp"

namespace meg {

SignTestResult sign_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("sign_test: paired samples differ in length");
  SignTestResult r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) r.wins++;
    else if (a[i] < b[i]) r.losses++;
    else r.ties++;
  }
  const Index n = r.wins + r.losses;
  if (n == 0) return r;
  // Sum the binomial upper tail in log space.
  double tail = 0;
  for (Index k = r.wins; k <= n; ++k) {
    const double log_term = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(k) + 1) -
                            std::lgamma(static_cast<double>(n - k) + 1) - static_cast<double>(n) * std::log(2.0);
    tail += std::exp(log_term);
  }
  r.p_value = std::min(1.0, tail);
  return r;
}

}  // namespace meg
