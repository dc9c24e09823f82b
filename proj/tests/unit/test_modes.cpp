#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "meg/data.hpp"
#include "meg/modes.hpp"

using namespace meg;
using namespace meg::test;

namespace {

class FixedIds : public ModeClassifier {
 public:
  FixedIds(std::vector<Index> ids, Index capacity) : ids_(std::move(ids)), capacity_(capacity) {}
  Index capacity() const override { return capacity_; }
  std::vector<Index> classify(const Mat<float>& samples) const override {
    return {ids_.begin(), ids_.begin() + samples.rows()};
  }

 private:
  std::vector<Index> ids_;
  Index capacity_;
};

/// Reads the mode id from the first column.
class ColumnIds : public ModeClassifier {
 public:
  explicit ColumnIds(Index capacity) : capacity_(capacity) {}
  Index capacity() const override { return capacity_; }
  std::vector<Index> classify(const Mat<float>& samples) const override {
    std::vector<Index> out;
    for (Index i = 0; i < samples.rows(); ++i) out.push_back(static_cast<Index>(samples(i, 0)));
    return out;
  }

 private:
  Index capacity_;
};

}  // namespace

TEST_CASE("mode_histogram counts and range enforcement") {
  const auto h = mode_histogram(FixedIds({0, 0, 1}, 2), Mat<float>::Zero(3, 1), 2);
  CHECK(h.counts == std::vector<std::int64_t>{2, 1});
  CHECK(h.captured_modes() == 2);
  CHECK(h.total == 3);
  CHECK_THROWS_AS(mode_histogram(FixedIds(std::vector<Index>(10, 9), 8), Mat<float>::Zero(10, 1), 8), ProtocolError);
}

TEST_CASE("mode_histogram is invariant to sample order") {
  Rng rng(1);
  Mat<float> s(200, 1);
  for (Index i = 0; i < s.rows(); ++i) s(i, 0) = static_cast<float>(rng.uniform_index(17));
  const auto a = mode_histogram(ColumnIds(17), s, 17);
  const auto perm = rng.permutation(200);
  Mat<float> t(200, 1);
  for (Index i = 0; i < 200; ++i) t(i, 0) = s(static_cast<Index>(perm[static_cast<std::size_t>(i)]), 0);
  CHECK(mode_histogram(ColumnIds(17), t, 17).counts == a.counts);
}

TEST_CASE("captured modes never decrease as the sample stream grows") {
  Rng rng(2);
  Mat<float> s(500, 1);
  for (Index i = 0; i < s.rows(); ++i) s(i, 0) = static_cast<float>(rng.uniform_index(100));
  Index prev = 0;
  for (Index n = 10; n <= 500; n += 10) {
    const Index c = mode_histogram(ColumnIds(100), Mat<float>(s.topRows(n)), 100).captured_modes();
    CHECK(c >= prev);
    prev = c;
  }
}

TEST_CASE("histogram merge is associative and commutative") {
  auto h = [](std::vector<Index> ids) { return histogram_from_ids(ids, 4); };
  auto a = h({0, 1}), b = h({1, 2, 2}), c = h({3});
  auto ab_c = a;
  ab_c.merge(b);
  ab_c.merge(c);
  auto bc = b;
  bc.merge(c);
  auto a_bc = a;
  a_bc.merge(bc);
  auto cba = c;
  cba.merge(b);
  cba.merge(a);
  CHECK(ab_c.counts == a_bc.counts);
  CHECK(ab_c.counts == cba.counts);
  CHECK(ab_c.total == 6);
}

TEST_CASE("nearest_mode_assign: exact hits, ties, cutoff") {
  const Mat<double> centers = rows({{0, 0}, {2, 0}});
  const auto a = nearest_mode_assign(rows({{2, 0}, {1, 0}, {0, 0.16}, {0, 0.14}}), centers, 0.05, 3);
  CHECK(a.mode == std::vector<Index>{1, 0, 0, 0});
  CHECK(a.in_mode == std::vector<bool>{true, false, false, true});
  CHECK(a.in_mode_fraction() == doctest::Approx(0.5));
  CHECK(a.in_mode_histogram(2).counts == std::vector<std::int64_t>{1, 1});
}

TEST_CASE("draws from the true 25-gaussians mixture are almost all in-mode") {
  const auto spec = Synthetic2DSpec::named("25gaussians");
  Rng rng(3);
  const auto x = synthetic2d(spec, 10000, rng);
  const auto a = nearest_mode_assign(x, spec.centers, spec.sigma, 3);
  CHECK(a.in_mode_fraction() >= 0.99);
  CHECK(a.in_mode_histogram(25).captured_modes() == 25);
}

TEST_CASE("empirical KL") {
  auto h = [](std::vector<std::int64_t> c) {
    ModeHistogram m = ModeHistogram::empty(static_cast<Index>(c.size()));
    m.counts = c;
    for (auto v : c) m.total += v;
    return m;
  };
  CHECK(empirical_kl(h({3, 5, 2}), h({3, 5, 2})).value == 0.0);
  CHECK(empirical_kl(h({6, 10, 4}), h({3, 5, 2})).value == doctest::Approx(0.0).epsilon(1e-15));
  const double expected = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(empirical_kl(h({75, 25}), h({50, 50})).value == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.1308).epsilon(1e-3));
  const auto inf = empirical_kl(h({10, 0}), h({0, 10}));
  CHECK(inf.infinite);
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::int64_t> a(5), b(5);
    for (auto& v : a) v = 1 + static_cast<std::int64_t>(rng.uniform_index(20));
    for (auto& v : b) v = 1 + static_cast<std::int64_t>(rng.uniform_index(20));
    const auto kl = empirical_kl(h(a), h(b));
    CHECK_FALSE(kl.infinite);
    CHECK(kl.value >= 0);
  }
  CHECK(ModeHistogram::uniform(4, 3).counts == std::vector<std::int64_t>{3, 3, 3, 3});
}
