#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "meg/data.hpp"
#include "meg/errors.hpp"

using namespace meg;
using namespace meg::test;

namespace {

/// 20 tiny "digit" images per class; pixel 0 holds label / 10.
DigitSet fake_digits(int per_class = 20) {
  DigitSet d;
  d.height = d.width = 2;
  d.images = Mat<float>::Zero(10 * per_class, 4);
  for (int c = 0; c < 10; ++c)
    for (int i = 0; i < per_class; ++i) {
      const Index r = c * per_class + i;
      d.images(r, 0) = static_cast<float>(c) / 10.0f;
      d.images(r, 1) = static_cast<float>(i) / static_cast<float>(per_class);
      d.labels.push_back(c);
    }
  return d;
}

TabularOptions tab_options() {
  TabularOptions o;
  o.seed = 4;
  o.train_on_inliers = false;
  return o;
}

}  // namespace

TEST_CASE("25-gaussians geometry and component balance") {
  const auto spec = Synthetic2DSpec::named("25gaussians");
  CHECK(spec.mode_count() == 25);
  CHECK(spec.sigma == 0.05);
  CHECK(spec.centers.minCoeff() == -4.0);
  CHECK(spec.centers.maxCoeff() == 4.0);
  Rng rng(1);
  std::vector<Index> comp;
  synthetic2d(spec, 25000, rng, &comp);
  std::vector<int> counts(25, 0);
  for (Index c : comp) counts[static_cast<std::size_t>(c)]++;
  for (int c : counts) CHECK(std::abs(c - 1000) <= 120);
}

TEST_CASE("8-gaussians without noise land on the centers") {
  auto spec = Synthetic2DSpec::named("8gaussians");
  CHECK(spec.mode_count() == 8);
  for (Index i = 0; i < 8; ++i) CHECK(spec.centers.row(i).norm() == doctest::Approx(2.0));
  spec.sigma = 0;
  Rng rng(2);
  const auto x = synthetic2d(spec, 1000, rng);
  for (Index i = 0; i < x.rows(); ++i) {
    double best = 1e9;
    for (Index c = 0; c < 8; ++c) best = std::min(best, (x.row(i) - spec.centers.row(c)).norm());
    CHECK(best < 1e-6);
  }
}

TEST_CASE("synthetic draws are a function of the seed") {
  for (const char* name : {"8gaussians", "25gaussians", "swissroll"}) {
    CAPTURE(name);
    const auto spec = Synthetic2DSpec::named(name);
    Rng a(3), b(3), c(4);
    const auto xa = synthetic2d(spec, 500, a);
    CHECK(xa == synthetic2d(spec, 500, b));
    CHECK(xa != synthetic2d(spec, 500, c));
    CHECK(xa.allFinite());
  }
  CHECK_THROWS_AS(Synthetic2DSpec::named("moons"), ConfigError);
}

TEST_CASE("stacked mode ids are bijective with digit tuples") {
  for (int stacks : {1, 3, 4}) {
    Index cap = 1;
    for (int i = 0; i < stacks; ++i) cap *= 10;
    for (Index m = 0; m < cap; m += (stacks == 4 ? 7 : 1)) {
      const auto labels = stacked_labels(m, stacks);
      CHECK(static_cast<int>(labels.size()) == stacks);
      CHECK(stacked_mode_id(labels) == m);
    }
  }
  CHECK(stacked_mode_id({3, 0, 7}) == 307);
  StackedMNISTSpec s;
  s.stacks = 3;
  CHECK(s.mode_capacity() == 1000);
}

TEST_CASE("stacked build: labels match channels, modes are uniform") {
  const auto src = fake_digits();
  StackedMNISTSpec spec;
  spec.stacks = 3;
  spec.train_count = 100000;
  spec.eval_count = 10;
  const auto ds = build_stacked_mnist(spec, src, 5);
  REQUIRE(ds.train_index.rows() == 100000);
  std::vector<double> counts(1000, 0);
  for (Index m : ds.train_modes) {
    REQUIRE(m >= 0);
    REQUIRE(m < 1000);
    counts[static_cast<std::size_t>(m)] += 1;
  }
  double chi2 = 0;
  for (double c : counts) chi2 += (c - 100) * (c - 100) / 100;
  CHECK(chi2 < 1105.9);  // 0.99 quantile, 999 degrees of freedom

  const Mat<float> imgs = materialize(ds.train_index, src, 0, 5);
  CHECK(imgs.cols() == 4 * 3);
  for (Index i = 0; i < 5; ++i) {
    const auto labels = stacked_labels(ds.train_modes[static_cast<std::size_t>(i)], 3);
    for (int c = 0; c < 3; ++c) {
      // HWC layout: pixel 0 of channel c sits at column c.
      CHECK(std::lround(imgs(i, c) * 10) == labels[static_cast<std::size_t>(c)]);
    }
  }
}

TEST_CASE("stacked-4 full-size build persists the exact counts and rebuilds to the same hash") {
  const auto src = fake_digits();
  StackedMNISTSpec spec;
  spec.stacks = 4;
  spec.train_count = 1280000;
  spec.eval_count = 260000;
  const auto ds = build_stacked_mnist(spec, src, 6);
  const auto dir = scratch_dir("stack4");
  const std::string h = write_stacked_mnist(dir, ds, "fixture");
  const auto back = read_stacked_mnist(dir);
  CHECK(back.train_index.rows() == 1280000);
  CHECK(back.eval_index.rows() == 260000);
  CHECK(back.train_index == ds.train_index);
  CHECK(back.eval_modes == ds.eval_modes);
  CHECK(archive_hash(dir) == h);
  CHECK(verify_stacked_rebuild(dir, src));
  std::filesystem::remove_all(dir);
}

TEST_CASE("archives verify their checksums") {
  DatasetArchive a;
  a.spec = {{"kind", "fixture"}};
  a.seed = 9;
  Rng rng(7);
  a.arrays["x"] = random_mat<float>(10, 3, rng);
  const auto dir = scratch_dir("archive");
  const auto h = write_archive(dir, a);
  const auto b = read_archive(dir);
  CHECK(b.arrays.at("x") == a.arrays.at("x"));
  CHECK(b.seed == 9);
  CHECK(write_archive(scratch_dir("archive2"), a) == h);

  // Flip one byte of the array file.
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().filename() == "manifest.json") continue;
    std::fstream f(e.path(), std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(-1, std::ios::end);
    char c;
    f.get(c);
    f.seekp(-1, std::ios::end);
    f.put(static_cast<char>(c ^ 0x5a));
  }
  CHECK_THROWS_AS(read_archive(dir), IntegrityError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("digit csv ingestion") {
  const auto dir = scratch_dir("digits");
  {
    std::ofstream out(dir / "d.csv");
    for (int r = 0; r < 3; ++r) {
      for (int p = 0; p < 784; ++p) out << (p == 0 ? 255 : 0) << ",";
      out << r << "\n";
    }
  }
  const auto d = load_digits(dir / "d.csv");
  CHECK(d.size() == 3);
  CHECK(d.labels == std::vector<int>{0, 1, 2});
  CHECK(d.images(1, 0) == 1.0f);
  {
    std::ofstream out(dir / "bad.csv");
    out << "1,2,3\n";
  }
  CHECK_THROWS_AS(load_digits(dir / "bad.csv"), IngestionError);
  CHECK_THROWS_AS(load_digits(dir / "none.csv"), IngestionError);
  CHECK(rows_with_label(d, 1, true) == std::vector<Index>{1});
  CHECK(rows_with_label(d, 1, false) == std::vector<Index>{0, 2});
  std::filesystem::remove_all(dir);
}

TEST_CASE("all-categorical fixture one-hot encodes to width 3") {
  std::vector<ColumnDescriptor> schema{{"colour", ColumnKind::Categorical, {}, 0, 1},
                                       {"label", ColumnKind::Label, {}, 0, 1}};
  std::stringstream in;
  const char* colours[] = {"red", "green", "blue"};
  for (int i = 0; i < 30; ++i) in << colours[i % 3] << "," << (i % 5 == 0 ? "normal." : "attack.") << "\n";
  const auto split = ingest_tabular(in, schema, tab_options());
  CHECK(split.train.features.cols() == 3);
  CHECK(split.train.schema[0].categories == std::vector<std::string>{"blue", "green", "red"});
  for (Index i = 0; i < split.test.rows(); ++i) CHECK(split.test.features.row(i).sum() == 1.0f);
}

TEST_CASE("tabular splits are disjoint and exhaustive; labels follow the convention") {
  std::vector<ColumnDescriptor> schema{{"a", ColumnKind::Numeric, {}, 0, 1},
                                       {"b", ColumnKind::Numeric, {}, 0, 1},
                                       {"label", ColumnKind::Label, {}, 0, 1}};
  std::stringstream in;
  for (int i = 0; i < 101; ++i) in << i << "," << (i * 7) % 13 << "," << (i % 4 == 0 ? "normal." : "smurf.") << "\n";
  const auto split = ingest_tabular(in, schema, tab_options());
  std::set<Index> all(split.train_rows.begin(), split.train_rows.end());
  for (Index r : split.test_rows) CHECK(all.insert(r).second);
  CHECK(all.size() == 101);
  CHECK(*all.rbegin() == 100);
  CHECK(split.report.rows_read == 101);
  for (std::size_t i = 0; i < split.test_rows.size(); ++i)
    CHECK(split.test.labels[i] == (split.test_rows[i] % 4 == 0 ? 1 : 0));

  std::stringstream again;
  for (int i = 0; i < 101; ++i) again << i << "," << (i * 7) % 13 << "," << (i % 4 == 0 ? "normal." : "smurf.") << "\n";
  auto o = tab_options();
  o.convention = AnomalyConvention::AttackIsAnomaly;
  o.train_on_inliers = true;
  const auto flipped = ingest_tabular(again, schema, o);
  for (std::size_t i = 0; i < flipped.test_rows.size(); ++i)
    CHECK(flipped.test.labels[i] == (flipped.test_rows[i] % 4 == 0 ? 0 : 1));
  for (int l : flipped.train.labels) CHECK(l == 0);
}

TEST_CASE("malformed rows are counted and bounded") {
  std::vector<ColumnDescriptor> schema{{"a", ColumnKind::Numeric, {}, 0, 1}, {"label", ColumnKind::Label, {}, 0, 1}};
  std::stringstream in;
  for (int i = 0; i < 10; ++i) in << (i == 3 ? "x" : std::to_string(i)) << ",normal.\n";
  auto o = tab_options();
  CHECK_THROWS_AS(ingest_tabular(in, schema, o), IngestionError);
  std::stringstream in2;
  for (int i = 0; i < 10; ++i) in2 << (i == 3 ? "x" : std::to_string(i)) << ",normal.\n";
  o.max_malformed_fraction = 0.2;
  const auto s = ingest_tabular(in2, schema, o);
  CHECK(s.report.malformed == 1);
  CHECK(s.report.malformed_lines == std::vector<Index>{4});
}

TEST_CASE("min-max normalization is idempotent on normalized data") {
  Rng rng(8);
  const auto x = random_mat(50, 4, rng);
  const auto once = MinMax::fit(x).apply(x);
  CHECK(once.minCoeff() >= 0.0);
  CHECK(once.maxCoeff() <= 1.0);
  const auto twice = MinMax::fit(once).apply(once);
  CHECK((twice - once).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("the intrusion schema has 41 feature columns and a label") {
  const auto s = kdd99_schema();
  CHECK(s.size() == 42);
  CHECK(s.back().kind == ColumnKind::Label);
  int categorical = 0;
  for (const auto& c : s) categorical += c.kind == ColumnKind::Categorical;
  CHECK(categorical == 3);
  CHECK_THROWS_AS(load_kdd99("/nonexistent/kdd", TabularOptions{}), IngestionError);
}
