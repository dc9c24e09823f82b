// SPDX-License-Identifier: Apache-2.0
#include "meg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "meg/io.hpp"

namespace meg {

// ---------------------------------------------------------------------------
// Archives

namespace {

constexpr const char* kManifestName = "manifest.json";

std::filesystem::path array_file(const std::filesystem::path& dir, const std::string& name) {
  return dir / (name + ".bin");
}

std::string combine_hashes(const std::map<std::string, std::string>& file_hashes) {
  std::string joined;
  for (const auto& [name, h] : file_hashes) joined += name + ":" + h + "\n";
  return io::sha256_hex(joined);
}

}  // namespace

std::string write_archive(const std::filesystem::path& dir, const DatasetArchive& archive) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::string> hashes;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object(), columns = nlohmann::ordered_json::object(),
                         files = nlohmann::ordered_json::object();
  for (const auto& [name, m] : archive.arrays) {
    const auto path = array_file(dir, name);
    io::write_array(path, m);
    hashes[name] = io::file_sha256(path);
    counts[name] = m.rows();
    columns[name] = m.cols();
    files[name] = hashes[name];
  }
  const std::string hash = combine_hashes(hashes);
  nlohmann::ordered_json manifest;
  manifest["format"] = "meg-dataset";
  manifest["version"] = 1;
  manifest["spec"] = archive.spec;
  manifest["seed"] = archive.seed;
  manifest["counts"] = counts;
  manifest["columns"] = columns;
  manifest["files"] = files;
  manifest["hash"] = hash;
  io::write_file_atomic(dir / kManifestName, manifest.dump(2) + "\n");
  return hash;
}

nlohmann::ordered_json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  if (!std::filesystem::exists(path)) throw IngestionError("dataset manifest not found: '" + path.string() + "'");
  try {
    return nlohmann::ordered_json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed dataset manifest '" + path.string() + "': " + e.what());
  }
}

std::string archive_hash(const std::filesystem::path& dir) { return read_manifest(dir).at("hash").get<std::string>(); }

DatasetArchive read_archive(const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  if (manifest.value("format", "") != "meg-dataset") throw IntegrityError(dir.string() + ": not a dataset archive");
  if (manifest.value("version", 0) != 1) {
    throw UnsupportedVersionError(dir.string() + ": unsupported dataset archive version");
  }
  DatasetArchive out;
  out.spec = manifest.at("spec");
  out.seed = manifest.at("seed").get<std::uint64_t>();
  std::map<std::string, std::string> hashes;
  for (const auto& [name, expected] : manifest.at("files").items()) {
    const auto path = array_file(dir, name);
    if (!std::filesystem::exists(path)) throw IngestionError("dataset array missing: '" + path.string() + "'");
    hashes[name] = io::file_sha256(path);
    if (hashes[name] != expected.get<std::string>()) {
      throw IntegrityError("dataset array '" + path.string() + "' does not match its manifest checksum");
    }
    out.arrays[name] = io::read_array(path);
  }
  if (combine_hashes(hashes) != manifest.at("hash").get<std::string>()) {
    throw IntegrityError(dir.string() + ": manifest hash mismatch");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic 2-D data

Synthetic2DSpec Synthetic2DSpec::named(const std::string& name) {
  Synthetic2DSpec s;
  if (name == "8gaussians") {
    s.family = Synthetic2DFamily::EightGaussians;
    s.scale = 2.0;
    s.sigma = 0.02;
    s.centers.resize(8, 2);
    for (int i = 0; i < 8; ++i) {
      const double a = 2 * M_PI * i / 8.0;
      s.centers(i, 0) = s.scale * std::cos(a);
      s.centers(i, 1) = s.scale * std::sin(a);
    }
  } else if (name == "25gaussians") {
    s.family = Synthetic2DFamily::TwentyFiveGaussians;
    s.scale = 2.0;
    s.sigma = 0.05;
    s.centers.resize(25, 2);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        s.centers(i * 5 + j, 0) = s.scale * (i - 2);
        s.centers(i * 5 + j, 1) = s.scale * (j - 2);
      }
  } else if (name == "swissroll") {
    s.family = Synthetic2DFamily::SwissRoll;
    s.scale = 1.0 / 7.5;
    s.sigma = 0.25;
  } else {
    throw ConfigError("unknown synthetic family '" + name + "' (expected 8gaussians, 25gaussians or swissroll)");
  }
  return s;
}

std::string Synthetic2DSpec::name() const {
  switch (family) {
    case Synthetic2DFamily::EightGaussians: return "8gaussians";
    case Synthetic2DFamily::TwentyFiveGaussians: return "25gaussians";
    case Synthetic2DFamily::SwissRoll: return "swissroll";
  }
  return "unknown";
}

Mat<double> synthetic2d(const Synthetic2DSpec& spec, Index n, Rng& rng, std::vector<Index>* components) {
  if (n < 1) throw ConfigError("synthetic2d: n must be >= 1");
  Mat<double> out(n, 2);
  if (components) components->assign(static_cast<std::size_t>(n), 0);
  if (spec.family == Synthetic2DFamily::SwissRoll) {
    for (Index i = 0; i < n; ++i) {
      const double t = 1.5 * M_PI * (1 + 2 * rng.uniform());
      out(i, 0) = spec.scale * (t * std::cos(t) + spec.sigma * rng.normal());
      out(i, 1) = spec.scale * (t * std::sin(t) + spec.sigma * rng.normal());
    }
    return out;
  }
  if (spec.centers.rows() == 0) throw ConfigError("synthetic2d: Gaussian family without centers");
  for (Index i = 0; i < n; ++i) {
    const auto c = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(spec.centers.rows())));
    out(i, 0) = spec.centers(c, 0) + spec.sigma * rng.normal();
    out(i, 1) = spec.centers(c, 1) + spec.sigma * rng.normal();
    if (components) (*components)[static_cast<std::size_t>(i)] = c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Digit images

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& what) {
  if (offset + 4 > bytes.size()) throw IngestionError(what + ": truncated IDX header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

}  // namespace

DigitSet load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  for (const auto& p : {images, labels})
    if (!std::filesystem::exists(p)) throw IngestionError("digit source not found: '" + p.string() + "'");
  const std::string img = io::read_file(images), lab = io::read_file(labels);
  if (read_be32(img, 0, images.string()) != 0x803) throw IngestionError(images.string() + ": not an IDX image file");
  if (read_be32(lab, 0, labels.string()) != 0x801) throw IngestionError(labels.string() + ": not an IDX label file");
  const std::uint32_t n = read_be32(img, 4, images.string()), h = read_be32(img, 8, images.string()),
                      w = read_be32(img, 12, images.string());
  const std::uint32_t nl = read_be32(lab, 4, labels.string());
  if (n != nl) throw IngestionError("IDX image and label counts differ");
  if (img.size() != 16 + std::size_t{n} * h * w || lab.size() != 8 + std::size_t{n}) {
    throw IngestionError("IDX payload size does not match its header");
  }
  DigitSet ds;
  ds.height = h;
  ds.width = w;
  ds.images.resize(n, static_cast<Index>(h) * w);
  ds.labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t p = 0; p < h * w; ++p)
      ds.images(i, p) = static_cast<float>(static_cast<unsigned char>(img[16 + std::size_t{i} * h * w + p])) / 255.0f;
    ds.labels[i] = static_cast<unsigned char>(lab[8 + i]);
    if (ds.labels[i] > 9) throw IngestionError("IDX label outside 0-9");
  }
  return ds;
}

DigitSet load_digits_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("digit source not found: '" + path.string() + "'");
  std::vector<float> pixels;
  DigitSet ds;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        fields.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
      }
    }
    if (fields.size() != 785) {
      throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": expected 785 fields, found " +
                           std::to_string(fields.size()));
    }
    for (int p = 0; p < 784; ++p) pixels.push_back(static_cast<float>(fields[p] / 255.0));
    const int label = static_cast<int>(fields[784]);
    if (label < 0 || label > 9) throw IngestionError(path.string() + ": label outside 0-9");
    ds.labels.push_back(label);
  }
  ds.images = Eigen::Map<Mat<float>>(pixels.data(), static_cast<Index>(ds.labels.size()), 784);
  return ds;
}

DigitSet load_digits(const std::filesystem::path& path, bool test_split) {
  if (std::filesystem::is_directory(path)) {
    const std::string prefix = test_split ? "t10k" : "train";
    return load_mnist_idx(path / (prefix + "-images-idx3-ubyte"), path / (prefix + "-labels-idx1-ubyte"));
  }
  if (!std::filesystem::exists(path)) throw IngestionError("digit source not found: '" + path.string() + "'");
  return load_digits_csv(path);
}

std::vector<Index> rows_with_label(const DigitSet& set, int label, bool keep) {
  std::vector<Index> rows;
  for (Index i = 0; i < set.size(); ++i)
    if ((set.labels[static_cast<std::size_t>(i)] == label) == keep) rows.push_back(i);
  return rows;
}

// ---------------------------------------------------------------------------
// Stacked digits

void StackedMNISTSpec::validate() const {
  if (stacks < 1 || stacks > 6) throw ConfigError("stacks must lie in [1, 6]");
  if (train_count < 0 || eval_count < 0) throw ConfigError("stacked counts must be >= 0");
}

Index StackedMNISTSpec::mode_capacity() const {
  Index m = 1;
  for (int i = 0; i < stacks; ++i) m *= 10;
  return m;
}

Index stacked_mode_id(const std::vector<int>& labels) {
  Index id = 0;
  for (int l : labels) {
    if (l < 0 || l > 9) throw ProtocolError("digit label outside 0-9");
    id = id * 10 + l;
  }
  return id;
}

std::vector<int> stacked_labels(Index mode, int stacks) {
  std::vector<int> out(static_cast<std::size_t>(stacks));
  for (int c = stacks - 1; c >= 0; --c) {
    out[static_cast<std::size_t>(c)] = static_cast<int>(mode % 10);
    mode /= 10;
  }
  return out;
}

StackedMNIST build_stacked_mnist(const StackedMNISTSpec& spec, const DigitSet& source, std::uint64_t seed) {
  spec.validate();
  if (source.size() == 0) throw IngestionError("stacked build: empty digit source");
  std::vector<std::vector<Index>> by_label(10);
  for (Index i = 0; i < source.size(); ++i) by_label[static_cast<std::size_t>(source.labels[i])].push_back(i);
  for (int d = 0; d < 10; ++d)
    if (by_label[d].empty()) throw IngestionError("stacked build: digit source has no image of " + std::to_string(d));

  StackedMNIST ds;
  ds.spec = spec;
  ds.seed = seed;
  auto build = [&](Index count, Rng rng, Mat<std::int32_t>& index, std::vector<Index>& modes) {
    index.resize(count, spec.stacks);
    modes.resize(static_cast<std::size_t>(count));
    std::vector<int> labels(static_cast<std::size_t>(spec.stacks));
    for (Index i = 0; i < count; ++i) {
      for (int c = 0; c < spec.stacks; ++c) {
        const int d = static_cast<int>(rng.uniform_index(10));
        const auto& pool = by_label[static_cast<std::size_t>(d)];
        index(i, c) = static_cast<std::int32_t>(pool[rng.uniform_index(pool.size())]);
        labels[static_cast<std::size_t>(c)] = d;
      }
      modes[static_cast<std::size_t>(i)] = stacked_mode_id(labels);
    }
  };
  build(spec.train_count, Rng::stream(seed, 1), ds.train_index, ds.train_modes);
  build(spec.eval_count, Rng::stream(seed, 2), ds.eval_index, ds.eval_modes);
  return ds;
}

Mat<float> materialize(const Mat<std::int32_t>& index, const DigitSet& source, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > index.rows()) throw ConfigError("materialize: row range out of bounds");
  const Index stacks = index.cols(), pixels = source.height * source.width;
  Mat<float> out(count, pixels * stacks);
  for (Index i = 0; i < count; ++i)
    for (Index c = 0; c < stacks; ++c) {
      const Index src = index(begin + i, c);
      if (src < 0 || src >= source.size()) throw IngestionError("stacked index refers to a missing source image");
      for (Index p = 0; p < pixels; ++p) out(i, p * stacks + c) = source.images(src, p);
    }
  return out;
}

namespace {

Mat<float> to_float(const Mat<std::int32_t>& m) { return m.cast<float>(); }
Mat<float> to_float(const std::vector<Index>& v) {
  Mat<float> m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = static_cast<float>(v[i]);
  return m;
}
std::vector<Index> to_ids(const Mat<float>& m) {
  std::vector<Index> v(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = static_cast<Index>(m(i, 0));
  return v;
}

nlohmann::ordered_json stacked_spec_json(const StackedMNISTSpec& spec, const std::string& source_hash) {
  return {{"kind", "stackedmnist"},
          {"stacks", spec.stacks},
          {"train_count", spec.train_count},
          {"eval_count", spec.eval_count},
          {"source_sha256", source_hash}};
}

}  // namespace

std::string write_stacked_mnist(const std::filesystem::path& dir, const StackedMNIST& ds,
                                const std::string& source_hash) {
  DatasetArchive a;
  a.spec = stacked_spec_json(ds.spec, source_hash);
  a.seed = ds.seed;
  a.arrays["train_index"] = to_float(ds.train_index);
  a.arrays["eval_index"] = to_float(ds.eval_index);
  a.arrays["train_modes"] = to_float(ds.train_modes);
  a.arrays["eval_modes"] = to_float(ds.eval_modes);
  return write_archive(dir, a);
}

StackedMNIST read_stacked_mnist(const std::filesystem::path& dir) {
  const DatasetArchive a = read_archive(dir);
  if (a.spec.value("kind", "") != "stackedmnist") throw IngestionError(dir.string() + ": not a stacked digit archive");
  StackedMNIST ds;
  ds.seed = a.seed;
  ds.spec.stacks = a.spec.at("stacks").get<int>();
  ds.spec.train_count = a.spec.at("train_count").get<Index>();
  ds.spec.eval_count = a.spec.at("eval_count").get<Index>();
  ds.train_index = a.arrays.at("train_index").cast<std::int32_t>();
  ds.eval_index = a.arrays.at("eval_index").cast<std::int32_t>();
  ds.train_modes = to_ids(a.arrays.at("train_modes"));
  ds.eval_modes = to_ids(a.arrays.at("eval_modes"));
  if (ds.train_index.rows() != ds.spec.train_count || ds.eval_index.rows() != ds.spec.eval_count) {
    throw IntegrityError(dir.string() + ": stored counts disagree with the manifest spec");
  }
  return ds;
}

bool verify_stacked_rebuild(const std::filesystem::path& dir, const DigitSet& source) {
  const auto manifest = read_manifest(dir);
  StackedMNISTSpec spec;
  spec.stacks = manifest.at("spec").at("stacks").get<int>();
  spec.train_count = manifest.at("spec").at("train_count").get<Index>();
  spec.eval_count = manifest.at("spec").at("eval_count").get<Index>();
  const auto rebuilt = build_stacked_mnist(spec, source, manifest.at("seed").get<std::uint64_t>());
  const auto tmp = dir.parent_path() / (dir.filename().string() + ".verify");
  const std::string hash =
      write_stacked_mnist(tmp, rebuilt, manifest.at("spec").at("source_sha256").get<std::string>());
  std::filesystem::remove_all(tmp);
  return hash == manifest.at("hash").get<std::string>();
}

// ---------------------------------------------------------------------------
// Tabular data

MinMax MinMax::fit(const Mat<double>& x) {
  if (x.rows() == 0) throw IngestionError("min-max fit on an empty split");
  return MinMax{x.colwise().minCoeff().transpose(), x.colwise().maxCoeff().transpose()};
}

Mat<double> MinMax::apply(const Mat<double>& x) const {
  Mat<double> out(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double span = hi[j] - lo[j];
    for (Index i = 0; i < x.rows(); ++i) {
      const double v = span > 0 ? (x(i, j) - lo[j]) / span : x(i, j) - lo[j];
      out(i, j) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

std::vector<ColumnDescriptor> kdd99_schema() {
  static const char* kNames[] = {"duration",
                                 "protocol_type",
                                 "service",
                                 "flag",
                                 "src_bytes",
                                 "dst_bytes",
                                 "land",
                                 "wrong_fragment",
                                 "urgent",
                                 "hot",
                                 "num_failed_logins",
                                 "logged_in",
                                 "num_compromised",
                                 "root_shell",
                                 "su_attempted",
                                 "num_root",
                                 "num_file_creations",
                                 "num_shells",
                                 "num_access_files",
                                 "num_outbound_cmds",
                                 "is_host_login",
                                 "is_guest_login",
                                 "count",
                                 "srv_count",
                                 "serror_rate",
                                 "srv_serror_rate",
                                 "rerror_rate",
                                 "srv_rerror_rate",
                                 "same_srv_rate",
                                 "diff_srv_rate",
                                 "srv_diff_host_rate",
                                 "dst_host_count",
                                 "dst_host_srv_count",
                                 "dst_host_same_srv_rate",
                                 "dst_host_diff_srv_rate",
                                 "dst_host_same_src_port_rate",
                                 "dst_host_srv_diff_host_rate",
                                 "dst_host_serror_rate",
                                 "dst_host_srv_serror_rate",
                                 "dst_host_rerror_rate",
                                 "dst_host_srv_rerror_rate",
                                 "label"};
  std::vector<ColumnDescriptor> schema;
  for (std::size_t i = 0; i < std::size(kNames); ++i) {
    ColumnDescriptor c;
    c.name = kNames[i];
    if (i == 1 || i == 2 || i == 3) c.kind = ColumnKind::Categorical;
    if (i == 41) c.kind = ColumnKind::Label;
    schema.push_back(c);
  }
  return schema;
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

}  // namespace

TabularSplit ingest_tabular(std::istream& in, std::vector<ColumnDescriptor> schema, const TabularOptions& options) {
  if (!(options.train_fraction > 0 && options.train_fraction < 1)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  TabularSplit out;
  std::vector<std::vector<std::string>> rows;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    out.report.rows_read++;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) fields.push_back(trim(cell));
    bool ok = fields.size() == schema.size();
    for (std::size_t j = 0; ok && j < fields.size(); ++j) {
      double v;
      if (schema[j].kind == ColumnKind::Numeric) ok = parse_number(fields[j], v);
      else ok = !fields[j].empty();
    }
    if (!ok) {
      out.report.malformed++;
      if (out.report.malformed_lines.size() < 20) out.report.malformed_lines.push_back(line_no);
      continue;
    }
    rows.push_back(std::move(fields));
  }
  if (out.report.rows_read == 0) throw IngestionError("tabular source is empty");
  const double bad = static_cast<double>(out.report.malformed) / static_cast<double>(out.report.rows_read);
  if (bad > options.max_malformed_fraction) {
    throw IngestionError(std::to_string(out.report.malformed) + " of " + std::to_string(out.report.rows_read) +
                         " rows are malformed, above the allowed fraction");
  }

  // Vocabularies and layout.
  Index width = 0;
  int label_col = -1;
  for (std::size_t j = 0; j < schema.size(); ++j) {
    auto& c = schema[j];
    if (c.kind == ColumnKind::Label) {
      label_col = static_cast<int>(j);
      c.width = 0;
      continue;
    }
    if (c.kind == ColumnKind::Categorical) {
      std::set<std::string> vocab;
      for (const auto& r : rows) vocab.insert(r[j]);
      c.categories.assign(vocab.begin(), vocab.end());
      c.width = static_cast<Index>(c.categories.size());
    } else {
      c.width = 1;
    }
    c.offset = width;
    width += c.width;
  }

  const Index n = static_cast<Index>(rows.size());
  Mat<double> encoded = Mat<double>::Zero(n, width);
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < schema.size(); ++j) {
      const auto& c = schema[j];
      if (c.kind == ColumnKind::Numeric) {
        parse_number(r[j], encoded(i, c.offset));
      } else if (c.kind == ColumnKind::Categorical) {
        const auto it = std::lower_bound(c.categories.begin(), c.categories.end(), r[j]);
        encoded(i, c.offset + (it - c.categories.begin())) = 1.0;
      }
    }
    if (label_col >= 0) {
      std::string l = r[static_cast<std::size_t>(label_col)];
      if (!l.empty() && l.back() == '.') l.pop_back();
      const bool is_normal = l == options.normal_label;
      labels[static_cast<std::size_t>(i)] =
          options.convention == AnomalyConvention::NormalIsAnomaly ? (is_normal ? 1 : 0) : (is_normal ? 0 : 1);
    }
  }

  Rng rng = Rng::stream(options.seed, 7);
  const auto perm = rng.permutation(static_cast<std::size_t>(n));
  const auto n_train = static_cast<std::size_t>(std::llround(options.train_fraction * static_cast<double>(n)));
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto row = static_cast<Index>(perm[i]);
    if (i < n_train) out.train_rows.push_back(row);
    else out.test_rows.push_back(row);
  }
  std::sort(out.train_rows.begin(), out.train_rows.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());

  auto& fit_rows = out.fit_rows;
  for (Index r : out.train_rows)
    if (!options.train_on_inliers || labels[static_cast<std::size_t>(r)] == 0) fit_rows.push_back(r);
  if (fit_rows.empty()) throw IngestionError("training split holds no usable rows");

  auto gather = [&](const std::vector<Index>& ids) {
    Mat<double> m(static_cast<Index>(ids.size()), width);
    for (std::size_t i = 0; i < ids.size(); ++i) m.row(static_cast<Index>(i)) = encoded.row(ids[i]);
    return m;
  };
  auto labels_of = [&](const std::vector<Index>& ids) {
    std::vector<int> l;
    for (Index r : ids) l.push_back(labels[static_cast<std::size_t>(r)]);
    return l;
  };
  const Mat<double> train_raw = gather(fit_rows);
  const MinMax mm = MinMax::fit(train_raw);
  out.train.features = mm.apply(train_raw).cast<float>();
  out.train.labels = labels_of(fit_rows);
  out.train.schema = schema;
  out.test.features = mm.apply(gather(out.test_rows)).cast<float>();
  out.test.labels = labels_of(out.test_rows);
  out.test.schema = schema;
  return out;
}

TabularSplit load_kdd99(const std::filesystem::path& path, const TabularOptions& options) {
  std::ifstream in(path);
  if (!in) throw IngestionError("KDD99 source not found: '" + path.string() + "'");
  return ingest_tabular(in, kdd99_schema(), options);
}

}  // namespace meg
