#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dcdh/binary_io.hpp"
#include "dcdh/error.hpp"

namespace dcdh {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using LabelMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Features (n x d, one sample per row) with multi-hot labels (n x c).
///
/// Construction validates: n >= 2, d >= 1, c >= 1, finite features, label
/// entries in {0,1} and at least one positive label per row.
class Dataset {
 public:
  Dataset(Matrix features, LabelMatrix labels)
      : features_(std::move(features)), labels_(std::move(labels)) {
    validate();
  }

  const Matrix& features() const { return features_; }
  const LabelMatrix& labels() const { return labels_; }
  long n() const { return features_.rows(); }
  long d() const { return features_.cols(); }
  long c() const { return labels_.cols(); }

  /// Rows selected by `indices`, in that order.
  Dataset subset(const std::vector<long>& indices) const {
    Matrix f(static_cast<long>(indices.size()), d());
    LabelMatrix l(static_cast<long>(indices.size()), c());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const long i = indices[r];
      detail::require(i >= 0 && i < n(), "subset index out of range: " + std::to_string(i));
      f.row(static_cast<long>(r)) = features_.row(i);
      l.row(static_cast<long>(r)) = labels_.row(i);
    }
    return Dataset(std::move(f), std::move(l));
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.features_ == b.features_ && a.labels_ == b.labels_;
  }

 private:
  void validate() const {
    detail::require(features_.rows() == labels_.rows(),
                    "feature rows (" + std::to_string(features_.rows()) +
                        ") != label rows (" + std::to_string(labels_.rows()) + ")");
    detail::require(n() >= 2, "dataset needs at least 2 samples");
    detail::require(d() >= 1, "dataset needs at least 1 feature");
    detail::require(c() >= 1, "dataset needs at least 1 class");
    for (long i = 0; i < n(); ++i) {
      if (!features_.row(i).allFinite()) {
        throw InputError("non-finite feature in row " + std::to_string(i + 1));
      }
      bool any = false;
      for (long t = 0; t < c(); ++t) {
        const auto v = labels_(i, t);
        detail::require(v <= 1, "label entry not 0/1 in row " + std::to_string(i + 1));
        any = any || v == 1;
      }
      if (!any) throw InputError("all-zero label row " + std::to_string(i + 1));
    }
  }

  Matrix features_;
  LabelMatrix labels_;
};

/// Pairwise similarity: +1 when two samples share a class, -1 otherwise.
class SimilarityMatrix {
 public:
  explicit SimilarityMatrix(Matrix s) : s_(std::move(s)) {
    detail::require(s_.rows() == s_.cols(), "similarity matrix must be square");
  }
  const Matrix& values() const { return s_; }
  long n() const { return s_.rows(); }
  double operator()(long i, long j) const { return s_(i, j); }

  /// Restriction to the rows/columns in `idx`.
  SimilarityMatrix sub(const std::vector<long>& idx) const {
    const long m = static_cast<long>(idx.size());
    Matrix out(m, m);
    for (long a = 0; a < m; ++a)
      for (long b = 0; b < m; ++b) out(a, b) = s_(idx[a], idx[b]);
    return SimilarityMatrix(std::move(out));
  }

 private:
  Matrix s_;
};

inline SimilarityMatrix build_similarity(const LabelMatrix& labels) {
  const long n = labels.rows();
  for (long i = 0; i < n; ++i) {
    if ((labels.row(i).array() != 0).count() == 0) {
      throw InputError("all-zero label row " + std::to_string(i + 1));
    }
  }
  const Eigen::MatrixXi l = labels.cast<int>();
  const Eigen::MatrixXi shared = l * l.transpose();
  Matrix s(n, n);
  for (long j = 0; j < n; ++j)
    for (long i = 0; i < n; ++i) s(i, j) = shared(i, j) > 0 ? 1.0 : -1.0;
  return SimilarityMatrix(std::move(s));
}

struct Split {
  std::vector<long> query_indices;
  std::vector<long> database_indices;
};

/// Seeded random partition into `n_query` queries and the remaining database.
/// Both index lists come back sorted ascending.
inline Split split_query_database(const Dataset& dataset, long n_query, std::uint64_t seed) {
  const long n = dataset.n();
  if (n_query <= 0 || n_query >= n) {
    throw InputError("n_query must be in (0, " + std::to_string(n) + "), got " +
                     std::to_string(n_query));
  }
  std::vector<long> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0L);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the result does not depend on the
  // standard library's std::shuffle.
  for (long i = n - 1; i > 0; --i) {
    const auto j = static_cast<long>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  Split split;
  split.query_indices.assign(perm.begin(), perm.begin() + n_query);
  split.database_indices.assign(perm.begin() + n_query, perm.end());
  std::sort(split.query_indices.begin(), split.query_indices.end());
  std::sort(split.database_indices.begin(), split.database_indices.end());
  return split;
}

/// c Gaussian balls with one-hot labels. Sample i belongs to class i mod c,
/// centers are drawn from N(0, I) and samples from N(center, spread^2 I).
inline Dataset synth_clusters(long n, long d, long c, double spread, std::uint64_t seed) {
  detail::require(c >= 1 && d >= 1, "synth_clusters: d and c must be positive");
  detail::require(n >= c, "synth_clusters: n (" + std::to_string(n) + ") < c (" +
                              std::to_string(c) + ")");
  detail::require(n >= 2, "synth_clusters: n must be at least 2");
  detail::require(spread > 0.0 && std::isfinite(spread), "synth_clusters: spread must be > 0");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix centers(c, d);
  for (long t = 0; t < c; ++t) {
    bool distinct = false;
    while (!distinct) {
      for (long j = 0; j < d; ++j) centers(t, j) = normal(rng);
      distinct = true;
      for (long u = 0; u < t; ++u) distinct = distinct && centers.row(u) != centers.row(t);
    }
  }
  Matrix features(n, d);
  LabelMatrix labels = LabelMatrix::Zero(n, c);
  for (long i = 0; i < n; ++i) {
    const long cls = i % c;
    labels(i, cls) = 1;
    for (long j = 0; j < d; ++j) features(i, j) = centers(cls, j) + spread * normal(rng);
  }
  return Dataset(std::move(features), std::move(labels));
}

enum class DatasetFormat { csv, packed };

namespace detail {

inline constexpr std::string_view kDatasetMagic = "DCDH";
inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, const std::string& where) {
  T value{};
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw InputError("cannot parse '" + s + "' " + where);
  }
  return value;
}

inline long parse_header_field(const std::string& field, const char* key) {
  const std::string prefix = std::string(key) + "=";
  if (field.rfind(prefix, 0) != 0) {
    throw InputError("CSV header must be 'd=<d>,c=<c>', got field '" + field + "'");
  }
  return parse_number<long>(field.substr(prefix.size()), "in CSV header");
}

inline Dataset load_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty CSV dataset");
  const auto header = split_commas(trim(line));
  if (header.size() != 2) throw InputError("CSV header must be 'd=<d>,c=<c>'");
  const long d = parse_header_field(header[0], "d");
  const long c = parse_header_field(header[1], "c");
  require(d >= 1 && c >= 1, "CSV header dimensions must be positive");

  std::vector<double> feats;
  std::vector<std::uint8_t> labs;
  long row = 0;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    ++row;
    const std::string where = "in row " + std::to_string(row);
    const auto fields = split_commas(line);
    if (static_cast<long>(fields.size()) != d + c) {
      throw InputError("expected " + std::to_string(d + c) + " fields, got " +
                       std::to_string(fields.size()) + " " + where);
    }
    bool any = false;
    for (long j = 0; j < d; ++j) feats.push_back(parse_number<double>(fields[j], where));
    for (long t = 0; t < c; ++t) {
      const auto& f = fields[static_cast<std::size_t>(d + t)];
      if (f != "0" && f != "1") throw InputError("label must be 0 or 1 " + where);
      labs.push_back(f == "1" ? 1 : 0);
      any = any || f == "1";
    }
    if (!any) throw InputError("all-zero label row " + std::to_string(row));
  }
  Matrix features(row, d);
  LabelMatrix labels(row, c);
  for (long i = 0; i < row; ++i) {
    for (long j = 0; j < d; ++j) features(i, j) = feats[static_cast<std::size_t>(i * d + j)];
    for (long t = 0; t < c; ++t) labels(i, t) = labs[static_cast<std::size_t>(i * c + t)];
  }
  return Dataset(std::move(features), std::move(labels));
}

inline void save_csv(std::ostream& out, const Dataset& ds) {
  out << "d=" << ds.d() << ",c=" << ds.c() << '\n';
  char buf[64];
  for (long i = 0; i < ds.n(); ++i) {
    for (long j = 0; j < ds.d(); ++j) {
      // Shortest representation that round-trips exactly.
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), ds.features()(i, j));
      out.write(buf, end - buf);
      out << ',';
    }
    for (long t = 0; t < ds.c(); ++t) {
      out << static_cast<int>(ds.labels()(i, t)) << (t + 1 < ds.c() ? "," : "\n");
    }
  }
}

inline Dataset load_packed(std::istream& in) {
  io::expect_magic(in, kDatasetMagic, "packed dataset");
  const auto version = io::read_le<std::uint16_t>(in, "version");
  if (version != kDatasetVersion) {
    throw InputError("unsupported dataset version " + std::to_string(version));
  }
  const auto n = io::read_le<std::uint64_t>(in, "n");
  const auto d = io::read_le<std::uint64_t>(in, "d");
  const auto c = io::read_le<std::uint64_t>(in, "c");
  require(n >= 2 && d >= 1 && c >= 1 && n < (1ULL << 32) && d < (1ULL << 32) && c < (1ULL << 32),
          "packed dataset header has implausible dimensions");
  Matrix features(static_cast<long>(n), static_cast<long>(d));
  for (long i = 0; i < features.rows(); ++i)
    for (long j = 0; j < features.cols(); ++j)
      features(i, j) = static_cast<double>(io::read_le<float>(in, "features"));
  LabelMatrix labels(static_cast<long>(n), static_cast<long>(c));
  const std::uint64_t nbits = n * c;
  std::uint8_t byte = 0;
  for (std::uint64_t b = 0; b < nbits; ++b) {
    if (b % 8 == 0) byte = io::read_le<std::uint8_t>(in, "labels");
    labels(static_cast<long>(b / c), static_cast<long>(b % c)) = (byte >> (b % 8)) & 1U;
  }
  io::expect_eof(in, "packed dataset");
  for (long i = 0; i < labels.rows(); ++i) {
    if ((labels.row(i).array() != 0).count() == 0) {
      throw InputError("all-zero label row " + std::to_string(i + 1));
    }
  }
  return Dataset(std::move(features), std::move(labels));
}

inline void save_packed(std::ostream& out, const Dataset& ds) {
  io::write_magic(out, kDatasetMagic);
  io::write_le<std::uint16_t>(out, kDatasetVersion);
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(ds.n()));
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(ds.d()));
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(ds.c()));
  for (long i = 0; i < ds.n(); ++i)
    for (long j = 0; j < ds.d(); ++j)
      io::write_le<float>(out, static_cast<float>(ds.features()(i, j)));
  const auto c = static_cast<std::uint64_t>(ds.c());
  const std::uint64_t nbits = static_cast<std::uint64_t>(ds.n()) * c;
  std::uint8_t byte = 0;
  for (std::uint64_t b = 0; b < nbits; ++b) {
    if (ds.labels()(static_cast<long>(b / c), static_cast<long>(b % c)) != 0) {
      byte = static_cast<std::uint8_t>(byte | (1U << (b % 8)));
    }
    if (b % 8 == 7 || b + 1 == nbits) {
      io::write_le<std::uint8_t>(out, byte);
      byte = 0;
    }
  }
}

}  // namespace detail

/// Sniffs the leading magic: packed files start with "DCDH", anything else is CSV.
inline DatasetFormat detect_dataset_format(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  char buf[4] = {};
  in.read(buf, 4);
  return (in.gcount() == 4 && std::string_view(buf, 4) == detail::kDatasetMagic)
             ? DatasetFormat::packed
             : DatasetFormat::csv;
}

inline Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  if (!std::filesystem::exists(path)) throw InputError("dataset not found: " + path.string());
  auto in = io::open_in(path);
  try {
    return format == DatasetFormat::csv ? detail::load_csv(in) : detail::load_packed(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("dataset not found: " + path.string());
  return load_dataset(path, detect_dataset_format(path));
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path, DatasetFormat format) {
  io::atomic_write(path, [&](std::ostream& out) {
    if (format == DatasetFormat::csv) {
      detail::save_csv(out, ds);
    } else {
      detail::save_packed(out, ds);
    }
  });
}

}  // namespace dcdh
