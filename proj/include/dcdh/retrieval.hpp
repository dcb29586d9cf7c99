#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dcdh/binary_io.hpp"
#include "dcdh/codes.hpp"
#include "dcdh/dataset.hpp"
#include "dcdh/error.hpp"

namespace dcdh {

/// Bit-packed codes: ceil(k/64) little-endian words per code, bit j of code i
/// set iff B(j, i) = +1. Bits past k in the last word are always zero.
class PackedCodes {
 public:
  PackedCodes() = default;
  PackedCodes(long n, long k, std::vector<std::uint64_t> words) : n_(n), k_(k), words_(std::move(words)) {
    detail::require(n >= 0 && k >= 1, "PackedCodes: n must be >= 0 and k >= 1");
    detail::require(words_.size() == static_cast<std::size_t>(n * words_per_code()),
                    "PackedCodes: word count does not match n and k");
    const long tail = k_ % 64;
    if (tail != 0) {
      const std::uint64_t mask = ~((std::uint64_t{1} << tail) - 1);
      for (long i = 0; i < n_; ++i) {
        detail::require((code(i).back() & mask) == 0, "PackedCodes: nonzero padding bits in code " +
                                                          std::to_string(i));
      }
    }
  }

  long n() const { return n_; }
  long k() const { return k_; }
  long words_per_code() const { return (k_ + 63) / 64; }
  const std::vector<std::uint64_t>& words() const { return words_; }

  std::span<const std::uint64_t> code(long i) const {
    return {words_.data() + i * words_per_code(), static_cast<std::size_t>(words_per_code())};
  }

  friend bool operator==(const PackedCodes&, const PackedCodes&) = default;

 private:
  long n_ = 0;
  long k_ = 1;
  std::vector<std::uint64_t> words_;
};

inline PackedCodes pack_codes(const CodeMatrix& b) {
  const long k = b.k();
  const long wpc = (k + 63) / 64;
  std::vector<std::uint64_t> words(static_cast<std::size_t>(b.n() * wpc), 0);
  for (long i = 0; i < b.n(); ++i) {
    for (long j = 0; j < k; ++j) {
      if (b(j, i) > 0) words[static_cast<std::size_t>(i * wpc + j / 64)] |= std::uint64_t{1} << (j % 64);
    }
  }
  return PackedCodes(b.n(), k, std::move(words));
}

inline CodeMatrix unpack_codes(const PackedCodes& p) {
  Matrix b(p.k(), p.n());
  for (long i = 0; i < p.n(); ++i) {
    const auto code = p.code(i);
    for (long j = 0; j < p.k(); ++j) {
      b(j, i) = ((code[static_cast<std::size_t>(j / 64)] >> (j % 64)) & 1U) ? 1.0 : -1.0;
    }
  }
  return CodeMatrix(std::move(b));
}

/// Number of differing bits (xor + popcount).
inline int hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  detail::require(a.size() == b.size(), "hamming: code length mismatch");
  int d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += std::popcount(a[w] ^ b[w]);
  return d;
}

/// Database indices in ascending Hamming distance, ties by ascending index.
struct RankedList {
  std::vector<long> indices;
  std::vector<int> distances;  // distances[p] belongs to indices[p]
};

inline RankedList rank(std::span<const std::uint64_t> query, long query_k, const PackedCodes& db) {
  detail::require(query_k == db.k(), "rank: query has k=" + std::to_string(query_k) +
                                         " but database has k=" + std::to_string(db.k()));
  // Counting sort over distances 0..k keeps equal distances in index order.
  std::vector<int> dist(static_cast<std::size_t>(db.n()));
  std::vector<long> count(static_cast<std::size_t>(db.k() + 2), 0);
  for (long i = 0; i < db.n(); ++i) {
    dist[static_cast<std::size_t>(i)] = hamming(query, db.code(i));
    ++count[static_cast<std::size_t>(dist[static_cast<std::size_t>(i)] + 1)];
  }
  for (std::size_t d = 1; d < count.size(); ++d) count[d] += count[d - 1];
  RankedList out{std::vector<long>(static_cast<std::size_t>(db.n())),
                 std::vector<int>(static_cast<std::size_t>(db.n()))};
  for (long i = 0; i < db.n(); ++i) {
    const int d = dist[static_cast<std::size_t>(i)];
    const auto pos = static_cast<std::size_t>(count[static_cast<std::size_t>(d)]++);
    out.indices[pos] = i;
    out.distances[pos] = d;
  }
  return out;
}

inline RankedList rank(const PackedCodes& queries, long q, const PackedCodes& db) {
  return rank(queries.code(q), queries.k(), db);
}

/// rel[j] = 1 iff database item j shares a class with the query.
inline std::vector<std::uint8_t> relevance(const Eigen::Ref<const Eigen::Matrix<std::uint8_t, 1, Eigen::Dynamic>>& query_labels,
                                           const LabelMatrix& db_labels) {
  detail::require(query_labels.size() == db_labels.cols(), "relevance: class count mismatch");
  std::vector<std::uint8_t> rel(static_cast<std::size_t>(db_labels.rows()), 0);
  for (long j = 0; j < db_labels.rows(); ++j) {
    for (long t = 0; t < db_labels.cols(); ++t) {
      if (query_labels(t) != 0 && db_labels(j, t) != 0) {
        rel[static_cast<std::size_t>(j)] = 1;
        break;
      }
    }
  }
  return rel;
}

/// Average precision over the full ranking; nullopt when nothing is relevant.
inline std::optional<double> average_precision(const RankedList& ranking,
                                               std::span<const std::uint8_t> rel) {
  detail::require(ranking.indices.size() == rel.size(), "average_precision: size mismatch");
  long hits = 0;
  double sum = 0.0;
  for (std::size_t p = 0; p < ranking.indices.size(); ++p) {
    if (rel[static_cast<std::size_t>(ranking.indices[p])] != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(p + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

struct MapResult {
  double map = 0.0;
  long evaluated = 0;
  long skipped = 0;  // queries with no relevant database item
};

inline MapResult mean_average_precision(std::span<const RankedList> rankings,
                                        std::span<const std::vector<std::uint8_t>> rel) {
  detail::require(!rankings.empty(), "mean_average_precision: no rankings");
  detail::require(rankings.size() == rel.size(), "mean_average_precision: size mismatch");
  MapResult out;
  double sum = 0.0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    if (auto ap = average_precision(rankings[q], rel[q])) {
      sum += *ap;
      ++out.evaluated;
    } else {
      ++out.skipped;
    }
  }
  out.map = out.evaluated > 0 ? sum / static_cast<double>(out.evaluated) : 0.0;
  return out;
}

/// Fraction of relevant items among the first min(K, n) ranked.
inline double precision_at_k(const RankedList& ranking, std::span<const std::uint8_t> rel, long top_k) {
  detail::require(top_k >= 1, "precision_at_k: K must be >= 1");
  detail::require(ranking.indices.size() == rel.size(), "precision_at_k: size mismatch");
  const long cutoff = std::min<long>(top_k, static_cast<long>(ranking.indices.size()));
  detail::require(cutoff >= 1, "precision_at_k: empty ranking");
  long hits = 0;
  for (long p = 0; p < cutoff; ++p) hits += rel[static_cast<std::size_t>(ranking.indices[static_cast<std::size_t>(p)])] != 0;
  return static_cast<double>(hits) / static_cast<double>(cutoff);
}

/// Random-hyperplane LSH: sgn(W x) for a seeded standard Gaussian W (k x d).
inline CodeMatrix lsh_codes(const Matrix& features, long k, std::uint64_t seed) {
  detail::require(k >= 1, "lsh_codes: k must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix w(k, features.cols());
  for (long r = 0; r < k; ++r)
    for (long j = 0; j < features.cols(); ++j) w(r, j) = normal(rng);
  return CodeMatrix::from_signs(w * features.transpose());
}

/// Worker count from DCDH_THREADS (default 1).
inline unsigned thread_cap() {
  if (const char* env = std::getenv("DCDH_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return 1;
}

struct EvalReport {
  MapResult map;
  std::vector<long> k_grid;
  std::vector<double> precision;  // mean precision@K over queries, per grid entry
};

/// Ranks every query against the database and aggregates MAP and precision@K.
/// Precision@K averages over the same queries MAP evaluates.
inline EvalReport evaluate(const PackedCodes& queries, const PackedCodes& db,
                           const LabelMatrix& query_labels, const LabelMatrix& db_labels,
                           std::vector<long> k_grid) {
  detail::require(queries.n() == query_labels.rows(), "evaluate: query codes/labels count mismatch");
  detail::require(db.n() == db_labels.rows(), "evaluate: database codes/labels count mismatch");
  detail::require(query_labels.cols() == db_labels.cols(), "evaluate: class count mismatch");
  detail::require(queries.k() == db.k(), "evaluate: query and database code lengths differ");
  detail::require(queries.n() >= 1 && db.n() >= 1, "evaluate: empty query or database set");
  for (std::size_t i = 0; i < k_grid.size(); ++i) {
    detail::require(k_grid[i] >= 1 && (i == 0 || k_grid[i] > k_grid[i - 1]),
                    "evaluate: K grid must be positive and strictly ascending");
  }
  const auto nq = static_cast<std::size_t>(queries.n());
  std::vector<RankedList> rankings(nq);
  std::vector<std::vector<std::uint8_t>> rels(nq);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t q = begin; q < end; ++q) {
      rankings[q] = rank(queries, static_cast<long>(q), db);
      rels[q] = relevance(query_labels.row(static_cast<long>(q)), db_labels);
    }
  };
  const std::size_t workers = std::min<std::size_t>(thread_cap(), nq);
  if (workers <= 1) {
    work(0, nq);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (nq + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t b = w * chunk;
      const std::size_t e = std::min(nq, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  EvalReport report;
  report.map = mean_average_precision(rankings, rels);
  report.k_grid = std::move(k_grid);
  for (long top_k : report.k_grid) {
    double sum = 0.0;
    long used = 0;
    for (std::size_t q = 0; q < nq; ++q) {
      if (std::none_of(rels[q].begin(), rels[q].end(), [](auto r) { return r != 0; })) continue;
      sum += precision_at_k(rankings[q], rels[q], top_k);
      ++used;
    }
    report.precision.push_back(used > 0 ? sum / static_cast<double>(used) : 0.0);
  }
  return report;
}

namespace detail {
inline constexpr std::string_view kCodesMagic = "DCDHCODE";
inline constexpr std::uint16_t kCodesVersion = 1;
}  // namespace detail

inline void write_codes(std::ostream& out, const PackedCodes& codes) {
  io::write_magic(out, detail::kCodesMagic);
  io::write_le<std::uint16_t>(out, detail::kCodesVersion);
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(codes.n()));
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(codes.k()));
  for (auto w : codes.words()) io::write_le<std::uint64_t>(out, w);
}

inline PackedCodes read_codes(std::istream& in) {
  io::expect_magic(in, detail::kCodesMagic, "codes");
  const auto version = io::read_le<std::uint16_t>(in, "codes version");
  if (version != detail::kCodesVersion) {
    throw InputError("unsupported codes version " + std::to_string(version));
  }
  const auto n = io::read_le<std::uint64_t>(in, "n");
  const auto k = io::read_le<std::uint64_t>(in, "k");
  detail::require(k >= 1 && k < (1ULL << 24) && n < (1ULL << 40), "codes header has implausible n/k");
  const std::uint64_t total = n * ((k + 63) / 64);
  std::vector<std::uint64_t> words;
  words.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(total, 1ULL << 24)));
  for (std::uint64_t i = 0; i < total; ++i) words.push_back(io::read_le<std::uint64_t>(in, "code words"));
  io::expect_eof(in, "codes");
  return PackedCodes(static_cast<long>(n), static_cast<long>(k), std::move(words));
}

inline void save_codes(const PackedCodes& codes, const std::filesystem::path& path) {
  io::atomic_write(path, [&](std::ostream& out) { write_codes(out, codes); });
}

inline PackedCodes load_codes(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  try {
    return read_codes(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace dcdh
