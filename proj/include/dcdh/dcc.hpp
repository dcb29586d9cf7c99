#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcdh/codes.hpp"
#include "dcdh/dataset.hpp"
#include "dcdh/error.hpp"
#include "dcdh/losses.hpp"
#include "dcdh/nets.hpp"

// Discrete cyclic coordinate descent on the binary code matrix.
//
// With every network fixed, the B-dependent part of a stream objective
//   ||U^T B - rho S||^2 + alpha ||B - U||^2
// is ||U^T B||^2 - 2 Tr(B^T Q) with Q = rho U S + alpha U. Writing
// ||U^T B||^2 = Tr(G B B^T) for the k x k Gram matrix G = U U^T, a weighted
// sum of streams is again of that form with G and Q summed, so the solver
// only ever sees one (G, Q) pair.
//
// For bit row r (z = B.row(r)), everything except
//   2 z^T (sum_{t != r} G(r,t) B.row(t) - Q.row(r))
// is constant in z (z^T z = n), so the exact row minimizer is
//   z = sgn(Q.row(r) - sum_{t != r} G(r,t) B.row(t))
// with sgn(0) = +1.
namespace dcdh {

/// Q = rho * U S + alpha * U.
inline Matrix build_q(const Matrix& ubar, const SimilarityMatrix& s, double rho, double alpha) {
  detail::require(s.n() == ubar.cols(), "build_q: U has " + std::to_string(ubar.cols()) +
                                            " columns but S is " +
                                            detail::shape_str(s.n(), s.n()));
  Matrix q = rho * (ubar * s.values());
  q += alpha * ubar;
  return q;
}

/// Quadratic (Gram, k x k) and linear (Q, k x n) terms of the B subproblem.
struct DccProblem {
  Matrix gram;
  Matrix q;

  long k() const { return q.rows(); }
  long n() const { return q.cols(); }

  /// Single stream: G = U U^T with the given Q.
  static DccProblem from_stream(const Matrix& ubar, const Matrix& q) {
    detail::require(ubar.rows() == q.rows() && ubar.cols() == q.cols(),
                    "DccProblem: U is " + detail::shape_str(ubar.rows(), ubar.cols()) +
                        " but Q is " + detail::shape_str(q.rows(), q.cols()));
    return DccProblem{ubar * ubar.transpose(), q};
  }
};

/// ||U^T B||^2 - 2 Tr(B^T Q), evaluated as Tr(G B B^T) - 2 Tr(B^T Q).
inline double dcc_objective(const CodeMatrix& b, const DccProblem& problem) {
  detail::require(b.k() == problem.k() && b.n() == problem.n(),
                  "dcc_objective: B is " + detail::shape_str(b.k(), b.n()) + " but Q is " +
                      detail::shape_str(problem.k(), problem.n()));
  const Matrix bbt = b.values() * b.values().transpose();
  return problem.gram.cwiseProduct(bbt).sum() - 2.0 * problem.q.cwiseProduct(b.values()).sum();
}

inline double dcc_objective(const CodeMatrix& b, const Matrix& ubar, const Matrix& q) {
  return dcc_objective(b, DccProblem::from_stream(ubar, q));
}

/// Replaces bit row r with its exact minimizer, all other rows fixed.
inline CodeMatrix update_row(CodeMatrix b, const DccProblem& problem, long r) {
  detail::require(r >= 0 && r < b.k(), "update_row: row " + std::to_string(r) +
                                           " out of range for k=" + std::to_string(b.k()));
  detail::require(b.k() == problem.k() && b.n() == problem.n(), "update_row: shape mismatch");
  Eigen::RowVectorXd cross = problem.gram.row(r) * b.values();
  cross -= problem.gram(r, r) * b.values().row(r);
  const Eigen::RowVectorXd arg = problem.q.row(r) - cross;
  b.set_row(r, arg.unaryExpr([](double v) { return sign_pos(v); }));
  return b;
}

inline CodeMatrix update_row(CodeMatrix b, const Matrix& ubar, const Matrix& q, long r) {
  return update_row(std::move(b), DccProblem::from_stream(ubar, q), r);
}

/// Per-row objective trace of one sweep: trace[0] is the starting value,
/// trace[i + 1] the value after the i-th row update.
struct SweepResult {
  CodeMatrix codes;
  std::vector<double> trace;
};

inline void check_permutation(std::span<const long> order, long k) {
  std::vector<long> sorted(order.begin(), order.end());
  std::sort(sorted.begin(), sorted.end());
  bool ok = static_cast<long>(sorted.size()) == k;
  for (long i = 0; ok && i < k; ++i) ok = sorted[static_cast<std::size_t>(i)] == i;
  if (!ok) throw InputError("dcc_sweep: row order is not a permutation of 0.." + std::to_string(k));
}

inline std::vector<long> ascending_order(long k) {
  std::vector<long> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0L);
  return order;
}

/// Relative slack for the in-loop monotonicity assertion (roundoff only).
inline constexpr double kMonotoneSlack = 1e-10;

/// Updates each row in `order`; asserts that the objective never increases.
inline SweepResult dcc_sweep(CodeMatrix b, const DccProblem& problem, std::span<const long> order) {
  check_permutation(order, b.k());
  SweepResult out{std::move(b), {}};
  out.trace.push_back(dcc_objective(out.codes, problem));
  for (long r : order) {
    out.codes = update_row(std::move(out.codes), problem, r);
    const double value = dcc_objective(out.codes, problem);
    const double prev = out.trace.back();
    if (value > prev + kMonotoneSlack * std::max(1.0, std::abs(prev))) {
      throw NumericalError("dcc_sweep: objective increased at row " + std::to_string(r));
    }
    out.trace.push_back(value);
  }
  return out;
}

inline SweepResult dcc_sweep(CodeMatrix b, const Matrix& ubar, const Matrix& q,
                             std::span<const long> order) {
  return dcc_sweep(std::move(b), DccProblem::from_stream(ubar, q), order);
}

struct DccOptions {
  int max_sweeps = 10;
  double tol = 1e-6;  // relative objective decrease below which sweeping stops
  std::vector<long> order;  // empty: ascending
};

/// One embedding stream together with its weight in the joint objective.
struct WeightedStream {
  const EmbeddingMatrix* embedding;
  double weight;
};

/// Combined (G, Q) for a weighted sum of streams. Zero-weight streams are skipped.
inline DccProblem build_problem(std::span<const WeightedStream> streams, const SimilarityMatrix& s,
                                const HyperParams& hp) {
  long k = -1;
  long n = -1;
  for (const auto& st : streams) {
    if (st.weight == 0.0) continue;
    detail::require(st.embedding != nullptr, "solve_b: missing embedding for weighted stream");
    const auto& u = st.embedding->u;
    if (!u.allFinite()) throw NumericalError("solve_b: non-finite embedding");
    if (k < 0) {
      k = u.rows();
      n = u.cols();
    }
    detail::require(u.rows() == k && u.cols() == n, "solve_b: embeddings disagree in shape");
  }
  detail::require(k > 0, "solve_b: no stream has positive weight");
  DccProblem problem{Matrix::Zero(k, k), Matrix::Zero(k, n)};
  for (const auto& st : streams) {
    if (st.weight == 0.0) continue;
    const auto& u = st.embedding->u;
    problem.gram += st.weight * (u * u.transpose());
    problem.q += st.weight * build_q(u, s, hp.rho, hp.alpha);
  }
  return problem;
}

struct SolveResult {
  CodeMatrix codes;
  std::vector<double> objective;  // value at start, then after each sweep
  int sweeps = 0;
};

/// Minimizes the B-dependent part of the weighted multi-stream objective.
/// Starts from `init` when given, otherwise from sgn(sum_s w_s U_s).
inline SolveResult solve_b(std::span<const WeightedStream> streams, const SimilarityMatrix& s,
                           const HyperParams& hp, const DccOptions& opts = {},
                           std::optional<CodeMatrix> init = std::nullopt) {
  detail::require(opts.max_sweeps >= 1, "solve_b: max_sweeps must be >= 1");
  const DccProblem problem = build_problem(streams, s, hp);
  CodeMatrix b;
  if (init) {
    detail::require(init->k() == problem.k() && init->n() == problem.n(),
                    "solve_b: initial codes have the wrong shape");
    b = std::move(*init);
  } else {
    Matrix warm = Matrix::Zero(problem.k(), problem.n());
    for (const auto& st : streams)
      if (st.weight != 0.0) warm += st.weight * st.embedding->u;
    b = CodeMatrix::from_signs(warm);
  }
  const auto order = opts.order.empty() ? ascending_order(problem.k()) : opts.order;
  SolveResult out{std::move(b), {}, 0};
  out.objective.push_back(dcc_objective(out.codes, problem));
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    auto res = dcc_sweep(std::move(out.codes), problem, order);
    out.codes = std::move(res.codes);
    out.objective.push_back(res.trace.back());
    ++out.sweeps;
    const double prev = out.objective[out.objective.size() - 2];
    const double drop = prev - out.objective.back();
    if (drop < opts.tol * std::max(1.0, std::abs(prev))) break;
  }
  return out;
}

/// Three-stream convenience form with weights (1, lambda, mu).
inline SolveResult solve_b(const EmbeddingMatrix& u_v, const EmbeddingMatrix& u_l,
                           const EmbeddingMatrix& u_f, const SimilarityMatrix& s,
                           const HyperParams& hp, const DccOptions& opts = {},
                           std::optional<CodeMatrix> init = std::nullopt) {
  const WeightedStream streams[] = {{&u_v, 1.0}, {&u_l, hp.lambda}, {&u_f, hp.mu}};
  return solve_b(streams, s, hp, opts, std::move(init));
}

}  // namespace dcdh
