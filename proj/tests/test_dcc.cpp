#include <gtest/gtest.h>

#include "test_util.hpp"

namespace dcdh {
namespace {

struct Instance {
  Matrix ubar;
  SimilarityMatrix s{Matrix::Ones(1, 1)};
  HyperParams hp;
  Matrix q;
  CodeMatrix b;
};

Instance random_instance(std::mt19937_64& rng, long k, long n) {
  Instance in;
  in.ubar = testing::random_embedding(k, n, rng);
  in.s = build_similarity(testing::random_labels(n, 3, rng));
  in.hp = HyperParams::defaults_for(k);
  in.hp.alpha = 0.5 + static_cast<double>(rng() % 3);
  in.q = build_q(in.ubar, in.s, in.hp.rho, in.hp.alpha);
  in.b = testing::random_codes(k, n, rng);
  return in;
}

/// Brute force over all 2^n assignments of row r; returns the best row.
Eigen::RowVectorXd best_row(const CodeMatrix& b, const DccProblem& problem, long r, double* best_value) {
  const long n = b.n();
  double best = std::numeric_limits<double>::infinity();
  Eigen::RowVectorXd arg;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    Matrix trial = b.values();
    trial.row(r) = testing::row_from_mask(mask, n);
    const double v = dcc_objective(CodeMatrix(trial), problem);
    if (v < best) {
      best = v;
      arg = trial.row(r);
    }
  }
  if (best_value) *best_value = best;
  return arg;
}

bool no_single_row_improves(const CodeMatrix& b, const DccProblem& problem) {
  const double current = dcc_objective(b, problem);
  for (long r = 0; r < b.k(); ++r) {
    double best = 0.0;
    best_row(b, problem, r, &best);
    if (best < current - 1e-9 * std::max(1.0, std::abs(current))) return false;
  }
  return true;
}

TEST(BuildQ, LinearInEmbedding) {
  std::mt19937_64 rng(1);
  Matrix s = -Matrix::Ones(4, 4);
  s.diagonal().setOnes();
  EXPECT_EQ(build_q(Matrix::Zero(3, 4), SimilarityMatrix(s), 3.0, 1.0), Matrix::Zero(3, 4));
  const Matrix u = testing::random_embedding(3, 4, rng);
  EXPECT_EQ(build_q(u, SimilarityMatrix(s), 3.0, 0.0), 3.0 * (u * s));
}

TEST(BuildQ, MatchesNaiveMatmul) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(rng, 4, 7);
    const Matrix expected = in.hp.rho * testing::naive_matmul(in.ubar, in.s.values()) + in.hp.alpha * in.ubar;
    EXPECT_LT((in.q - expected).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_THROW(build_q(Matrix::Zero(2, 3), SimilarityMatrix(Matrix::Ones(4, 4)), 1.0, 1.0), InputError);
}

TEST(DccObjective, ScalarCase) {
  Matrix u(1, 1), q(1, 1), b(1, 1);
  u << 0.6;
  q << -0.8;
  b << -1;
  EXPECT_DOUBLE_EQ(dcc_objective(CodeMatrix(b), u, q), 0.36 - 2.0 * (-0.8) * (-1.0));
}

TEST(DccObjective, DiffersFromStreamLossByConstant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto in = random_instance(rng, 3, 6);
    const auto b2 = testing::random_codes(3, 6, rng);
    const double d_obj = dcc_objective(in.b, in.ubar, in.q) - dcc_objective(b2, in.ubar, in.q);
    const double d_loss =
        testing::naive_stream(in.ubar, in.b.values(), in.s.values(), in.hp.rho, in.hp.alpha) -
        testing::naive_stream(in.ubar, b2.values(), in.s.values(), in.hp.rho, in.hp.alpha);
    EXPECT_NEAR(d_obj, d_loss, 1e-8);
  }
}

TEST(DccObjective, CompletingTheSquare) {
  // U = c B with columns identical or opposite, rho = c k: the pairwise
  // residual vanishes and only the quantization gap remains.
  Matrix b(3, 4);
  b << 1, -1, 1, -1,
       1, -1, 1, -1,
       -1, 1, -1, 1;
  const double c = 0.5;
  const long k = 3, n = 4;
  Matrix s(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j) s(i, j) = b.col(i).dot(b.col(j)) > 0 ? 1.0 : -1.0;
  const double rho = c * k, alpha = 2.0;
  const Matrix u = c * b;
  const Matrix q = build_q(u, SimilarityMatrix(s), rho, alpha);
  const double expected = alpha * (1 - c) * (1 - c) * k * n - rho * rho * n * n -
                          alpha * (k * n + c * c * k * n);
  EXPECT_NEAR(dcc_objective(CodeMatrix(b), u, q), expected, 1e-10);
}

TEST(UpdateRow, SingleBitTakesSignOfQ) {
  Matrix u(1, 5), q(1, 5);
  u << 0.1, -0.2, 0.3, 0.9, -0.5;
  q << 0.4, -1.0, 2.0, -0.1, 0.0;
  const CodeMatrix b = CodeMatrix(-Matrix::Ones(1, 5));
  const auto out = update_row(b, u, q, 0);
  Eigen::RowVectorXd expected(5);
  expected << 1, -1, 1, -1, 1;  // tie at q = 0 -> +1
  EXPECT_EQ(out.values().row(0), expected);
}

TEST(UpdateRow, ZeroArgumentBreaksTiesUp) {
  const CodeMatrix b = CodeMatrix(-Matrix::Ones(2, 3));
  const DccProblem zero{Matrix::Zero(2, 2), Matrix::Zero(2, 3)};
  EXPECT_TRUE((update_row(b, zero, 1).values().row(1).array() == 1.0).all());
  EXPECT_TRUE((update_row(b, zero, 1).values().row(0).array() == -1.0).all());
}

TEST(UpdateRow, IsExactRowMinimizer) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    auto in = random_instance(rng, 3, 8);
    const auto problem = DccProblem::from_stream(in.ubar, in.q);
    const long r = static_cast<long>(rng() % 3);
    const auto out = update_row(in.b, problem, r);
    double best = 0.0;
    const auto arg = best_row(in.b, problem, r, &best);
    EXPECT_EQ(out.values().row(r), arg);
    EXPECT_NEAR(dcc_objective(out, problem), best, 1e-9 * std::max(1.0, std::abs(best)));
    for (long other = 0; other < 3; ++other) {
      if (other != r) {
        EXPECT_EQ(out.values().row(other), in.b.values().row(other));
      }
    }
  }
}

TEST(UpdateRow, RejectsBadRow) {
  std::mt19937_64 rng(5);
  auto in = random_instance(rng, 2, 3);
  EXPECT_THROW(update_row(in.b, in.ubar, in.q, 2), InputError);
  EXPECT_THROW(update_row(in.b, in.ubar, in.q, -1), InputError);
}

TEST(DccSweep, FixedPointIsUnchanged) {
  std::mt19937_64 rng(6);
  auto in = random_instance(rng, 4, 10);
  const auto problem = DccProblem::from_stream(in.ubar, in.q);
  const auto order = ascending_order(4);
  // Iterate to a fixed point, then check one more sweep is the identity.
  CodeMatrix b = in.b;
  for (int i = 0; i < 50; ++i) b = dcc_sweep(b, problem, order).codes;
  EXPECT_EQ(dcc_sweep(b, problem, order).codes, b);
}

TEST(DccSweep, ObjectiveIsNonIncreasing) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_instance(rng, 5, 12);
    const auto problem = DccProblem::from_stream(in.ubar, in.q);
    CodeMatrix b = in.b;
    double prev = dcc_objective(b, problem);
    for (int sweep = 0; sweep < 5; ++sweep) {
      const auto res = dcc_sweep(b, problem, ascending_order(5));
      ASSERT_EQ(res.trace.size(), 6u);
      EXPECT_EQ(res.trace.front(), prev);
      for (std::size_t i = 1; i < res.trace.size(); ++i) EXPECT_LE(res.trace[i], res.trace[i - 1]);
      prev = res.trace.back();
      b = res.codes;
    }
  }
}

TEST(DccSweep, TwoSweepsReachSingleRowOptimality) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto in = random_instance(rng, 2, 4);
    const auto problem = DccProblem::from_stream(in.ubar, in.q);
    CodeMatrix b = in.b;
    for (int sweep = 0; sweep < 2; ++sweep) b = dcc_sweep(b, problem, ascending_order(2)).codes;
    EXPECT_TRUE(no_single_row_improves(b, problem));
  }
}

TEST(DccSweep, RejectsInvalidPermutation) {
  std::mt19937_64 rng(9);
  auto in = random_instance(rng, 3, 4);
  const std::vector<long> dup{0, 0, 2};
  const std::vector<long> short_order{0, 1};
  EXPECT_THROW(dcc_sweep(in.b, in.ubar, in.q, dup), InputError);
  EXPECT_THROW(dcc_sweep(in.b, in.ubar, in.q, short_order), InputError);
}

TEST(SolveB, WeightCollapseMatchesSingleStream) {
  std::mt19937_64 rng(10);
  const long k = 4, n = 9;
  const EmbeddingMatrix uv{testing::random_embedding(k, n, rng), true};
  const EmbeddingMatrix ul{testing::random_embedding(k, n, rng), true};
  const EmbeddingMatrix uf{testing::random_embedding(k, n, rng), true};
  const auto s = build_similarity(testing::random_labels(n, 3, rng));
  HyperParams hp = HyperParams::defaults_for(k);
  hp.lambda = hp.mu = 0.0;
  const auto joint = solve_b(uv, ul, uf, s, hp);
  const WeightedStream single[] = {{&uv, 1.0}};
  EXPECT_EQ(joint.codes, solve_b(single, s, hp).codes);
}

TEST(SolveB, IdenticalStreamsActLikeOneHeavierStream) {
  std::mt19937_64 rng(11);
  const long k = 4, n = 9;
  const EmbeddingMatrix u{testing::random_embedding(k, n, rng), true};
  const auto s = build_similarity(testing::random_labels(n, 3, rng));
  HyperParams hp = HyperParams::defaults_for(k);
  const auto joint = solve_b(u, u, u, s, hp);
  const WeightedStream heavy[] = {{&u, 1.0 + hp.lambda + hp.mu}};
  EXPECT_EQ(joint.codes, solve_b(heavy, s, hp).codes);
}

TEST(SolveB, BeatsRandomAndIsLocallyOptimal) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const long k = 3, n = 6;
    const EmbeddingMatrix uv{testing::random_embedding(k, n, rng), true};
    const EmbeddingMatrix ul{testing::random_embedding(k, n, rng), true};
    const EmbeddingMatrix uf{testing::random_embedding(k, n, rng), true};
    const auto s = build_similarity(testing::random_labels(n, 3, rng));
    HyperParams hp = HyperParams::defaults_for(k);
    hp.lambda = 0.7;
    hp.mu = 0.4;
    DccOptions opts;
    opts.max_sweeps = 50;
    opts.tol = 0.0;
    const auto res = solve_b(uv, ul, uf, s, hp, opts);
    const WeightedStream streams[] = {{&uv, 1.0}, {&ul, hp.lambda}, {&uf, hp.mu}};
    const auto problem = build_problem(streams, s, hp);
    const double value = dcc_objective(res.codes, problem);
    for (int r = 0; r < 200; ++r) {
      EXPECT_LE(value, dcc_objective(testing::random_codes(k, n, rng), problem) + 1e-9);
    }
    for (std::size_t i = 1; i < res.objective.size(); ++i) EXPECT_LE(res.objective[i], res.objective[i - 1]);
    EXPECT_TRUE(no_single_row_improves(res.codes, problem));
  }
}

TEST(SolveB, SmallInstancesAreGloballyOrRowOptimal) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const long k = 3, n = 5;  // n * k = 15 bits -> 32768 assignments
    const EmbeddingMatrix uv{testing::random_embedding(k, n, rng), true};
    const EmbeddingMatrix ul{testing::random_embedding(k, n, rng), true};
    const EmbeddingMatrix uf{testing::random_embedding(k, n, rng), true};
    const auto s = build_similarity(testing::random_labels(n, 2, rng));
    const HyperParams hp = HyperParams::defaults_for(k);
    const auto res = solve_b(uv, ul, uf, s, hp);
    const WeightedStream streams[] = {{&uv, 1.0}, {&ul, hp.lambda}, {&uf, hp.mu}};
    const auto problem = build_problem(streams, s, hp);
    double global = std::numeric_limits<double>::infinity();
    for (std::uint64_t mask = 0; mask < (1ULL << (n * k)); ++mask) {
      Matrix b(k, n);
      for (long i = 0; i < n * k; ++i) b.data()[i] = ((mask >> i) & 1U) ? 1.0 : -1.0;
      global = std::min(global, dcc_objective(CodeMatrix(b), problem));
    }
    const double value = dcc_objective(res.codes, problem);
    EXPECT_GE(value, global - 1e-9);
    const bool global_opt = value <= global + 1e-9 * std::max(1.0, std::abs(global));
    EXPECT_TRUE(global_opt || no_single_row_improves(res.codes, problem));
  }
}

TEST(SolveB, DeterministicAndBinary) {
  std::mt19937_64 rng(14);
  const EmbeddingMatrix u{testing::random_embedding(5, 20, rng), true};
  const auto s = build_similarity(testing::random_labels(20, 4, rng));
  const HyperParams hp = HyperParams::defaults_for(5);
  const WeightedStream st[] = {{&u, 1.0}};
  const auto a = solve_b(st, s, hp);
  const auto b = solve_b(st, s, hp);
  EXPECT_EQ(a.codes, b.codes);
  EXPECT_TRUE(((a.codes.values().array() == 1.0) || (a.codes.values().array() == -1.0)).all());
}

TEST(SolveB, RejectsNonFiniteEmbeddings) {
  Matrix bad = Matrix::Zero(2, 3);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const EmbeddingMatrix u{bad, true};
  const WeightedStream st[] = {{&u, 1.0}};
  EXPECT_THROW(solve_b(st, SimilarityMatrix(Matrix::Ones(3, 3)), HyperParams::defaults_for(2)),
               NumericalError);
}

}  // namespace
}  // namespace dcdh
