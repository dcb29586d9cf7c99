#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

namespace dcdh {
namespace {

constexpr double kEps = 1e-5;
constexpr double kGradTol = 1e-4;

struct Batch {
  Matrix x;
  LabelMatrix l;
  CodeMatrix b;
  SimilarityMatrix s{Matrix::Ones(1, 1)};
};

Batch random_batch(std::mt19937_64& rng, long n, long d, long c, long k) {
  Batch out;
  out.x = testing::random_matrix(n, d, rng, -2, 2);
  out.l = testing::random_labels(n, c, rng);
  out.b = testing::random_codes(k, n, rng);
  out.s = build_similarity(out.l);
  return out;
}

/// Joint objective assembled from the public forward passes and loss oracles.
double joint_value(const Networks& nets, const Batch& bt, const HyperParams& hp) {
  const auto uv = visual_forward(bt.x, nets.visual).first;
  const auto ul = label_forward(bt.l, nets.label).first;
  const auto uf = fusion_forward(uv, ul, nets.fusion).first;
  const auto p = classify(uf, nets.classifier).probs;
  return joint_loss(uv, ul, uf, bt.b, bt.s, p, bt.l, hp).total;
}

Dataset toy() { return synth_clusters(600, 16, 3, 1.0, 0); }

TrainConfig small_config(Mode mode = Mode::full) {
  TrainConfig cfg;
  cfg.hp = HyperParams::defaults_for(8);
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.arch = {12, 6};
  cfg.mode = mode;
  cfg.seed = 5;
  cfg.learning_rate = 1e-4;
  return cfg;
}

TEST(BatchGradients, MatchFiniteDifferencesForEveryNetwork) {
  for (int draw = 0; draw < 20; ++draw) {
    std::mt19937_64 rng(200 + static_cast<unsigned>(draw));
    const long k = 3;
    const auto nets = init_networks(4, 3, k, {5, 4}, static_cast<std::uint64_t>(draw));
    const auto bt = random_batch(rng, 5, 4, 3, k);
    HyperParams hp = HyperParams::defaults_for(k);
    hp.lambda = 0.7;
    hp.mu = 0.3;
    const auto g = batch_gradients(nets, bt.x, bt.l, bt.b, bt.s, hp);
    EXPECT_NEAR(g.loss, joint_value(nets, bt, hp), 1e-9 * std::max(1.0, g.loss));

    auto with = [&](auto member) {
      return [&, member](const MlpParams& p) {
        Networks n = nets;
        n.*member = p;
        return joint_value(n, bt, hp);
      };
    };
    EXPECT_LT(grad_check(with(&Networks::visual), nets.visual, g.grad.visual, kEps), kGradTol);
    EXPECT_LT(grad_check(with(&Networks::label), nets.label, g.grad.label, kEps), kGradTol);
    EXPECT_LT(grad_check(with(&Networks::fusion), nets.fusion, g.grad.fusion, kEps), kGradTol);
    EXPECT_LT(grad_check(with(&Networks::classifier), nets.classifier, g.grad.classifier, kEps),
              kGradTol);
  }
}

TEST(BatchGradients, InactiveStreamsGetZeroGradient) {
  std::mt19937_64 rng(3);
  const auto nets = init_networks(4, 3, 3, {5, 4}, 1);
  const auto bt = random_batch(rng, 6, 4, 3, 3);
  HyperParams hp = HyperParams::defaults_for(3);
  hp.lambda = hp.mu = 0.0;
  const auto g = batch_gradients(nets, bt.x, bt.l, bt.b, bt.s, hp);
  EXPECT_EQ(g.grad.label, nets.label.zeros_like());
  EXPECT_EQ(g.grad.fusion, nets.fusion.zeros_like());
  EXPECT_EQ(g.grad.classifier, nets.classifier.zeros_like());
}

TEST(Train, ZeroLearningRateLeavesParametersAndSolvesOnce) {
  const Dataset ds = synth_clusters(60, 5, 3, 1.0, 2);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  const Model m = train(ds, cfg);
  const auto init = init_networks(5, 3, 8, cfg.arch, cfg.seed);
  EXPECT_EQ(m.nets, init);

  const HyperParams hp = cfg.effective_hp();
  const auto e = embed_all(init, ds.features(), ds.labels(), hp);
  Matrix warm = e.visual.u + hp.lambda * e.label.u + hp.mu * e.fused.u;
  const auto s = build_similarity(ds.labels());
  const auto expected = solve_b(e.visual, e.label, e.fused, s, hp, cfg.dcc, CodeMatrix::from_signs(warm));
  EXPECT_EQ(m.codes, expected.codes);
  ASSERT_EQ(m.history.size(), 1u);
}

TEST(Train, VisualModeNeverTouchesOtherNetworks) {
  const Dataset ds = synth_clusters(60, 5, 3, 1.0, 2);
  const TrainConfig cfg = small_config(Mode::visual);
  const Model m = train(ds, cfg);
  const auto init = init_networks(5, 3, 8, cfg.arch, cfg.seed);
  EXPECT_NE(m.nets.visual, init.visual);
  EXPECT_EQ(m.nets.label, init.label);
  EXPECT_EQ(m.nets.fusion, init.fusion);
  EXPECT_EQ(m.nets.classifier, init.classifier);
  EXPECT_EQ(m.hp.lambda, 0.0);
  EXPECT_EQ(m.hp.mu, 0.0);
  for (const auto& r : m.history) {
    EXPECT_EQ(r.l2, 0.0);
    EXPECT_EQ(r.l3, 0.0);
  }
}

TEST(Train, SemanticModeKeepsFusionFixed) {
  const Dataset ds = synth_clusters(60, 5, 3, 1.0, 2);
  const TrainConfig cfg = small_config(Mode::semantic);
  const Model m = train(ds, cfg);
  const auto init = init_networks(5, 3, 8, cfg.arch, cfg.seed);
  EXPECT_NE(m.nets.label, init.label);
  EXPECT_EQ(m.nets.fusion, init.fusion);
  EXPECT_EQ(m.nets.classifier, init.classifier);
}

TEST(Train, RejectsInvalidConfig) {
  const Dataset ds = synth_clusters(30, 3, 3, 1.0, 1);
  TrainConfig cfg = small_config();
  cfg.epochs = 0;
  EXPECT_THROW(train(ds, cfg), InputError);
  cfg = small_config();
  cfg.batch_size = 31;
  EXPECT_THROW(train(ds, cfg), InputError);
  cfg = small_config();
  cfg.learning_rate = -1.0;
  EXPECT_THROW(train(ds, cfg), InputError);
}

TEST(Train, DivergenceIsReportedAsNumericalError) {
  const Dataset ds = synth_clusters(30, 3, 3, 1.0, 1);
  TrainConfig cfg = small_config();
  cfg.learning_rate = 1e300;
  EXPECT_THROW(train(ds, cfg), NumericalError);
}

TEST(Train, IsReproducible) {
  const Dataset ds = synth_clusters(80, 5, 3, 1.0, 4);
  const TrainConfig cfg = small_config();
  const Model a = train(ds, cfg);
  const Model b = train(ds, cfg);
  EXPECT_EQ(a.nets, b.nets);
  EXPECT_EQ(a.codes, b.codes);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].total, b.history[i].total);
}

TEST(Train, HistoryTermsAddUp) {
  const Dataset ds = synth_clusters(60, 5, 3, 1.0, 2);
  TrainConfig cfg = small_config();
  cfg.epochs = 4;
  cfg.dcc_interval = 2;
  const Model m = train(ds, cfg);
  ASSERT_EQ(m.history.size(), 2u);
  EXPECT_EQ(m.history[0].epoch, 2);
  EXPECT_EQ(m.history[1].epoch, 4);
  for (const auto& r : m.history) EXPECT_DOUBLE_EQ(r.total, r.l1 + r.l2 + r.l3);
}

TEST(Train, BSolveDoesNotIncreaseObjectiveAtTrainedNetworks) {
  const Dataset ds = synth_clusters(80, 5, 3, 1.0, 6);
  const TrainConfig cfg = small_config();
  const Model m = train(ds, cfg);
  const auto e = embed_all(m.nets, ds.features(), ds.labels(), m.hp);
  const auto s = build_similarity(ds.labels());
  std::mt19937_64 rng(1);
  const auto start = testing::random_codes(8, 80, rng);
  const double before = objective_terms(e, start, s, ds.labels(), m.hp).total;
  const auto solved = solve_b(e.visual, e.label, e.fused, s, m.hp, cfg.dcc, start);
  EXPECT_LE(objective_terms(e, solved.codes, s, ds.labels(), m.hp).total, before);
}

TEST(Train, ToyObjectiveStrictlyDecreasesOverFirstFiveSolves) {
  TrainConfig cfg;
  cfg.hp = HyperParams::defaults_for(16);
  cfg.epochs = 5;
  cfg.seed = 0;
  const Model m = train(toy(), cfg);
  ASSERT_EQ(m.history.size(), 5u);
  for (std::size_t i = 1; i < m.history.size(); ++i) {
    EXPECT_LT(m.history[i].total, m.history[i - 1].total) << "solve " << i + 1;
  }
}

TEST(Encode, TrainingSampleMatchesVisualEmbeddingSign) {
  const Dataset ds = synth_clusters(40, 5, 3, 1.0, 2);
  const Model m = train(ds, small_config());
  const auto codes = encode(ds.features(), m);
  EXPECT_EQ(codes, CodeMatrix::from_signs(visual_forward(ds.features(), m.nets.visual).first.u));
  EXPECT_TRUE(((codes.values().array() == 1.0) || (codes.values().array() == -1.0)).all());
}

TEST(Encode, DuplicateRowsGiveIdenticalCodes) {
  const Dataset ds = synth_clusters(40, 5, 3, 1.0, 2);
  const Model m = train(ds, small_config());
  Matrix x(3, 5);
  x << ds.features().row(7), ds.features().row(3), ds.features().row(7);
  const auto codes = encode(x, m);
  EXPECT_EQ(codes.values().col(0), codes.values().col(2));
}

TEST(Encode, DependsOnlyOnVisualNetwork) {
  const Dataset ds = synth_clusters(40, 5, 3, 1.0, 2);
  const Model m = train(ds, small_config());
  Model perturbed = m;
  std::mt19937_64 rng(9);
  for (auto* net : {&perturbed.nets.label, &perturbed.nets.fusion, &perturbed.nets.classifier}) {
    for (std::size_t i = 0; i < net->param_count(); ++i) net->param(i) += std::normal_distribution<double>()(rng);
  }
  EXPECT_EQ(encode(ds.features(), m), encode(ds.features(), perturbed));
}

TEST(Encode, RejectsDimensionMismatch) {
  const Dataset ds = synth_clusters(40, 5, 3, 1.0, 2);
  const Model m = train(ds, small_config());
  EXPECT_THROW(encode(Matrix::Zero(2, 4), m), InputError);
}

TEST(Checkpoint, RoundTripIsExact) {
  const Dataset ds = synth_clusters(40, 5, 3, 1.0, 2);
  const Model m = train(ds, small_config(Mode::semantic));
  const auto path = testing::temp_path("model.ckpt");
  save_model(m, path);
  const Model back = load_model(path);
  EXPECT_EQ(back.nets, m.nets);
  EXPECT_EQ(back.hp.rho, m.hp.rho);
  EXPECT_EQ(back.hp.alpha, m.hp.alpha);
  EXPECT_EQ(back.hp.lambda, m.hp.lambda);
  EXPECT_EQ(back.hp.mu, m.hp.mu);
  EXPECT_EQ(back.hp.gamma_focal, m.hp.gamma_focal);
  EXPECT_EQ(back.hp.k, m.hp.k);
  EXPECT_EQ(back.mode, Mode::semantic);
  EXPECT_EQ(encode(ds.features(), back), encode(ds.features(), m));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const Dataset ds = synth_clusters(40, 5, 3, 1.0, 2);
  const Model m = train(ds, small_config());
  std::ostringstream out;
  write_model(out, m);
  const std::string good = out.str();
  auto read = [](const std::string& bytes) {
    std::istringstream in(bytes);
    return read_model(in);
  };
  EXPECT_NO_THROW(read(good));
  EXPECT_THROW(read(good.substr(0, good.size() / 2)), InputError);
  EXPECT_THROW(read(good + "z"), InputError);
  std::string wrong_version = good;
  wrong_version[8] = 7;
  try {
    read(wrong_version);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  std::string bad_magic = good;
  bad_magic[3] = '?';
  EXPECT_THROW(read(bad_magic), InputError);

  const auto path = testing::temp_path("truncated.ckpt");
  std::ofstream(path, std::ios::binary).write(good.data(), 40);
  try {
    load_model(path);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos);
  }
}

TEST(Mode, ParseAndPrint) {
  EXPECT_EQ(parse_mode("full"), Mode::full);
  EXPECT_EQ(parse_mode("v"), Mode::visual);
  EXPECT_EQ(parse_mode("S"), Mode::semantic);
  EXPECT_THROW(parse_mode("x"), InputError);
  EXPECT_EQ(to_string(Mode::semantic), "s");
}

}  // namespace
}  // namespace dcdh
