#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <filesystem>
#include <functional>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dcdh/binary_io.hpp"
#include "dcdh/codes.hpp"
#include "dcdh/dataset.hpp"
#include "dcdh/dcc.hpp"
#include "dcdh/error.hpp"
#include "dcdh/losses.hpp"
#include "dcdh/mlp.hpp"
#include "dcdh/nets.hpp"

namespace dcdh {

/// full: all three streams. visual: visual stream only (lambda = mu = 0).
/// semantic: visual + label streams without fusion (mu = 0).
enum class Mode : std::uint8_t { full = 0, visual = 1, semantic = 2 };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::visual: return "v";
    case Mode::semantic: return "s";
    default: return "full";
  }
}

inline Mode parse_mode(std::string_view s) {
  if (s == "full") return Mode::full;
  if (s == "v" || s == "V") return Mode::visual;
  if (s == "s" || s == "S") return Mode::semantic;
  throw InputError("unknown mode '" + std::string(s) + "' (expected full, v or s)");
}

struct TrainConfig {
  HyperParams hp = HyperParams::defaults_for(16);
  int epochs = 30;
  long batch_size = 64;
  int dcc_interval = 1;
  double learning_rate = 1e-5;
  std::uint64_t seed = 0;
  Architecture arch;
  Mode mode = Mode::full;
  DccOptions dcc;

  /// Hyperparameters with the ablation applied.
  HyperParams effective_hp() const {
    HyperParams h = hp;
    if (mode == Mode::visual) h.lambda = h.mu = 0.0;
    if (mode == Mode::semantic) h.mu = 0.0;
    return h;
  }

  void validate(long n) const {
    hp.validate();
    detail::require(epochs >= 1, "epochs must be >= 1");
    detail::require(batch_size >= 1 && batch_size <= n,
                    "batch_size must be in [1, " + std::to_string(n) + "]");
    detail::require(dcc_interval >= 1, "dcc_interval must be >= 1");
    detail::require(learning_rate >= 0.0 && std::isfinite(learning_rate),
                    "learning_rate must be finite and >= 0");
    detail::require(dcc.max_sweeps >= 1, "dcc max_sweeps must be >= 1");
  }
};

/// Weighted per-stream contributions after one B-solve: l2 = lambda * L2,
/// l3 = mu * L3, total = l1 + l2 + l3.
struct HistoryRow {
  int epoch = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double total = 0.0;
};

struct Model {
  Networks nets;
  CodeMatrix codes;  // k x n_train
  HyperParams hp;    // effective (ablation applied)
  Mode mode = Mode::full;
  std::vector<HistoryRow> history;

  long k() const { return hp.k; }
};

/// Embeddings of a whole dataset under the current networks. Streams with
/// zero weight are left empty.
struct StreamEmbeddings {
  EmbeddingMatrix visual;
  EmbeddingMatrix label;
  EmbeddingMatrix fused;
  std::optional<ProbMatrix> probs;
};

inline StreamEmbeddings embed_all(const Networks& nets, const Matrix& features,
                                  const LabelMatrix& labels, const HyperParams& hp) {
  StreamEmbeddings e;
  e.visual = visual_forward(features, nets.visual).first;
  if (hp.lambda > 0.0 || hp.mu > 0.0) e.label = label_forward(labels, nets.label).first;
  if (hp.mu > 0.0) {
    e.fused = fusion_forward(e.visual, e.label, nets.fusion).first;
    e.probs = classify(e.fused, nets.classifier).probs;
  }
  return e;
}

/// Weighted objective terms over the given samples.
inline HistoryRow objective_terms(const StreamEmbeddings& e, const CodeMatrix& b,
                                  const SimilarityMatrix& s, const LabelMatrix& labels,
                                  const HyperParams& hp) {
  HistoryRow row;
  row.l1 = stream_loss(e.visual, b, s, hp).value;
  if (hp.lambda > 0.0) row.l2 = hp.lambda * stream_loss(e.label, b, s, hp).value;
  if (hp.mu > 0.0) {
    row.l3 = hp.mu * (stream_loss(e.fused, b, s, hp).value +
                      focal_loss(*e.probs, labels, hp.gamma_focal).value);
  }
  row.total = row.l1 + row.l2 + row.l3;
  return row;
}

struct BatchGradients {
  Networks grad;
  double loss = 0.0;
};

/// Gradient of L1 + lambda L2 + mu L3 over one minibatch. B and S are the
/// batch's columns and similarity submatrix. Inactive networks get zero
/// gradients.
inline BatchGradients batch_gradients(const Networks& nets, const Matrix& features,
                                      const LabelMatrix& labels, const CodeMatrix& b,
                                      const SimilarityMatrix& s, const HyperParams& hp) {
  BatchGradients out{Networks{nets.visual.zeros_like(), nets.label.zeros_like(),
                              nets.fusion.zeros_like(), nets.classifier.zeros_like()},
                     0.0};
  auto [u_v, cache_v] = visual_forward(features, nets.visual);
  auto l1 = stream_loss(u_v, b, s, hp);
  out.loss = l1.value;
  Matrix d_uv = std::move(l1.grad);

  if (hp.lambda > 0.0 || hp.mu > 0.0) {
    auto [u_l, cache_l] = label_forward(labels, nets.label);
    Matrix d_ul = Matrix::Zero(u_l.k(), u_l.n());
    if (hp.lambda > 0.0) {
      auto l2 = stream_loss(u_l, b, s, hp);
      out.loss += hp.lambda * l2.value;
      d_ul += hp.lambda * l2.grad;
    }
    if (hp.mu > 0.0) {
      auto [u_f, cache_f] = fusion_forward(u_v, u_l, nets.fusion);
      auto l3 = stream_loss(u_f, b, s, hp);
      auto cls = classify(u_f, nets.classifier);
      auto focal = focal_loss(cls.probs, labels, hp.gamma_focal);
      out.loss += hp.mu * (l3.value + focal.value);
      auto back_c = mlp_backward(nets.classifier, cls.cache, hp.mu * focal.grad.transpose());
      out.grad.classifier = std::move(back_c.grad);
      Matrix d_uf = hp.mu * l3.grad + back_c.input_grad;
      auto back_f = fusion_backward(nets.fusion, cache_f, d_uf);
      out.grad.fusion = std::move(back_f.grad);
      d_uv += back_f.u_v_grad;
      d_ul += back_f.u_l_grad;
    }
    out.grad.label = mlp_backward(nets.label, cache_l, d_ul).grad;
  }
  out.grad.visual = mlp_backward(nets.visual, cache_v, d_uv).grad;
  return out;
}

namespace detail {

inline void shuffle_indices(std::vector<long>& idx, std::mt19937_64& rng) {
  for (auto i = static_cast<long>(idx.size()) - 1; i > 0; --i) {
    const auto j = static_cast<long>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
}

inline Matrix rows_of(const Matrix& m, const std::vector<long>& idx) {
  Matrix out(static_cast<long>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<long>(r)) = m.row(idx[r]);
  return out;
}

inline LabelMatrix rows_of(const LabelMatrix& m, const std::vector<long>& idx) {
  LabelMatrix out(static_cast<long>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<long>(r)) = m.row(idx[r]);
  return out;
}

inline std::vector<WeightedStream> weighted_streams(const StreamEmbeddings& e, const HyperParams& hp) {
  return {{&e.visual, 1.0}, {&e.label, hp.lambda}, {&e.fused, hp.mu}};
}

}  // namespace detail

/// Called after every B-solve with the freshly appended history row.
using ProgressFn = std::function<void(const HistoryRow&)>;

/// Alternating optimization: minibatch gradient descent on the networks with
/// B fixed, and every dcc_interval epochs a DCC solve of B (warm-started from
/// the current B) on full-dataset embeddings. B starts at
/// sgn(U_v + lambda U_l + mu U_f) of the initial networks.
inline Model train(const Dataset& data, const TrainConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate(data.n());
  const HyperParams hp = cfg.effective_hp();
  const SimilarityMatrix s = build_similarity(data.labels());

  Model model;
  model.hp = hp;
  model.mode = cfg.mode;
  model.nets = init_networks(data.d(), data.c(), hp.k, cfg.arch, cfg.seed);
  {
    const auto e = embed_all(model.nets, data.features(), data.labels(), hp);
    Matrix warm = e.visual.u;
    if (hp.lambda > 0.0) warm += hp.lambda * e.label.u;
    if (hp.mu > 0.0) warm += hp.mu * e.fused.u;
    model.codes = CodeMatrix::from_signs(warm);
  }

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<long> order(static_cast<std::size_t>(data.n()));
  for (long i = 0; i < data.n(); ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle_indices(order, rng);
    long batch_no = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<long> idx(order.begin() + static_cast<long>(start),
                                  order.begin() + static_cast<long>(end));
      auto g = batch_gradients(model.nets, detail::rows_of(data.features(), idx),
                               detail::rows_of(data.labels(), idx), model.codes.columns(idx),
                               s.sub(idx), hp);
      if (!std::isfinite(g.loss)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_no));
      }
      if (cfg.learning_rate == 0.0) continue;
      model.nets.visual.add_scaled(g.grad.visual, -cfg.learning_rate);
      if (hp.lambda > 0.0 || hp.mu > 0.0) model.nets.label.add_scaled(g.grad.label, -cfg.learning_rate);
      if (hp.mu > 0.0) {
        model.nets.fusion.add_scaled(g.grad.fusion, -cfg.learning_rate);
        model.nets.classifier.add_scaled(g.grad.classifier, -cfg.learning_rate);
      }
      if (!model.nets.visual.all_finite() || !model.nets.label.all_finite() ||
          !model.nets.fusion.all_finite() || !model.nets.classifier.all_finite()) {
        throw NumericalError("non-finite parameters at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch_no));
      }
    }

    if (epoch % cfg.dcc_interval != 0 && epoch != cfg.epochs) continue;
    const auto e = embed_all(model.nets, data.features(), data.labels(), hp);
    const auto streams = detail::weighted_streams(e, hp);
    auto solved = solve_b(streams, s, hp, cfg.dcc, model.codes);
    model.codes = std::move(solved.codes);
    HistoryRow row = objective_terms(e, model.codes, s, data.labels(), hp);
    row.epoch = epoch;
    if (!std::isfinite(row.total)) {
      throw NumericalError("non-finite objective after B-solve at epoch " + std::to_string(epoch));
    }
    model.history.push_back(row);
    if (progress) progress(row);
  }
  return model;
}

/// b_q = sgn(F_v(x_q)); only the visual network is used.
inline CodeMatrix encode(const Matrix& features, const Model& model) {
  detail::require(features.cols() == model.nets.visual.in_dim(),
                  "encode: feature dim " + std::to_string(features.cols()) +
                      " does not match model input dim " + std::to_string(model.nets.visual.in_dim()));
  return CodeMatrix::from_signs(visual_forward(features, model.nets.visual).first.u);
}

namespace detail {

inline constexpr std::string_view kCheckpointMagic = "DCDHCKPT";
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void write_mlp(std::ostream& out, const MlpParams& net) {
  io::write_le<std::uint64_t>(out, net.layers().size());
  for (const auto& l : net.layers()) {
    io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(l.in_dim()));
    io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(l.out_dim()));
    io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
  }
  for (const auto& l : net.layers()) {
    for (long r = 0; r < l.weight.rows(); ++r)
      for (long c = 0; c < l.weight.cols(); ++c) io::write_le<double>(out, l.weight(r, c));
    for (long r = 0; r < l.bias.size(); ++r) io::write_le<double>(out, l.bias(r));
  }
}

inline MlpParams read_mlp(std::istream& in) {
  const auto count = io::read_le<std::uint64_t>(in, "layer count");
  require(count >= 1 && count <= 64, "corrupt checkpoint: implausible layer count");
  std::vector<Layer> layers(static_cast<std::size_t>(count));
  for (auto& l : layers) {
    const auto in_dim = io::read_le<std::uint64_t>(in, "layer dims");
    const auto out_dim = io::read_le<std::uint64_t>(in, "layer dims");
    const auto act = io::read_le<std::uint8_t>(in, "activation");
    require(in_dim >= 1 && out_dim >= 1 && in_dim * out_dim <= (1ULL << 28),
            "corrupt checkpoint: implausible layer dims");
    require(act <= 1, "corrupt checkpoint: unknown activation tag");
    l.weight.resize(static_cast<long>(out_dim), static_cast<long>(in_dim));
    l.bias.resize(static_cast<long>(out_dim));
    l.activation = static_cast<Activation>(act);
  }
  for (auto& l : layers) {
    for (long r = 0; r < l.weight.rows(); ++r)
      for (long c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = io::read_le<double>(in, "weights");
    for (long r = 0; r < l.bias.size(); ++r) l.bias(r) = io::read_le<double>(in, "biases");
  }
  return MlpParams(std::move(layers));
}

}  // namespace detail

inline void write_model(std::ostream& out, const Model& model) {
  io::write_magic(out, detail::kCheckpointMagic);
  io::write_le<std::uint16_t>(out, detail::kCheckpointVersion);
  for (const auto* net : {&model.nets.visual, &model.nets.label, &model.nets.fusion,
                          &model.nets.classifier}) {
    detail::write_mlp(out, *net);
  }
  const auto& hp = model.hp;
  for (double v : {hp.rho, hp.alpha, hp.lambda, hp.mu, hp.gamma_focal}) io::write_le<double>(out, v);
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(hp.k));
  io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(model.mode));
}

/// Reads a checkpoint. Codes and history are not part of the format.
inline Model read_model(std::istream& in) {
  io::expect_magic(in, detail::kCheckpointMagic, "checkpoint");
  const auto version = io::read_le<std::uint16_t>(in, "checkpoint version");
  if (version != detail::kCheckpointVersion) {
    throw InputError("checkpoint version mismatch: file has " + std::to_string(version) +
                     ", expected " + std::to_string(detail::kCheckpointVersion));
  }
  Model model;
  model.nets.visual = detail::read_mlp(in);
  model.nets.label = detail::read_mlp(in);
  model.nets.fusion = detail::read_mlp(in);
  model.nets.classifier = detail::read_mlp(in);
  auto& hp = model.hp;
  hp.rho = io::read_le<double>(in, "hyperparameters");
  hp.alpha = io::read_le<double>(in, "hyperparameters");
  hp.lambda = io::read_le<double>(in, "hyperparameters");
  hp.mu = io::read_le<double>(in, "hyperparameters");
  hp.gamma_focal = io::read_le<double>(in, "hyperparameters");
  hp.k = static_cast<long>(io::read_le<std::uint64_t>(in, "code length"));
  const auto mode = io::read_le<std::uint8_t>(in, "mode");
  detail::require(mode <= 2, "corrupt checkpoint: unknown mode");
  model.mode = static_cast<Mode>(mode);
  io::expect_eof(in, "checkpoint");
  hp.validate();
  detail::require(model.nets.visual.out_dim() == hp.k && model.nets.label.out_dim() == hp.k &&
                      model.nets.fusion.in_dim() == hp.k * hp.k &&
                      model.nets.fusion.out_dim() == hp.k && model.nets.classifier.in_dim() == hp.k,
                  "corrupt checkpoint: network shapes disagree with k");
  return model;
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  io::atomic_write(path, [&](std::ostream& out) { write_model(out, model); });
}

inline Model load_model(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  try {
    return read_model(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": corrupt checkpoint: " + e.what());
  }
}

}  // namespace dcdh
