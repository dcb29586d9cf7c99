#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>

#include "dcdh/dataset.hpp"
#include "dcdh/error.hpp"
#include "dcdh/mlp.hpp"

namespace dcdh {

/// Relaxed codes, k x n (bits x samples).
struct EmbeddingMatrix {
  Matrix u;
  bool activated = false;

  long k() const { return u.rows(); }
  long n() const { return u.cols(); }

  bool strictly_inside_unit() const { return (u.array().abs() < 1.0).all(); }
};

/// Class probabilities, n x c, rows summing to one.
struct ProbMatrix {
  Matrix p;
};

namespace detail {

inline void check_embedding(const EmbeddingMatrix& e, const char* who) {
  if (!e.u.allFinite()) throw NumericalError(std::string(who) + ": non-finite output");
  if (e.activated && !e.strictly_inside_unit()) {
    throw NumericalError(std::string(who) + ": activated embedding left (-1, 1)");
  }
}

inline void check_encoder(const MlpParams& net, long in_dim, const char* who) {
  require(!net.empty(), std::string(who) + ": empty network");
  require(net.in_dim() == in_dim, std::string(who) + ": input dim " + std::to_string(in_dim) +
                                      " != network input " + std::to_string(net.in_dim()));
  require(net.layers().back().activation == Activation::tanh,
          std::string(who) + ": encoder must end in tanh");
}

}  // namespace detail

/// U_v = tanh(F_v(X)); X holds one sample per row.
inline std::pair<EmbeddingMatrix, ForwardCache> visual_forward(const Matrix& features,
                                                               const MlpParams& visual) {
  detail::check_encoder(visual, features.cols(), "visual_forward");
  auto cache = mlp_forward(visual, features.transpose());
  EmbeddingMatrix e{cache.output, true};
  detail::check_embedding(e, "visual_forward");
  return {std::move(e), std::move(cache)};
}

/// tanh(F_l(L)); the tanh lives inside the label net, so U_l comes back activated.
inline std::pair<EmbeddingMatrix, ForwardCache> label_forward(const LabelMatrix& labels,
                                                              const MlpParams& label) {
  detail::check_encoder(label, labels.cols(), "label_forward");
  auto cache = mlp_forward(label, labels.cast<double>().transpose());
  EmbeddingMatrix e{cache.output, true};
  detail::check_embedding(e, "label_forward");
  return {std::move(e), std::move(cache)};
}

/// result(a, b) = u_v(a) * u_l(b).
inline Matrix outer_fuse(const Vector& u_v, const Vector& u_l) {
  detail::require(u_v.size() == u_l.size(), "outer_fuse: length mismatch (" +
                                                std::to_string(u_v.size()) + " vs " +
                                                std::to_string(u_l.size()) + ")");
  return u_v * u_l.transpose();
}

struct FusionCache {
  Matrix u_v;
  Matrix u_l;
  ForwardCache net;
};

/// Per sample: flatten outer_fuse(u_v, u_l) row-major to k^2 entries and map
/// it through the fusion net (which ends in tanh).
inline std::pair<EmbeddingMatrix, FusionCache> fusion_forward(const EmbeddingMatrix& u_v,
                                                              const EmbeddingMatrix& u_l,
                                                              const MlpParams& fusion) {
  detail::require(u_v.activated && u_l.activated, "fusion_forward: inputs must be activated");
  detail::require(u_v.k() == u_l.k() && u_v.n() == u_l.n(),
                  "fusion_forward: U_v " + detail::shape_str(u_v.k(), u_v.n()) + " vs U_l " +
                      detail::shape_str(u_l.k(), u_l.n()));
  const long k = u_v.k();
  detail::check_encoder(fusion, k * k, "fusion_forward");
  Matrix fused(k * k, u_v.n());
  for (long i = 0; i < u_v.n(); ++i)
    for (long a = 0; a < k; ++a)
      for (long b = 0; b < k; ++b) fused(a * k + b, i) = u_v.u(a, i) * u_l.u(b, i);
  FusionCache cache{u_v.u, u_l.u, mlp_forward(fusion, fused)};
  EmbeddingMatrix e{cache.net.output, true};
  detail::check_embedding(e, "fusion_forward");
  return {std::move(e), std::move(cache)};
}

struct FusionBackward {
  MlpParams grad;
  Matrix u_v_grad;
  Matrix u_l_grad;
};

/// Chains d(loss)/dU through the fusion net and the bilinear outer product.
inline FusionBackward fusion_backward(const MlpParams& fusion, const FusionCache& cache,
                                      const Matrix& output_grad) {
  auto back = mlp_backward(fusion, cache.net, output_grad);
  const long k = cache.u_v.rows();
  const long n = cache.u_v.cols();
  FusionBackward out{std::move(back.grad), Matrix::Zero(k, n), Matrix::Zero(k, n)};
  for (long i = 0; i < n; ++i) {
    // dF is k x k per sample: dU_v = dF u_l, dU_l = dF^T u_v.
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        d_fused(back.input_grad.col(i).data(), k, k);
    out.u_v_grad.col(i) = d_fused * cache.u_l.col(i);
    out.u_l_grad.col(i) = d_fused.transpose() * cache.u_v.col(i);
  }
  return out;
}

struct ClassifierOutput {
  ProbMatrix probs;
  ForwardCache cache;  // output holds the logits, c x n
};

/// Row-wise softmax with max subtraction.
inline ProbMatrix softmax_rows(const Matrix& logits_cn) {
  if (!logits_cn.allFinite()) throw NumericalError("classify: non-finite logits");
  Matrix p = logits_cn.transpose();
  for (long i = 0; i < p.rows(); ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return ProbMatrix{std::move(p)};
}

/// p_i = softmax(F_c(u_i)).
inline ClassifierOutput classify(const EmbeddingMatrix& u, const MlpParams& classifier) {
  detail::require(!classifier.empty() && classifier.in_dim() == u.k(),
                  "classify: classifier input dim != code length");
  auto cache = mlp_forward(classifier, u.u);
  auto probs = softmax_rows(cache.output);
  return {std::move(probs), std::move(cache)};
}

/// Layer widths of the four networks; code length and data dims come from elsewhere.
struct Architecture {
  long visual_hidden = 64;
  long label_hidden = 32;
};

struct Networks {
  MlpParams visual;      // d -> hidden -> k
  MlpParams label;       // c -> hidden -> k
  MlpParams fusion;      // k^2 -> k
  MlpParams classifier;  // k -> c

  friend bool operator==(const Networks&, const Networks&) = default;
};

inline Networks init_networks(long d, long c, long k, const Architecture& arch,
                              std::uint64_t seed) {
  detail::require(d >= 1 && c >= 1 && k >= 1, "init_networks: dimensions must be positive");
  std::mt19937_64 rng(seed);
  Networks nets;
  using A = Activation;
  if (arch.visual_hidden > 0) {
    nets.visual = init_mlp({d, arch.visual_hidden, k}, {A::tanh, A::tanh}, rng);
  } else {
    nets.visual = init_mlp({d, k}, {A::tanh}, rng);
  }
  if (arch.label_hidden > 0) {
    nets.label = init_mlp({c, arch.label_hidden, k}, {A::tanh, A::tanh}, rng);
  } else {
    nets.label = init_mlp({c, k}, {A::tanh}, rng);
  }
  nets.fusion = init_mlp({k * k, k}, {A::tanh}, rng);
  nets.classifier = init_mlp({k, c}, {A::identity}, rng);
  return nets;
}

}  // namespace dcdh
