#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "dcdh/codes.hpp"
#include "dcdh/dataset.hpp"
#include "dcdh/error.hpp"
#include "dcdh/nets.hpp"

namespace dcdh {

struct HyperParams {
  double rho = 16.0;         // similarity scale; defaults to k
  double alpha = 1.0;        // quantization weight
  double lambda = 1.0;       // label stream weight
  double mu = 1.0;           // fusion stream weight
  double gamma_focal = 2.0;  // focusing exponent
  long k = 16;               // code length

  static HyperParams defaults_for(long k) {
    HyperParams hp;
    hp.k = k;
    hp.rho = static_cast<double>(k);
    return hp;
  }

  void validate() const {
    detail::require(k >= 1, "k must be >= 1");
    detail::require(rho > 0.0 && std::isfinite(rho), "rho must be > 0");
    detail::require(alpha >= 0.0 && lambda >= 0.0 && mu >= 0.0,
                    "alpha, lambda and mu must be >= 0");
    detail::require(gamma_focal >= 0.0, "gamma_focal must be >= 0");
  }

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

/// Probabilities are clamped from below to kProbClamp before any log.
inline constexpr double kProbClamp = 1e-12;

/// A scalar objective and its gradient with respect to one argument.
struct LossGrad {
  double value = 0.0;
  Matrix grad;
};

namespace detail {

inline void check_codes_shape(const Matrix& u, const CodeMatrix& b, const char* who) {
  require(u.rows() == b.k() && u.cols() == b.n(),
          std::string(who) + ": U is " + shape_str(u.rows(), u.cols()) + " but B is " +
              shape_str(b.k(), b.n()));
}

}  // namespace detail

/// sum_ij (u_i^T b_j - rho s_ij)^2 and its gradient 2 B R^T with respect to U.
inline LossGrad pairwise_loss(const Matrix& u, const CodeMatrix& b, const SimilarityMatrix& s,
                              double rho) {
  detail::check_codes_shape(u, b, "pairwise_loss");
  detail::require(s.n() == u.cols(), "pairwise_loss: similarity is " +
                                         detail::shape_str(s.n(), s.n()) + " for " +
                                         std::to_string(u.cols()) + " samples");
  const Matrix residual = u.transpose() * b.values() - rho * s.values();
  return {residual.squaredNorm(), 2.0 * b.values() * residual.transpose()};
}

/// alpha * ||B - U||^2; gradient -2 alpha (B - U).
inline LossGrad quantization_loss(const CodeMatrix& b, const Matrix& u, double alpha) {
  detail::check_codes_shape(u, b, "quantization_loss");
  const Matrix diff = b.values() - u;
  return {alpha * diff.squaredNorm(), -2.0 * alpha * diff};
}

namespace detail {

/// Label rows normalized to distributions.
inline Matrix label_distribution(const LabelMatrix& labels) {
  Matrix y = labels.cast<double>();
  for (long i = 0; i < y.rows(); ++i) {
    const double total = y.row(i).sum();
    require(total > 0.0, "all-zero label row " + std::to_string(i + 1));
    y.row(i) /= total;
  }
  return y;
}

inline void check_probs(const ProbMatrix& probs, const LabelMatrix& labels, const char* who) {
  require(probs.p.rows() == labels.rows() && probs.p.cols() == labels.cols(),
          std::string(who) + ": probabilities " + shape_str(probs.p.rows(), probs.p.cols()) +
              " vs labels " + shape_str(labels.rows(), labels.cols()));
  for (long i = 0; i < probs.p.rows(); ++i) {
    if (std::abs(probs.p.row(i).sum() - 1.0) > 1e-9) {
      throw InputError(std::string(who) + ": probability row " + std::to_string(i) +
                       " does not sum to 1");
    }
  }
}

inline double clamp_prob(double p) { return std::max(p, kProbClamp); }

}  // namespace detail

/// -sum_i sum_t y_it log p_it with y the normalized label rows.
inline double cross_entropy(const ProbMatrix& probs, const LabelMatrix& labels) {
  detail::check_probs(probs, labels, "cross_entropy");
  const Matrix y = detail::label_distribution(labels);
  double total = 0.0;
  for (long i = 0; i < y.rows(); ++i) {
    for (long t = 0; t < y.cols(); ++t) {
      const double pc = detail::clamp_prob(probs.p(i, t));
      total += -(y(i, t) * std::log(pc));
    }
  }
  return total;
}

/// Focal loss -sum_i sum_t y_it (1 - p^_it)^gamma log p_it, where p^ = p for
/// positive labels and 1 - p otherwise, and y is the label row normalized to
/// a distribution. The gradient is with respect to the pre-softmax logits
/// (n x c).
inline LossGrad focal_loss(const ProbMatrix& probs, const LabelMatrix& labels, double gamma) {
  detail::check_probs(probs, labels, "focal_loss");
  detail::require(gamma >= 0.0, "focal_loss: gamma must be >= 0");
  const Matrix y = detail::label_distribution(labels);
  const long n = y.rows();
  const long c = y.cols();
  LossGrad out{0.0, Matrix::Zero(n, c)};
  Eigen::RowVectorXd dp(c);
  for (long i = 0; i < n; ++i) {
    for (long t = 0; t < c; ++t) {
      const double p = probs.p(i, t);
      const double pc = detail::clamp_prob(p);
      const double p_hat = labels(i, t) == 1 ? pc : 1.0 - pc;
      const double logp = std::log(pc);
      const double w = std::pow(1.0 - p_hat, gamma);
      out.value += -(w * (y(i, t) * logp));

      // d/dp of the term; zero where the clamp is active.
      dp(t) = 0.0;
      if (y(i, t) != 0.0 && p == pc) {
        // Positive label: p^ = p, so d(1 - p^)^gamma/dp = -gamma (1 - p)^(gamma - 1).
        // The derivative blows up at p = 1 for gamma < 1; treat that point as flat.
        const bool flat = gamma == 0.0 || (gamma < 1.0 && p_hat >= 1.0);
        const double dw = flat ? 0.0 : -gamma * std::pow(1.0 - p_hat, gamma - 1.0);
        dp(t) = -y(i, t) * (dw * logp + w / pc);
      }
    }
    // Softmax Jacobian: dz_j = p_j (dp_j - sum_t p_t dp_t).
    const double mean = probs.p.row(i).dot(dp);
    out.grad.row(i) = (probs.p.row(i).array() * (dp.array() - mean)).matrix();
  }
  return out;
}

struct StreamLoss {
  double value = 0.0;
  double pairwise = 0.0;
  double quantization = 0.0;
  Matrix grad;  // d/dU, k x n
};

/// ||U^T B - rho S||^2 + alpha ||B - U||^2 for one activated stream.
inline StreamLoss stream_loss(const EmbeddingMatrix& u, const CodeMatrix& b,
                              const SimilarityMatrix& s, const HyperParams& hp) {
  detail::require(u.activated, "stream_loss: embedding must be activated");
  auto pw = pairwise_loss(u.u, b, s, hp.rho);
  auto qz = quantization_loss(b, u.u, hp.alpha);
  StreamLoss out;
  out.pairwise = pw.value;
  out.quantization = qz.value;
  out.value = pw.value + qz.value;
  out.grad = std::move(pw.grad);
  out.grad += qz.grad;
  return out;
}

struct JointLoss {
  double l1 = 0.0;  // visual stream
  double l2 = 0.0;  // label stream
  double l3 = 0.0;  // fused stream + focal
  double focal = 0.0;
  double total = 0.0;  // l1 + lambda l2 + mu l3
};

/// L1 + lambda L2 + mu L3.
inline JointLoss joint_loss(const EmbeddingMatrix& u_v, const EmbeddingMatrix& u_l,
                            const EmbeddingMatrix& u_f, const CodeMatrix& b,
                            const SimilarityMatrix& s, const ProbMatrix& probs,
                            const LabelMatrix& labels, const HyperParams& hp) {
  hp.validate();
  JointLoss out;
  out.l1 = stream_loss(u_v, b, s, hp).value;
  out.l2 = stream_loss(u_l, b, s, hp).value;
  out.focal = focal_loss(probs, labels, hp.gamma_focal).value;
  out.l3 = stream_loss(u_f, b, s, hp).value + out.focal;
  out.total = out.l1 + hp.lambda * out.l2 + hp.mu * out.l3;
  return out;
}

}  // namespace dcdh
