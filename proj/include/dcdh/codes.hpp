#pragma once

#include <Eigen/Dense>

#include <string>

#include "dcdh/error.hpp"

namespace dcdh {

using Matrix = Eigen::MatrixXd;

/// sgn with sgn(0) = +1.
inline double sign_pos(double x) { return x >= 0.0 ? 1.0 : -1.0; }

/// Binary codes, k x n (bit rows x sample columns), every entry -1 or +1.
class CodeMatrix {
 public:
  CodeMatrix() = default;

  /// Takes ownership of an already-binary matrix; throws if any entry is not +-1.
  explicit CodeMatrix(Matrix b) : b_(std::move(b)) {
    detail::require(((b_.array() == 1.0) || (b_.array() == -1.0)).all(),
                    "code matrix entries must be -1 or +1");
  }

  /// Elementwise sign with the +1 tie-break.
  static CodeMatrix from_signs(const Matrix& x) {
    if (!x.allFinite()) throw NumericalError("cannot binarize non-finite values");
    CodeMatrix out;
    out.b_ = x.unaryExpr([](double v) { return sign_pos(v); });
    return out;
  }

  const Matrix& values() const { return b_; }
  long k() const { return b_.rows(); }
  long n() const { return b_.cols(); }
  double operator()(long r, long c) const { return b_(r, c); }

  /// Replaces bit row r; z must be binary with n entries.
  void set_row(long r, const Eigen::RowVectorXd& z) {
    detail::require(r >= 0 && r < k(), "row index out of range: " + std::to_string(r));
    detail::require(z.size() == n(), "row length mismatch");
    detail::require(((z.array() == 1.0) || (z.array() == -1.0)).all(), "row entries must be +-1");
    b_.row(r) = z;
  }

  /// Columns selected by `idx`, in order.
  template <typename Indices>
  CodeMatrix columns(const Indices& idx) const {
    CodeMatrix out;
    out.b_.resize(k(), static_cast<long>(idx.size()));
    long j = 0;
    for (auto i : idx) out.b_.col(j++) = b_.col(static_cast<long>(i));
    return out;
  }

  friend bool operator==(const CodeMatrix& a, const CodeMatrix& b) {
    return a.b_.rows() == b.b_.rows() && a.b_.cols() == b.b_.cols() && a.b_ == b.b_;
  }

 private:
  Matrix b_;
};

}  // namespace dcdh
