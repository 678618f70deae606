#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace doebe {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using VectorRef = Eigen::Ref<const Vector>;
using MatrixRef = Eigen::Ref<const Matrix>;

/// Thrown when inputs have inconsistent shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical routine cannot produce a meaningful result
/// (failed factorization, degenerate variance, total weight underflow).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require_dim(Index got, Index expected, const char* what) {
  if (got != expected) {
    throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                         ", got " + std::to_string(got));
  }
}

/// Replaces A by (A + A^T) / 2.
inline void symmetrize(Matrix& a) {
  Matrix t = 0.5 * (a + a.transpose());
  a.swap(t);
}

/// Cholesky factorization; on failure adds `jitter` to the diagonal and
/// retries once before giving up.
inline Eigen::LLT<Matrix> cholesky_with_jitter(const Matrix& a, double jitter, const char* what) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  Matrix b = a;
  b.diagonal().array() += jitter;
  llt.compute(b);
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": Cholesky factorization failed after jitter");
  }
  return llt;
}

inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace doebe
