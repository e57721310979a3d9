#pragma once

// Dense double-precision kernels. Every reduction runs in index order so
// results are bit-reproducible across runs and thread counts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "twohop/errors.hpp"

namespace twohop {

using Vector = std::vector<double>;

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "DenseMatrix: data length does not match shape");
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw InvalidInput("matmul: dimension mismatch " + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + " by " + std::to_string(b.rows()) + "x" +
                       std::to_string(b.cols()));
  }
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

// Row vector times matrix: out[j] = sum_k x[k] * m(k, j), accumulated in k order.
inline void vec_mat_into(std::span<const double> x, const DenseMatrix& m, std::span<double> out) {
  require(x.size() == m.rows() && out.size() == m.cols(), "vec_mat: dimension mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < m.rows(); ++k) {
    const double xk = x[k];
    if (xk == 0.0) continue;
    auto src = m.row(k);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += xk * src[j];
  }
}

inline Vector vec_mat(std::span<const double> x, const DenseMatrix& m) {
  Vector out(m.cols());
  vec_mat_into(x, m, out);
  return out;
}

// Matrix times column vector: out[i] = sum_j m(i, j) * v[j].
inline Vector mat_vec(const DenseMatrix& m, std::span<const double> v) {
  require(v.size() == m.cols(), "mat_vec: dimension mismatch");
  Vector out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) acc += r[j] * v[j];
    out[i] = acc;
  }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

class ProbabilityDistribution {
 public:
  ProbabilityDistribution() = default;

  // Validates the simplex invariant; use for distributions built outside softmax.
  static ProbabilityDistribution from_probs(Vector probs, double tolerance = 1e-9) {
    require(!probs.empty(), "ProbabilityDistribution: empty");
    double total = 0.0;
    for (double p : probs) {
      require(std::isfinite(p) && p >= 0.0 && p <= 1.0, "ProbabilityDistribution: entry outside [0,1]");
      total += p;
    }
    require(std::abs(total - 1.0) <= tolerance, "ProbabilityDistribution: entries do not sum to 1");
    ProbabilityDistribution d;
    d.probs_ = std::move(probs);
    return d;
  }

  static ProbabilityDistribution uniform(std::size_t n) {
    require(n > 0, "ProbabilityDistribution: empty");
    ProbabilityDistribution d;
    d.probs_.assign(n, 1.0 / static_cast<double>(n));
    return d;
  }

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  const Vector& probs() const { return probs_; }
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
  }

  bool operator==(const ProbabilityDistribution&) const = default;

 private:
  friend ProbabilityDistribution softmax(std::span<const double> logits);
  Vector probs_;
};

inline ProbabilityDistribution softmax(std::span<const double> logits) {
  require(!logits.empty(), "softmax: empty input");
  require(all_finite(logits), "softmax: non-finite input");
  const double peak = *std::max_element(logits.begin(), logits.end());
  ProbabilityDistribution d;
  d.probs_.resize(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.probs_[i] = std::exp(logits[i] - peak);
    total += d.probs_[i];
  }
  for (double& p : d.probs_) p /= total;
  return d;
}

inline Vector log_softmax(std::span<const double> logits) {
  require(!logits.empty(), "log_softmax: empty input");
  require(all_finite(logits), "log_softmax: non-finite input");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  const double lse = peak + std::log(total);
  Vector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

// Population variance; (x - mean) / sqrt(var + eps) * gain + shift.
inline Vector layer_norm(std::span<const double> x, std::span<const double> gain,
                         std::span<const double> shift, double eps) {
  require(!x.empty(), "layer_norm: empty input");
  require(x.size() == gain.size() && x.size() == shift.size(), "layer_norm: length mismatch");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  require(var + eps > 0.0, "layer_norm: zero variance with eps = 0");
  const double inv = 1.0 / std::sqrt(var + eps);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * gain[i] + shift[i];
  return out;
}

inline Vector rms_norm(std::span<const double> x, std::span<const double> gain, double eps) {
  require(!x.empty(), "rms_norm: empty input");
  require(x.size() == gain.size(), "rms_norm: length mismatch");
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  require(ms + eps > 0.0, "rms_norm: zero input with eps = 0");
  const double inv = 1.0 / std::sqrt(ms + eps);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
  return out;
}

inline constexpr double kLogFloor = 1e-300;

// H(Q, P) = -sum_i P_i log Q_i. Terms with P_i = 0 contribute nothing.
inline double cross_entropy(const ProbabilityDistribution& q, const ProbabilityDistribution& p) {
  require(q.size() == p.size(), "cross_entropy: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    acc -= p[i] * std::log(std::max(q[i], kLogFloor));
  }
  return acc;
}

inline double entropy(const ProbabilityDistribution& p) { return cross_entropy(p, p); }

}  // namespace twohop
