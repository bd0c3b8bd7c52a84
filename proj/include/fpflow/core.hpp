#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fpflow {

// ---------------------------------------------------------------------------
// Error types. Numeric failures derive from NumericError so the CLI can map
// them to a dedicated exit code.
// ---------------------------------------------------------------------------

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteValue : NumericError {
  using NumericError::NumericError;
};

struct NonPositiveDiagonal : NumericError {
  using NumericError::NumericError;
};

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct OddPartitionCount : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct CholeskyFailure : NumericError {
  using NumericError::NumericError;
};

struct BracketFailure : NumericError {
  using NumericError::NumericError;
};

struct BlowUp : NumericError {
  using NumericError::NumericError;
};

struct InvalidConfig : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PreTrainRequired : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

inline double softplus(double x) {
  // log(1 + e^x) without overflow for large |x|
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of softplus: returns c with log(1+e^c) = y, y > 0.
inline double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: need y > 0");
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Format a double with 17 significant digits (lossless round trip).
inline std::string format_f64(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Mat: dense row-major matrix of plain doubles.
// ---------------------------------------------------------------------------

class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw DimensionMismatch("Mat: negative dimension");
  }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double& operator()(int r, int c) { return a_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return a_[static_cast<size_t>(r) * cols_ + c]; }

  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }

  Mat transposed() const {
    Mat t(cols_, rows_);
    for (int r = 0; r < rows_; ++r)
      for (int c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  Mat operator*(const Mat& o) const {
    if (cols_ != o.rows_) throw DimensionMismatch("Mat multiply: inner dims differ");
    Mat out(rows_, o.cols_);
    for (int r = 0; r < rows_; ++r)
      for (int k = 0; k < cols_; ++k) {
        const double v = (*this)(r, k);
        if (v == 0.0) continue;
        for (int c = 0; c < o.cols_; ++c) out(r, c) += v * o(k, c);
      }
    return out;
  }

  std::vector<double> matvec(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != cols_) throw DimensionMismatch("Mat matvec: size");
    std::vector<double> y(rows_, 0.0);
    for (int r = 0; r < rows_; ++r)
      for (int c = 0; c < cols_; ++c) y[r] += (*this)(r, c) * x[c];
    return y;
  }

  bool finite() const {
    for (double v : a_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> a_;
};

// ---------------------------------------------------------------------------
// Small dense linear algebra used by oracles, sampling, and diagnostics.
// ---------------------------------------------------------------------------

/// LU with partial pivoting. Returns false for (numerically) singular input.
struct LuFactors {
  Mat lu;                 // packed L (unit diag) and U
  std::vector<int> perm;  // row permutation
  int sign = 1;
  bool ok = false;
};

inline LuFactors lu_decompose(Mat m) {
  const int n = m.rows();
  if (n != m.cols()) throw DimensionMismatch("lu_decompose: square required");
  LuFactors f;
  f.perm.resize(n);
  for (int i = 0; i < n; ++i) f.perm[i] = i;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    double best = std::abs(m(col, col));
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(m(r, col)) > best) {
        best = std::abs(m(r, col));
        piv = r;
      }
    }
    if (best == 0.0) return f;  // singular
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(m(piv, c), m(col, c));
      std::swap(f.perm[piv], f.perm[col]);
      f.sign = -f.sign;
    }
    for (int r = col + 1; r < n; ++r) {
      const double factor = m(r, col) / m(col, col);
      m(r, col) = factor;
      for (int c = col + 1; c < n; ++c) m(r, c) -= factor * m(col, c);
    }
  }
  f.lu = std::move(m);
  f.ok = true;
  return f;
}

inline double lu_det(const LuFactors& f) {
  if (!f.ok) return 0.0;
  double d = f.sign;
  for (int i = 0; i < f.lu.rows(); ++i) d *= f.lu(i, i);
  return d;
}

inline std::vector<double> lu_solve(const LuFactors& f, const std::vector<double>& b) {
  const int n = f.lu.rows();
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) {
    double s = b[f.perm[i]];
    for (int j = 0; j < i; ++j) s -= f.lu(i, j) * y[j];
    y[i] = s;
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = y[i];
    for (int j = i + 1; j < n; ++j) s -= f.lu(i, j) * y[j];
    y[i] = s / f.lu(i, i);
  }
  return y;
}

inline Mat lu_inverse(const LuFactors& f) {
  const int n = f.lu.rows();
  Mat inv(n, n);
  std::vector<double> e(n, 0.0);
  for (int c = 0; c < n; ++c) {
    std::fill(e.begin(), e.end(), 0.0);
    e[c] = 1.0;
    const auto col = lu_solve(f, e);
    for (int r = 0; r < n; ++r) inv(r, c) = col[r];
  }
  return inv;
}

/// Cholesky factor L with A = L L^T. Throws CholeskyFailure if A is not SPD.
inline Mat cholesky(const Mat& a) {
  const int n = a.rows();
  if (n != a.cols()) throw DimensionMismatch("cholesky: square required");
  Mat l(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s <= 0.0) throw CholeskyFailure("cholesky: matrix not SPD");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

/// Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues and
/// fills eigenvectors as columns of V.
inline std::vector<double> symmetric_eigen(Mat a, Mat* v_out = nullptr) {
  const int n = a.rows();
  if (n != a.cols()) throw DimensionMismatch("symmetric_eigen: square required");
  Mat v = Mat::identity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-26) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (int i = 0; i < n; ++i) eig[i] = a(i, i);
  if (v_out) *v_out = v;
  return eig;
}

/// Symmetric PSD square root via eigendecomposition.
inline Mat symmetric_sqrt(const Mat& a) {
  Mat v;
  auto eig = symmetric_eigen(a, &v);
  const int n = a.rows();
  Mat out(n, n);
  for (int k = 0; k < n; ++k) {
    if (eig[k] < -1e-10) throw NumericError("symmetric_sqrt: negative eigenvalue");
    const double s = std::sqrt(std::max(eig[k], 0.0));
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) out(r, c) += s * v(r, k) * v(c, k);
  }
  return out;
}

inline double min_eigenvalue(const Mat& a) {
  auto eig = symmetric_eigen(a);
  return *std::min_element(eig.begin(), eig.end());
}

// ---------------------------------------------------------------------------
// Deterministic work sharding. The index range is split into a FIXED number
// of contiguous chunks regardless of worker count; each chunk accumulates
// into its own buffers and the caller reduces chunks in order, so results
// are bit-identical whether the chunks run on one thread or many.
// ---------------------------------------------------------------------------

constexpr int kShardChunks = 8;

template <class F>
void parallel_chunks(int n, int n_chunks, F&& fn) {
  if (n <= 0) return;
  n_chunks = std::min(n_chunks, n);
  const int base = n / n_chunks, rem = n % n_chunks;
  std::vector<std::pair<int, int>> ranges;
  int lo = 0;
  for (int c = 0; c < n_chunks; ++c) {
    const int len = base + (c < rem ? 1 : 0);
    ranges.emplace_back(lo, lo + len);
    lo += len;
  }
  unsigned hw = std::thread::hardware_concurrency();
  const int n_workers = std::min<int>(std::max(1u, hw), n_chunks);
  if (n_workers == 1) {
    for (int c = 0; c < n_chunks; ++c) fn(c, ranges[static_cast<size_t>(c)].first,
                                          ranges[static_cast<size_t>(c)].second);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n_chunks));
  auto worker = [&] {
    for (;;) {
      const int c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        fn(c, ranges[static_cast<size_t>(c)].first, ranges[static_cast<size_t>(c)].second);
      } catch (...) {
        errors[static_cast<size_t>(c)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// RandomEngine: splitmix64 stream with explicit distributions. std
// distributions are implementation-defined, which would break the
// "same seed, same bytes" guarantee across standard libraries.
// ---------------------------------------------------------------------------

class RandomEngine {
 public:
  explicit RandomEngine(uint64_t seed) : state_(seed == 0 ? 0x9e3779b97f4a7c15ULL : seed) {
    // scramble so nearby seeds give unrelated streams
    for (int i = 0; i < 4; ++i) next_u64();
  }

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // Box-Muller; u clamped away from 0
    double u = uniform01();
    if (u < 1e-300) u = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u));
    const double phi = 2.0 * M_PI * uniform01();
    spare_ = r * std::sin(phi);
    have_spare_ = true;
    return r * std::cos(phi);
  }

  /// Index draw from unnormalized nonnegative weights.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform01() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u <= 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  /// Deterministic sub-stream, e.g. one per epoch or per shard.
  static uint64_t derive_seed(uint64_t base, uint64_t stream) {
    uint64_t z = base ^ (0x9e3779b97f4a7c15ULL + (stream << 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fpflow
