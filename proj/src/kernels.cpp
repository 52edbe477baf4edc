#include "p2c/kernels.hpp"

#include <string>

#include "p2c/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace p2c::kernels {

namespace {

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 16;

void check(bool ok, const char* what) {
  if (!ok) throw ShapeMismatch(std::string("shape mismatch in ") + what);
}

void prepare(Matrix& c, std::size_t rows, std::size_t cols, Accumulate acc, const char* what) {
  if (acc == Accumulate::Yes) {
    check(c.rows() == rows && c.cols() == cols, what);
  } else if (c.rows() == rows && c.cols() == cols) {
    c.fill(0.0);
  } else {
    c = Matrix(rows, cols);
  }
}

// Row kernels shared by both variants so per-element summation order is fixed.
inline void ab_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t inner = a.cols(), n = b.cols();
  double* out = c.data() + i * n;
  const double* arow = a.data() + i * inner;
  for (std::size_t k = 0; k < inner; ++k) {
    const double x = arow[k];
    const double* brow = b.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += x * brow[j];
  }
}

inline void atb_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t m = a.rows(), ac = a.cols(), n = b.cols();
  double* out = c.data() + i * n;
  for (std::size_t r = 0; r < m; ++r) {
    const double x = a.data()[r * ac + i];
    const double* brow = b.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += x * brow[j];
  }
}

inline void abt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t inner = a.cols(), n = b.rows();
  double* out = c.data() + i * n;
  const double* arow = a.data() + i * inner;
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b.data() + j * inner;
    double s = 0.0;
    for (std::size_t k = 0; k < inner; ++k) s += arow[k] * brow[k];
    out[j] += s;
  }
}

}  // namespace

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc) {
  check(a.cols() == b.rows(), "matmul");
  prepare(c, a.rows(), b.cols(), acc, "matmul");
  for (std::size_t i = 0; i < a.rows(); ++i) ab_row(a, b, c, i);
}

void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc) {
  check(a.rows() == b.rows(), "matmul_at_b");
  prepare(c, a.cols(), b.cols(), acc, "matmul_at_b");
  for (std::size_t i = 0; i < a.cols(); ++i) atb_row(a, b, c, i);
}

void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc) {
  check(a.cols() == b.cols(), "matmul_a_bt");
  prepare(c, a.rows(), b.rows(), acc, "matmul_a_bt");
  for (std::size_t i = 0; i < a.rows(); ++i) abt_row(a, b, c, i);
}

}  // namespace serial

namespace parallel {

void matmul(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc) {
  check(a.cols() == b.rows(), "matmul");
  prepare(c, a.rows(), b.cols(), acc, "matmul");
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) ab_row(a, b, c, static_cast<std::size_t>(i));
}

void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc) {
  check(a.rows() == b.rows(), "matmul_at_b");
  prepare(c, a.cols(), b.cols(), acc, "matmul_at_b");
  const auto rows = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) atb_row(a, b, c, static_cast<std::size_t>(i));
}

void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc) {
  check(a.cols() == b.cols(), "matmul_a_bt");
  prepare(c, a.rows(), b.rows(), acc, "matmul_a_bt");
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) abt_row(a, b, c, static_cast<std::size_t>(i));
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool in_parallel() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

namespace {
bool use_parallel(std::size_t work) { return work >= kParallelThreshold && max_threads() > 1 && !in_parallel(); }
}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc) {
  if (use_parallel(a.rows() * a.cols() * b.cols())) {
    parallel::matmul(a, b, c, acc);
  } else {
    serial::matmul(a, b, c, acc);
  }
}

void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc) {
  if (use_parallel(a.rows() * a.cols() * b.cols())) {
    parallel::matmul_at_b(a, b, c, acc);
  } else {
    serial::matmul_at_b(a, b, c, acc);
  }
}

void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc) {
  if (use_parallel(a.rows() * a.cols() * b.rows())) {
    parallel::matmul_a_bt(a, b, c, acc);
  } else {
    serial::matmul_a_bt(a, b, c, acc);
  }
}

}  // namespace p2c::kernels
