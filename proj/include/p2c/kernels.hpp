#pragma once

#include "p2c/tensor.hpp"

// Dense kernels used by the transformer. Each has a serial reference and an
// OpenMP row-parallel variant; both accumulate every output element in the
// same order, so their results are bitwise identical. The unqualified entry
// points dispatch to the parallel variant for large problems outside an
// enclosing parallel region.
namespace p2c::kernels {

enum class Accumulate { No, Yes };

namespace serial {
/// C (+)= A * B
void matmul(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc = Accumulate::No);
/// C (+)= A^T * B
void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc = Accumulate::No);
/// C (+)= A * B^T
void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc = Accumulate::No);
}  // namespace serial

namespace parallel {
void matmul(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc = Accumulate::No);
void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc = Accumulate::No);
void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc = Accumulate::No);
}  // namespace parallel

void matmul(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc = Accumulate::No);
void matmul_at_b(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc = Accumulate::No);
void matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& c, Accumulate acc = Accumulate::No);

/// Number of threads the parallel variants may use (1 without OpenMP).
int max_threads();
bool in_parallel();

}  // namespace p2c::kernels
