#include "sgmpt/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cstdint>

namespace sgmpt::num::kernels {

namespace {

// Inner row update shared by both flavours: c_row = a_row * b.
inline void matmul_row(const double* a_row, const Tensor& b, double* c_row) {
  const std::size_t inner = b.rows();
  const std::size_t n = b.cols();
  for (std::size_t j = 0; j < n; ++j) c_row[j] = 0.0;
  for (std::size_t k = 0; k < inner; ++k) {
    const double aik = a_row[k];
    const double* b_row = b.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += aik * b_row[j];
  }
}

inline void matmul_nt_row(const double* a_row, const Tensor& b, double* c_row) {
  const std::size_t inner = b.cols();
  for (std::size_t j = 0; j < b.rows(); ++j) {
    const double* b_row = b.data() + j * inner;
    double acc = 0.0;
    for (std::size_t k = 0; k < inner; ++k) acc += a_row[k] * b_row[k];
    c_row[j] = acc;
  }
}

// Row p of a^T * b, accumulated over the shared leading dimension in order.
inline void matmul_tn_row(std::size_t p, const Tensor& a, const Tensor& b, double* c_row) {
  const std::size_t m = a.rows();
  const std::size_t n = b.cols();
  for (std::size_t j = 0; j < n; ++j) c_row[j] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double aip = a(i, p);
    const double* b_row = b.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += aip * b_row[j];
  }
}

void prepare(Tensor& c, std::size_t rows, std::size_t cols) {
  if (c.rows() != rows || c.cols() != cols) c = Tensor(rows, cols);
}

}  // namespace

namespace serial {

void matmul(const Tensor& a, const Tensor& b, Tensor& c) {
  prepare(c, a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a.data() + i * a.cols(), b, c.data() + i * c.cols());
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  prepare(c, a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_nt_row(a.data() + i * a.cols(), b, c.data() + i * c.cols());
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  prepare(c, a.cols(), b.cols());
  for (std::size_t p = 0; p < a.cols(); ++p) matmul_tn_row(p, a, b, c.data() + p * c.cols());
}

}  // namespace serial

namespace omp {

void matmul(const Tensor& a, const Tensor& b, Tensor& c) {
  prepare(c, a.rows(), b.cols());
  const auto rows = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_row(a.data() + r * a.cols(), b, c.data() + r * c.cols());
  }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  prepare(c, a.rows(), b.rows());
  const auto rows = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_nt_row(a.data() + r * a.cols(), b, c.data() + r * c.cols());
  }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  prepare(c, a.cols(), b.cols());
  const auto rows = static_cast<std::int64_t>(a.cols());
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < rows; ++p) {
    const auto r = static_cast<std::size_t>(p);
    matmul_tn_row(r, a, b, c.data() + r * c.cols());
  }
}

}  // namespace omp

namespace {
bool use_parallel(std::size_t work) { return work >= kParallelWorkThreshold && max_threads() > 1 && !in_parallel_region(); }
}  // namespace

void matmul(const Tensor& a, const Tensor& b, Tensor& c) {
  if (use_parallel(a.rows() * a.cols() * b.cols())) {
    omp::matmul(a, b, c);
  } else {
    serial::matmul(a, b, c);
  }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  if (use_parallel(a.rows() * a.cols() * b.rows())) {
    omp::matmul_nt(a, b, c);
  } else {
    serial::matmul_nt(a, b, c);
  }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  if (use_parallel(a.rows() * a.cols() * b.cols())) {
    omp::matmul_tn(a, b, c);
  } else {
    serial::matmul_tn(a, b, c);
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool in_parallel_region() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

}  // namespace sgmpt::num::kernels
