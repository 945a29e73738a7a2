#pragma once

#include <cstddef>

#include "sgmpt/tensor.hpp"

// Dense kernels in two flavours: a serial reference and an OpenMP version that
// parallelizes over output rows. Each output element is accumulated in the
// same order in both, so results are bitwise identical.
namespace sgmpt::num::kernels {

namespace serial {
// c = a * b
void matmul(const Tensor& a, const Tensor& b, Tensor& c);
// c = a * b^T
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c);
// c = a^T * b
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c);
}  // namespace serial

namespace omp {
void matmul(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c);
}  // namespace omp

// Work (multiply-adds) above which the dispatching entry points below use the
// OpenMP kernels. Small products stay serial to avoid fork/join overhead.
inline constexpr std::size_t kParallelWorkThreshold = 1u << 18;

void matmul(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& c);

// Number of worker threads OpenMP would use; 1 when built without OpenMP.
int max_threads();
bool in_parallel_region();

}  // namespace sgmpt::num::kernels
