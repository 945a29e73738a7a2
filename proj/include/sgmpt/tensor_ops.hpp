#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sgmpt/tensor.hpp"

// Value-level tensor math. Every function checks shapes and throws
// DimensionError naming both operands on mismatch. The autograd ops reuse these
// for their forward passes.
namespace sgmpt::num {

enum class Axis { Rows, Cols };  // Rows: normalize each row (along columns).

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T * b
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor add_row_broadcast(const Tensor& a, const Tensor& row);
void add_inplace(Tensor& dst, const Tensor& src);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor replace_row(const Tensor& a, std::size_t row, const Tensor& v);
Tensor repeat_rows(const Tensor& v, std::size_t count);
Tensor mean_rows(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // column sums as a 1xC row

// softmax along `axis`: Axis::Rows makes every row a distribution.
Tensor softmax(const Tensor& x, Axis axis = Axis::Rows);

inline constexpr double kLayerNormEpsilon = 1e-5;

struct LayerNormResult {
  Tensor output;
  Tensor normalized;        // (x - mean) * inv_std
  std::vector<double> inv_std;  // one per row
};
LayerNormResult layer_norm_full(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// tanh approximation of GELU and its derivative.
Tensor gelu(const Tensor& x);
double gelu_derivative(double x);

// softmax(Q K^T / sqrt(d) + mask_bias) V. `allowed`, when given, is a QxK 0/1
// matrix; blocked positions get a large negative bias. Every query row must
// keep at least one key.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* allowed = nullptr);
Tensor attention_mask_bias(const Tensor& allowed);
inline constexpr double kMaskedScore = -1e30;

double frobenius_dot(const Tensor& a, const Tensor& b);
double frobenius_norm(const Tensor& a);

}  // namespace sgmpt::num
