#include "sgmpt/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "sgmpt/errors.hpp"
#include "sgmpt/kernels.hpp"

namespace sgmpt::num {

namespace {

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) mismatch(op, a, b);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) mismatch("matmul", a, b);
  Tensor c;
  kernels::matmul(a, b, c);
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) mismatch("matmul_nt", a, b);
  Tensor c;
  kernels::matmul_nt(a, b, c);
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) mismatch("matmul_tn", a, b);
  Tensor c;
  kernels::matmul_tn(a, b, c);
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
  return c;
}

Tensor scale(const Tensor& a, double s) {
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = s * a[i];
  return c;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same("hadamard", a, b);
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
  return c;
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) mismatch("add_row_broadcast", a, row);
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) = a(i, j) + row[j];
  return c;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  require_same("add_inplace", dst, src);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) mismatch("concat_rows", parts.front(), p);
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return Tensor(rows, cols, std::move(data));
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_string(a));
  }
  std::vector<double> data(a.data() + begin * a.cols(), a.data() + (begin + count) * a.cols());
  return Tensor(count, a.cols(), std::move(data));
}

Tensor replace_row(const Tensor& a, std::size_t row, const Tensor& v) {
  if (v.rows() != 1 || v.cols() != a.cols()) mismatch("replace_row", a, v);
  if (row >= a.rows()) throw DimensionError("replace_row: row " + std::to_string(row) + " out of range for " + shape_string(a));
  Tensor out = a;
  std::copy(v.values().begin(), v.values().end(), out.row_span(row).begin());
  return out;
}

Tensor repeat_rows(const Tensor& v, std::size_t count) {
  if (v.rows() != 1) throw DimensionError("repeat_rows: expected a row vector, got " + shape_string(v));
  if (count == 0) throw DimensionError("repeat_rows: count must be positive");
  Tensor out(count, v.cols());
  for (std::size_t i = 0; i < count; ++i) std::copy(v.values().begin(), v.values().end(), out.row_span(i).begin());
  return out;
}

Tensor sum_rows(const Tensor& a) {
  Tensor out(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j);
  return out;
}

Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) throw DimensionError("mean_rows: zero rows");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Tensor softmax(const Tensor& x, Axis axis) {
  if (x.rows() == 0 || x.cols() == 0) throw DimensionError("softmax: zero-length axis in " + shape_string(x));
  if (axis == Axis::Cols) return transpose(softmax(transpose(x), Axis::Rows));
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row_span(i);
    auto out = y.row_span(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    for (double& v : out) v /= total;
  }
  return y;
}

LayerNormResult layer_norm_full(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (gain.rows() != 1 || gain.cols() != x.cols()) mismatch("layer_norm", x, gain);
  if (!bias.same_shape(gain)) mismatch("layer_norm", gain, bias);
  if (x.cols() == 0) throw DimensionError("layer_norm: zero-length axis");
  LayerNormResult r{Tensor(x.rows(), x.cols()), Tensor(x.rows(), x.cols()), std::vector<double>(x.rows())};
  const double n = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row_span(i);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    r.inv_std[i] = inv;
    for (std::size_t j = 0; j < in.size(); ++j) {
      const double xhat = (in[j] - mean) * inv;
      r.normalized(i, j) = xhat;
      r.output(i, j) = xhat * gain[j] + bias[j];
    }
  }
  return r;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) { return layer_norm_full(x, gain, bias).output; }

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    y[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return y;
}

double gelu_derivative(double v) {
  const double u = kGeluC * (v + kGeluA * v * v * v);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
  return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
}

Tensor attention_mask_bias(const Tensor& allowed) {
  Tensor bias(allowed.rows(), allowed.cols());
  for (std::size_t i = 0; i < allowed.rows(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < allowed.cols(); ++j) {
      const bool ok = allowed(i, j) != 0.0;
      any = any || ok;
      bias(i, j) = ok ? 0.0 : kMaskedScore;
    }
    if (!any) throw DimensionError("attention mask blocks every key for query row " + std::to_string(i));
  }
  return bias;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor* allowed) {
  if (q.cols() != k.cols()) mismatch("attention(Q,K)", q, k);
  if (k.rows() != v.rows()) mismatch("attention(K,V)", k, v);
  if (k.rows() == 0) throw DimensionError("attention: zero keys");
  Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (allowed != nullptr) {
    if (allowed->rows() != q.rows() || allowed->cols() != k.rows()) mismatch("attention(mask)", scores, *allowed);
    scores = add(scores, attention_mask_bias(*allowed));
  }
  return matmul(softmax(scores), v);
}

double frobenius_dot(const Tensor& a, const Tensor& b) {
  require_same("frobenius_dot", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double frobenius_norm(const Tensor& a) { return std::sqrt(frobenius_dot(a, a)); }

}  // namespace sgmpt::num
