#include "sgmpt/autograd.hpp"

#include <cmath>
#include <string>

#include "sgmpt/errors.hpp"
#include "sgmpt/tensor_ops.hpp"

namespace sgmpt::num {

Var Tape::constant(Tensor value) { return record("constant", std::move(value), false, nullptr); }

Var Tape::variable(Tensor value) { return record("variable", std::move(value), true, nullptr); }

Var Tape::parameter(const Parameter& p) {
  Node n;
  n.external = &p.value;
  n.requires_grad = p.trainable;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.external != nullptr ? *n.external : n.value;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  const Tensor& val = value(v);
  return Tensor(val.rows(), val.cols());
}

Var Tape::record(std::string_view op, Tensor value, bool requires_grad, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    const Tensor& val = n.external != nullptr ? *n.external : n.value;
    n.grad = Tensor(val.rows(), val.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v.id].requires_grad) return;
  add_inplace(grad_slot(v), g);
}

void Tape::backward(Var loss, GradientBuffer* sink, double seed) {
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (value(loss).size() != 1) throw DimensionError("backward: loss must be a scalar, got " + shape_string(value(loss)));
  if (!nodes_[loss.id].requires_grad) return;
  grad_slot(loss)[0] = seed;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
  }
  if (sink == nullptr) return;
  for (const auto& n : nodes_) {
    if (n.param != nullptr && n.has_grad) sink->add(*n.param, n.grad);
  }
}

namespace ag {

namespace {
bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (t.requires_grad(v)) return true;
  return false;
}
}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  Tensor out = num::matmul(t.value(a), t.value(b));
  return t.record("matmul", std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, num::matmul_nt(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, num::matmul_tn(tp.value(a), g));
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  Tensor out = num::matmul_nt(t.value(a), t.value(b));
  return t.record("matmul_nt", std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, num::matmul(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, num::matmul_tn(g, tp.value(a)));
  });
}

Var add(Tape& t, Var a, Var b) {
  Tensor out = num::add(t.value(a), t.value(b));
  return t.record("add", std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var scale(Tape& t, Var a, double c) {
  Tensor out = num::scale(t.value(a), c);
  return t.record("scale", std::move(out), t.requires_grad(a),
                  [a, c](Tape& tp, const Tensor& g) { tp.accumulate(a, num::scale(g, c)); });
}

Var add_row(Tape& t, Var a, Var row) {
  Tensor out = num::add_row_broadcast(t.value(a), t.value(row));
  return t.record("add_row", std::move(out), any_grad(t, {a, row}), [a, row](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(row)) tp.accumulate(row, num::sum_rows(g));
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  bool req = false;
  for (Var p : parts) {
    values.push_back(t.value(p));
    req = req || t.requires_grad(p);
  }
  Tensor out = num::concat_rows(values);
  std::vector<Var> ids(parts.begin(), parts.end());
  return t.record("concat_rows", std::move(out), req, [ids](Tape& tp, const Tensor& g) {
    std::size_t offset = 0;
    for (Var p : ids) {
      const std::size_t r = tp.value(p).rows();
      if (tp.requires_grad(p)) tp.accumulate(p, num::slice_rows(g, offset, r));
      offset += r;
    }
  });
}

Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t count) {
  Tensor out = num::slice_rows(t.value(a), begin, count);
  return t.record("slice_rows", std::move(out), t.requires_grad(a), [a, begin](Tape& tp, const Tensor& g) {
    Tensor& slot = tp.grad_slot(a);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto dst = slot.row_span(begin + i);
      auto src = g.row_span(i);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var replace_row(Tape& t, Var a, std::size_t row, Var v) {
  Tensor out = num::replace_row(t.value(a), row, t.value(v));
  return t.record("replace_row", std::move(out), any_grad(t, {a, v}), [a, row, v](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) {
      Tensor ga = g;
      for (double& x : ga.row_span(row)) x = 0.0;
      tp.accumulate(a, ga);
    }
    if (tp.requires_grad(v)) tp.accumulate(v, num::slice_rows(g, row, 1));
  });
}

Var repeat_rows(Tape& t, Var v, std::size_t count) {
  Tensor out = num::repeat_rows(t.value(v), count);
  return t.record("repeat_rows", std::move(out), t.requires_grad(v),
                  [v](Tape& tp, const Tensor& g) { tp.accumulate(v, num::sum_rows(g)); });
}

Var mean_rows(Tape& t, Var a) {
  Tensor out = num::mean_rows(t.value(a));
  return t.record("mean_rows", std::move(out), t.requires_grad(a), [a](Tape& tp, const Tensor& g) {
    const std::size_t m = tp.value(a).rows();
    tp.accumulate(a, num::repeat_rows(num::scale(g, 1.0 / static_cast<double>(m)), m));
  });
}

Var softmax_rows(Tape& t, Var a) {
  Tensor out = num::softmax(t.value(a), Axis::Rows);
  Var y_id{t.size()};
  return t.record("softmax", std::move(out), t.requires_grad(a), [a, y_id](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(y_id);
    Tensor dx(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) dx(i, j) = y(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(a, dx);
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias) {
  LayerNormResult r = num::layer_norm_full(t.value(x), t.value(gain), t.value(bias));
  Tensor out = std::move(r.output);
  return t.record(
      "layer_norm", std::move(out), any_grad(t, {x, gain, bias}),
      [x, gain, bias, xhat = std::move(r.normalized), inv = std::move(r.inv_std)](Tape& tp, const Tensor& g) {
        const Tensor& gv = tp.value(gain);
        const std::size_t n = xhat.cols();
        if (tp.requires_grad(gain)) {
          Tensor dg(1, n);
          for (std::size_t i = 0; i < xhat.rows(); ++i)
            for (std::size_t j = 0; j < n; ++j) dg[j] += g(i, j) * xhat(i, j);
          tp.accumulate(gain, dg);
        }
        if (tp.requires_grad(bias)) tp.accumulate(bias, num::sum_rows(g));
        if (tp.requires_grad(x)) {
          Tensor dx(xhat.rows(), n);
          const double nd = static_cast<double>(n);
          for (std::size_t i = 0; i < xhat.rows(); ++i) {
            double sum_d = 0.0;
            double sum_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g(i, j) * gv[j];
              sum_d += d;
              sum_dx += d * xhat(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g(i, j) * gv[j];
              dx(i, j) = inv[i] / nd * (nd * d - sum_d - xhat(i, j) * sum_dx);
            }
          }
          tp.accumulate(x, dx);
        }
      });
}

Var gelu(Tape& t, Var a) {
  Tensor out = num::gelu(t.value(a));
  return t.record("gelu", std::move(out), t.requires_grad(a), [a](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    Tensor dx(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = g[i] * gelu_derivative(x[i]);
    tp.accumulate(a, dx);
  });
}

Var gather_rows(Tape& t, Var table, std::span<const std::size_t> rows) {
  const Tensor& tab = t.value(table);
  Tensor out(rows.size(), tab.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= tab.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_string(tab));
    }
    auto src = tab.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  std::vector<std::size_t> ids(rows.begin(), rows.end());
  return t.record("gather_rows", std::move(out), t.requires_grad(table), [table, ids](Tape& tp, const Tensor& g) {
    Tensor& slot = tp.grad_slot(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto dst = slot.row_span(ids[i]);
      auto src = g.row_span(i);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Var scaled_dot_attention(Tape& t, Var q, Var k, Var v, const Tensor* allowed) {
  const Tensor& qv = t.value(q);
  const Tensor& kv = t.value(k);
  if (qv.cols() != kv.cols()) throw DimensionError("attention(Q,K): shape mismatch " + shape_string(qv) + " vs " + shape_string(kv));
  Var scores = scale(t, matmul_nt(t, q, k), 1.0 / std::sqrt(static_cast<double>(qv.cols())));
  if (allowed != nullptr) scores = add(t, scores, t.constant(attention_mask_bias(*allowed)));
  return matmul(t, softmax_rows(t, scores), v);
}

Var cross_entropy(Tape& t, Var logits, std::size_t target) {
  const Tensor& z = t.value(logits);
  if (z.rows() != 1) throw DimensionError("cross_entropy: expected a logit row, got " + shape_string(z));
  if (target >= z.cols()) throw DimensionError("cross_entropy: target " + std::to_string(target) + " out of range");
  Tensor p = num::softmax(z, Axis::Rows);
  double mx = z[0];
  for (std::size_t j = 1; j < z.cols(); ++j) mx = std::max(mx, z[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < z.cols(); ++j) total += std::exp(z[j] - mx);
  const double loss = (mx - z[target]) + std::log(total);
  return t.record("cross_entropy", Tensor::scalar(loss), t.requires_grad(logits),
                  [logits, target, p = std::move(p)](Tape& tp, const Tensor& g) {
                    Tensor d = num::scale(p, g[0]);
                    d[target] -= g[0];
                    tp.accumulate(logits, d);
                  });
}

namespace {

// Loss and gradients of 2 - 2 cos(a, b) for flat vectors.
struct CosineTerms {
  double loss;
  double cos;
  double na;
  double nb;
};

CosineTerms cosine_terms(std::span<const double> a, std::span<const double> b, const char* op) {
  double dot = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa);
  const double nb = std::sqrt(bb);
  if (na == 0.0 || nb == 0.0) throw NumericError(std::string(op) + ": zero-norm input has no direction");
  const double c = dot / (na * nb);
  return {2.0 - 2.0 * c, c, na, nb};
}

void cosine_grad(std::span<const double> a, std::span<const double> b, const CosineTerms& ct, double g,
                 std::span<double> da, std::span<double> db) {
  // dL/da = -2 (b / (na nb) - c a / na^2)
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!da.empty()) da[i] += g * -2.0 * (b[i] / (ct.na * ct.nb) - ct.cos * a[i] / (ct.na * ct.na));
    if (!db.empty()) db[i] += g * -2.0 * (a[i] / (ct.na * ct.nb) - ct.cos * b[i] / (ct.nb * ct.nb));
  }
}

}  // namespace

Var cosine_alignment(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) throw DimensionError("cosine_alignment: shape mismatch " + shape_string(av) + " vs " + shape_string(bv));
  const CosineTerms ct = cosine_terms(av.values(), bv.values(), "cosine_alignment");
  return t.record("cosine_alignment", Tensor::scalar(ct.loss), any_grad(t, {a, b}), [a, b, ct](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    const Tensor& y = tp.value(b);
    Tensor da(x.rows(), x.cols());
    Tensor db(y.rows(), y.cols());
    cosine_grad(x.values(), y.values(), ct, g[0], da.values(), db.values());
    tp.accumulate(a, da);
    tp.accumulate(b, db);
  });
}

Var row_cosine_alignment(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) throw DimensionError("row_cosine_alignment: shape mismatch " + shape_string(av) + " vs " + shape_string(bv));
  if (av.rows() == 0) throw DimensionError("row_cosine_alignment: zero rows");
  std::vector<CosineTerms> terms;
  double total = 0.0;
  for (std::size_t i = 0; i < av.rows(); ++i) {
    terms.push_back(cosine_terms(av.row_span(i), bv.row_span(i), "row_cosine_alignment"));
    total += terms.back().loss;
  }
  const double m = static_cast<double>(av.rows());
  return t.record("row_cosine_alignment", Tensor::scalar(total / m), any_grad(t, {a, b}),
                  [a, b, terms = std::move(terms), m](Tape& tp, const Tensor& g) {
                    const Tensor& x = tp.value(a);
                    const Tensor& y = tp.value(b);
                    Tensor da(x.rows(), x.cols());
                    Tensor db(y.rows(), y.cols());
                    for (std::size_t i = 0; i < x.rows(); ++i) {
                      cosine_grad(x.row_span(i), y.row_span(i), terms[i], g[0] / m, da.row_span(i), db.row_span(i));
                    }
                    tp.accumulate(a, da);
                    tp.accumulate(b, db);
                  });
}

}  // namespace ag
}  // namespace sgmpt::num
