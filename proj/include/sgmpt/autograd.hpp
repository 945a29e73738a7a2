#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "sgmpt/parameter.hpp"
#include "sgmpt/tensor.hpp"

// Reverse-mode gradients for the fixed op set the encoders and fusion losses
// need. A Tape records one forward pass; backward() walks it in reverse.
namespace sgmpt::num {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor value);
  // Leaf whose gradient is kept and readable through grad() after backward().
  Var variable(Tensor value);
  // Leaf aliasing a parameter's value; gradients flow to the sink on backward()
  // when the parameter is trainable.
  Var parameter(const Parameter& p);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() w.r.t. v (zeros when nothing reached it).
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // d(seed * loss)/d(leaves). Parameter gradients are added to `sink`.
  void backward(Var loss, GradientBuffer* sink, double seed = 1.0);

  // Op plumbing.
  Var record(std::string_view op, Tensor value, bool requires_grad, BackwardFn fn);
  void accumulate(Var v, const Tensor& g);
  Tensor& grad_slot(Var v);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    const Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
};

namespace ag {

Var matmul(Tape& t, Var a, Var b);
Var matmul_nt(Tape& t, Var a, Var b);  // a * b^T
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var add_row(Tape& t, Var a, Var row);  // broadcast a 1xC bias over rows
Var concat_rows(Tape& t, std::span<const Var> parts);
Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t count);
Var replace_row(Tape& t, Var a, std::size_t row, Var v);
Var repeat_rows(Tape& t, Var v, std::size_t count);
Var mean_rows(Tape& t, Var a);
Var softmax_rows(Tape& t, Var a);
Var layer_norm(Tape& t, Var x, Var gain, Var bias);
Var gelu(Tape& t, Var a);
Var gather_rows(Tape& t, Var table, std::span<const std::size_t> rows);
Var scaled_dot_attention(Tape& t, Var q, Var k, Var v, const Tensor* allowed = nullptr);

// -log softmax(logits)[target] for a 1xN logit row; returns 1x1.
Var cross_entropy(Tape& t, Var logits, std::size_t target);

// ||a/||a|| - b/||b|| ||^2 = 2 - 2 <a,b>_F / (||a||_F ||b||_F); 1x1.
Var cosine_alignment(Tape& t, Var a, Var b);
// Mean over rows of the row-wise version of cosine_alignment.
Var row_cosine_alignment(Tape& t, Var a, Var b);

}  // namespace ag
}  // namespace sgmpt::num
