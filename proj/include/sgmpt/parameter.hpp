#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgmpt/tensor.hpp"

namespace sgmpt::num {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value
  bool trainable = true;

  void zero_grad() { grad.fill(0.0); }
};

// Per-query gradient contributions, keyed by parameter identity. Batches reduce
// these into Parameter::grad in query order, which keeps the serial and the
// OpenMP batch drivers bitwise identical.
class GradientBuffer {
 public:
  void add(const Parameter& p, const Tensor& g);
  const Tensor* find(const Parameter& p) const;
  bool empty() const { return grads_.empty(); }
  void clear() { grads_.clear(); }

 private:
  std::unordered_map<const Parameter*, Tensor> grads_;
};

// Owns parameters with stable addresses, in creation order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Tensor init, bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t element_count() const;
  std::size_t trainable_element_count() const;

  void zero_grad();
  // grad += buffer, for every parameter the buffer touches.
  void accumulate(const GradientBuffer& buffer);

  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace sgmpt::num
