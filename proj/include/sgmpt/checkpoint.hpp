#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sgmpt/parameter.hpp"
#include "sgmpt/tensor.hpp"

// Named tensor container used for model checkpoints and structure tables.
//
//   sgmpt-tensors 1
//   meta <key> <value>            (any number; value runs to end of line)
//   tensor <name> <rows> <cols> <trainable 0|1>
//   <rows lines of cols C99 hexfloat values>
//   ...
//   end
//
// Hexfloat text makes save/load bit-exact while staying diff-able.
namespace sgmpt::num {

struct NamedTensor {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct TensorFile {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedTensor> tensors;

  const std::string* meta_value(const std::string& key) const;
  const NamedTensor* tensor(const std::string& name) const;
};

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     std::vector<std::pair<std::string, std::string>> meta = {});
// Loads values into an existing store; every stored tensor must match a
// parameter by name and shape, and every parameter must be present.
TensorFile load_checkpoint(const std::filesystem::path& path, ParameterStore& params);

std::string format_hexfloat(double v);
double parse_double(const std::string& text);

}  // namespace sgmpt::num
