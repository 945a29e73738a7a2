#include "sgmpt/checkpoint.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sgmpt/errors.hpp"

namespace sgmpt::num {

const std::string* TensorFile::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return &v;
  return nullptr;
}

const NamedTensor* TensorFile::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::string format_hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0' || errno == ERANGE) throw FormatError("not a number: '" + text + "'");
  return v;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << "sgmpt-tensors 1\n";
  for (const auto& [k, v] : file.meta) out << "meta " << k << ' ' << v << '\n';
  for (const auto& t : file.tensors) {
    out << "tensor " << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << ' ' << (t.trainable ? 1 : 0) << '\n';
    for (std::size_t r = 0; r < t.value.rows(); ++r) {
      for (std::size_t c = 0; c < t.value.cols(); ++c) {
        if (c != 0) out << ' ';
        out << format_hexfloat(t.value(r, c));
      }
      out << '\n';
    }
  }
  out << "end\n";
  if (!out) throw FormatError("write failed: " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open: " + path.string());
  TensorFile file;
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    return true;
  };
  if (!next() || line != "sgmpt-tensors 1") throw ParseError(path.string() + ": missing 'sgmpt-tensors 1' header", line_no);
  bool ended = false;
  while (next()) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      file.meta.emplace_back(key, value);
    } else if (kind == "tensor") {
      NamedTensor t;
      std::size_t rows = 0;
      std::size_t cols = 0;
      int trainable = 1;
      if (!(ls >> t.name >> rows >> cols >> trainable)) throw ParseError(path.string() + ": bad tensor header", line_no);
      t.trainable = trainable != 0;
      t.value = Tensor(rows, cols);
      for (std::size_t r = 0; r < rows; ++r) {
        if (!next()) throw ParseError(path.string() + ": truncated tensor " + t.name, line_no);
        std::istringstream vs(line);
        std::string tok;
        std::size_t c = 0;
        while (vs >> tok) {
          if (c >= cols) throw ParseError(path.string() + ": too many values in tensor " + t.name, line_no);
          try {
            t.value(r, c++) = parse_double(tok);
          } catch (const FormatError& e) {
            throw ParseError(path.string() + ": " + e.what(), line_no);
          }
        }
        if (c != cols) throw ParseError(path.string() + ": too few values in tensor " + t.name, line_no);
      }
      file.tensors.push_back(std::move(t));
    } else {
      throw ParseError(path.string() + ": unexpected record '" + kind + "'", line_no);
    }
  }
  if (!ended) throw ParseError(path.string() + ": missing 'end' marker", line_no);
  return file;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     std::vector<std::pair<std::string, std::string>> meta) {
  TensorFile file;
  file.meta = std::move(meta);
  for (std::size_t i = 0; i < params.size(); ++i) {
    file.tensors.push_back({params[i].name, params[i].value, params[i].trainable});
  }
  write_tensor_file(path, file);
}

TensorFile load_checkpoint(const std::filesystem::path& path, ParameterStore& params) {
  TensorFile file = read_tensor_file(path);
  if (file.tensors.size() != params.size()) {
    throw FormatError(path.string() + ": checkpoint has " + std::to_string(file.tensors.size()) +
                      " tensors, model expects " + std::to_string(params.size()));
  }
  for (const auto& t : file.tensors) {
    Parameter* p = params.find(t.name);
    if (p == nullptr) throw FormatError(path.string() + ": unknown tensor " + t.name);
    if (!p->value.same_shape(t.value)) {
      throw FormatError(path.string() + ": shape mismatch for " + t.name + ": file " + shape_string(t.value) +
                        ", model " + shape_string(p->value));
    }
    p->value = t.value;
  }
  return file;
}

}  // namespace sgmpt::num
