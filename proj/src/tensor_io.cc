#include "fpswitch/tensor_io.h"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "fpswitch/error.h"

namespace fpswitch {

void WriteTensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out << "fpswitch-tensors 1\n" << tensors.size() << "\n";
  for (const auto& t : tensors) {
    if (static_cast<size_t>(t.rows) * t.cols != t.values.size()) {
      throw DomainError("tensor '" + t.name + "' shape does not match values");
    }
    out << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
    for (size_t i = 0; i < t.values.size(); ++i) {
      if (i) out << ' ';
      out << fmt::format("{:.17g}", t.values[i]);
    }
    out << '\n';
  }
}

std::vector<NamedTensor> ReadTensors(std::istream& in) {
  std::string magic;
  int version = 0;
  size_t count = 0;
  if (!(in >> magic >> version) || magic != "fpswitch-tensors" || version != 1) {
    throw IoError("not a fpswitch tensor file");
  }
  if (!(in >> count)) throw IoError("missing tensor count");
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    if (!(in >> t.name >> t.rows >> t.cols) || t.rows < 0 || t.cols < 0) {
      throw IoError("bad tensor header");
    }
    t.values.resize(static_cast<size_t>(t.rows) * t.cols);
    for (double& v : t.values) {
      // operator>> rejects "inf"/"nan"; go through strtod.
      std::string tok;
      if (!(in >> tok)) throw IoError("truncated tensor '" + t.name + "'");
      v = std::strtod(tok.c_str(), nullptr);
    }
  }
  return tensors;
}

void SaveTensors(const std::string& path,
                 const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  WriteTensors(out, tensors);
  if (!out) throw IoError("write failed: " + path);
}

std::vector<NamedTensor> LoadTensors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  return ReadTensors(in);
}

const NamedTensor& FindTensor(const std::vector<NamedTensor>& tensors,
                              const std::string& name, int rows, int cols) {
  for (const auto& t : tensors) {
    if (t.name != name) continue;
    if ((rows >= 0 && t.rows != rows) || (cols >= 0 && t.cols != cols)) {
      throw DomainError(fmt::format("tensor '{}' has shape {}x{}, want {}x{}",
                                    name, t.rows, t.cols, rows, cols));
    }
    return t;
  }
  throw DomainError("missing tensor '" + name + "'");
}

}  // namespace fpswitch
