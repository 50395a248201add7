#ifndef FPSWITCH_TENSOR_IO_H_
#define FPSWITCH_TENSOR_IO_H_

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace fpswitch {

// A named real matrix. Vectors use cols == 1.
struct NamedTensor {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // row-major, rows * cols entries
};

// Text format shared by every serialized model:
//
//   fpswitch-tensors 1
//   <tensor count>
//   <name> <rows> <cols>
//   <rows*cols values, space separated, %.17g>
//   ...
//
// Values round-trip bit-exactly.
void WriteTensors(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> ReadTensors(std::istream& in);

void SaveTensors(const std::string& path,
                 const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> LoadTensors(const std::string& path);

// Looks up a tensor by name; throws DomainError when absent or mis-shaped.
// A negative rows/cols accepts any extent.
const NamedTensor& FindTensor(const std::vector<NamedTensor>& tensors,
                              const std::string& name, int rows, int cols);

}  // namespace fpswitch

#endif  // FPSWITCH_TENSOR_IO_H_
