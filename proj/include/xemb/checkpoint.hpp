// Tensor checkpoint container.
//
// Byte layout (all integers little-endian):
//   magic   8 bytes  "XEMBTEN1"
//   version u32      currently 1
//   count   u32      number of entries
// then per entry:
//   name_len u32, name bytes (UTF-8, no terminator)
//   dtype    u32    0 = float64, 1 = float32 storage
//   rank     u32
//   dims     rank x i64
//   payload  product(dims) x (8 or 4) bytes, little-endian IEEE-754
#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xemb/tensor.hpp"

namespace xemb {

struct TensorEntry {
  Shape shape;
  std::vector<double> data;
};

void write_tensor_container(
    std::ostream& out,
    const std::vector<std::pair<std::string, Tensor>>& tensors,
    bool f32_storage = false);

std::map<std::string, TensorEntry> read_tensor_container(std::istream& in);

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors,
                  bool f32_storage = false);
std::map<std::string, TensorEntry> load_tensors(const std::string& path);

// Copies container data into an existing same-shape tensor.
void assign_tensor(Tensor& dst, const TensorEntry& src, const std::string& name);

}  // namespace xemb
