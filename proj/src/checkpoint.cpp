#include "xemb/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace xemb {

namespace {
constexpr char kMagic[9] = "XEMBTEN1";

void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
}  // namespace

void write_tensor_container(
    std::ostream& out,
    const std::vector<std::pair<std::string, Tensor>>& tensors,
    bool f32_storage) {
  out.write(kMagic, 8);
  put_u32(out, 1);
  put_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, f32_storage ? 1u : 0u);
    put_u32(out, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape())
      out.write(reinterpret_cast<const char*>(&d), sizeof(d));
    if (f32_storage) {
      for (double v : t.data()) {
        const float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof(f));
      }
    } else {
      out.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    }
  }
  if (!out) throw std::runtime_error("write_tensor_container: write failed");
}

std::map<std::string, TensorEntry> read_tensor_container(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("read_tensor_container: bad magic");
  const uint32_t version = get_u32(in);
  if (version != 1)
    throw std::runtime_error("read_tensor_container: unsupported version " +
                             std::to_string(version));
  const uint32_t count = get_u32(in);
  std::map<std::string, TensorEntry> out;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t dtype = get_u32(in);
    const uint32_t rank = get_u32(in);
    TensorEntry e;
    int64_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      int64_t d = 0;
      in.read(reinterpret_cast<char*>(&d), sizeof(d));
      e.shape.push_back(d);
      numel *= d;
    }
    e.data.resize(static_cast<size_t>(numel));
    if (dtype == 0) {
      in.read(reinterpret_cast<char*>(e.data.data()),
              static_cast<std::streamsize>(e.data.size() * sizeof(double)));
    } else if (dtype == 1) {
      for (auto& v : e.data) {
        float f = 0;
        in.read(reinterpret_cast<char*>(&f), sizeof(f));
        v = static_cast<double>(f);
      }
    } else {
      throw std::runtime_error("read_tensor_container: unknown dtype");
    }
    if (!in)
      throw std::runtime_error("read_tensor_container: truncated at '" + name +
                               "'");
    out.emplace(std::move(name), std::move(e));
  }
  return out;
}

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors,
                  bool f32_storage) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_tensors: cannot open " + path);
  write_tensor_container(out, tensors, f32_storage);
}

std::map<std::string, TensorEntry> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_tensors: cannot open " + path);
  return read_tensor_container(in);
}

void assign_tensor(Tensor& dst, const TensorEntry& src,
                   const std::string& name) {
  if (dst.shape() != src.shape)
    throw std::runtime_error("assign_tensor: shape mismatch for '" + name +
                             "': " + shape_str(dst.shape()) + " vs " +
                             shape_str(src.shape));
  dst.mutable_data() = src.data;
}

}  // namespace xemb
