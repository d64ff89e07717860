#include "xemb/pgm.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace xemb {

void write_pgm(const std::string& path, const std::vector<double>& image,
               int height, int width) {
  if (image.size() != static_cast<size_t>(height) * width)
    throw std::invalid_argument("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  for (double v : image) {
    const unsigned char b =
        static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw std::runtime_error("write_pgm: write failed");
}

PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5")
    throw std::runtime_error("read_pgm: expected P5, got '" + magic + "'");
  int width = 0, height = 0, maxval = 0;
  // skip whitespace and '#' comments between header fields
  auto next_int = [&in](int* v) {
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    in >> *v;
  };
  next_int(&width);
  next_int(&height);
  next_int(&maxval);
  if (!in || width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("read_pgm: bad header in " + path);
  in.get();  // single whitespace after maxval
  PgmImage img;
  img.height = height;
  img.width = width;
  img.values.resize(static_cast<size_t>(height) * width);
  std::vector<unsigned char> raw(img.values.size());
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("read_pgm: truncated " + path);
  for (size_t i = 0; i < raw.size(); ++i)
    img.values[i] = static_cast<double>(raw[i]) / maxval;
  return img;
}

}  // namespace xemb
