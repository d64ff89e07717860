// Minimal binary PGM (P5) image I/O, values mapped to [0, 1].
#pragma once

#include <string>
#include <vector>

namespace xemb {

void write_pgm(const std::string& path, const std::vector<double>& image,
               int height, int width);

struct PgmImage {
  int height = 0, width = 0;
  std::vector<double> values;  // [0, 1]
};
PgmImage read_pgm(const std::string& path);

}  // namespace xemb
