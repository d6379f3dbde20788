#pragma once

#include <string>
#include <vector>

namespace raydet {

// Binary image-map container, little-endian:
//   magic "RDMAP001" (8 bytes)
//   dtype tag "f64 " (4 bytes)
//   u32 height, u32 width, u32 channels
//   height*width*channels float64 payload, row-major (y, x, c)
struct MapFile {
  int height = 0, width = 0, channels = 0;
  std::vector<double> data;

  static MapFile wrap(int height, int width, int channels, std::vector<double> data);
  void save(const std::string& path) const;
  static MapFile load(const std::string& path);
};

}  // namespace raydet
