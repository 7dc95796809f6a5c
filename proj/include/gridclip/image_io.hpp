#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridclip {

/// Binary PPM (P6, 8-bit) writer. Pixels are channel-planar floats in [0,1].
inline void write_ppm(const std::string& path, int width, int height, const std::vector<float>& planar) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P6\n" << width << " " << height << "\n255\n";
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  std::vector<unsigned char> row(static_cast<std::size_t>(width) * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = planar[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * width + x];
        v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        row[static_cast<std::size_t>(x) * 3 + c] = static_cast<unsigned char>(v * 255.0f + 0.5f);
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

inline void read_ppm(const std::string& path, int& width, int& height, std::vector<float>& planar) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("unsupported image format in " + path);
  int maxval = 0;
  in >> width >> height >> maxval;
  if (maxval != 255) throw std::runtime_error("unsupported maxval in " + path);
  in.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("truncated image: " + path);
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  planar.assign(plane * 3, 0.f);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      planar[static_cast<std::size_t>(c) * plane + i] = static_cast<float>(raw[i * 3 + c]) / 255.0f;
}

}  // namespace gridclip
