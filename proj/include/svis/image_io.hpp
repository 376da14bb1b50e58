#pragma once

// Binary PGM/PPM read/write (8-bit, maxval 255).

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "svis/common.hpp"

namespace svis {

inline void write_pnm(const std::string& path, int width, int height,
                      int channels, const std::vector<uint8_t>& pixels) {
  require(channels == 1 || channels == 3, "write_pnm: 1 or 3 channels");
  require((long long)pixels.size() == (long long)width * height * channels,
          "write_pnm: pixel buffer size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << (channels == 1 ? "P5" : "P6") << "\n"
    << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()),
          (std::streamsize)pixels.size());
  if (!f) throw IoError("failed writing: " + path);
}

struct PnmImage {
  int width = 0, height = 0, channels = 0;
  std::vector<uint8_t> pixels;  // row-major, interleaved
};

inline PnmImage read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string magic;
  f >> magic;
  PnmImage img;
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    throw IoError("unsupported PNM magic '" + magic + "' in " + path);
  int maxval = 0;
  f >> img.width >> img.height >> maxval;
  if (!f || img.width <= 0 || img.height <= 0 || maxval != 255)
    throw IoError("malformed PNM header: " + path);
  f.get();  // single whitespace after header
  img.pixels.resize((size_t)img.width * img.height * img.channels);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         (std::streamsize)img.pixels.size());
  if (!f) throw IoError("truncated PNM: " + path);
  return img;
}

}  // namespace svis
