#pragma once

// Run-length coding for binary masks: alternating run counts, row-major
// flattening, always starting with a (possibly zero) run of zeros.

#include <cstdint>
#include <vector>

#include "svis/common.hpp"

namespace svis {

inline std::vector<int> rle_encode(const std::vector<uint8_t>& mask) {
  std::vector<int> counts;
  uint8_t current = 0;  // runs alternate starting with zeros
  int run = 0;
  for (uint8_t v : mask) {
    require(v == 0 || v == 1, "rle_encode: mask values must be 0 or 1");
    if (v == current) {
      ++run;
    } else {
      counts.push_back(run);
      current = v;
      run = 1;
    }
  }
  counts.push_back(run);
  if (counts.size() == 1 && mask.empty()) counts.clear();
  return counts;
}

inline std::vector<uint8_t> rle_decode(const std::vector<int>& counts,
                                       size_t expected_size) {
  std::vector<uint8_t> mask;
  mask.reserve(expected_size);
  uint8_t current = 0;
  for (int c : counts) {
    require(c >= 0, "rle_decode: negative run length");
    mask.insert(mask.end(), (size_t)c, current);
    current = 1 - current;
  }
  require(mask.size() == expected_size, "rle_decode: size mismatch");
  return mask;
}

}  // namespace svis
