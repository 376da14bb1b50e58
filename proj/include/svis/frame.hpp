#pragma once

// Per-frame hybrid representation: an instance code (one slot per potential
// instance, slot index carries identity) plus a pixel feature map, with a
// small convolutional stand-in encoder producing the initial features.

#include <vector>

#include "svis/params.hpp"
#include "svis/tensor.hpp"

namespace svis {

// Input image, values in [0,1], laid out [H,W,C].
struct ImageFrame {
  Tensor pixels;
  int height() const { return pixels.dim(0); }
  int width() const { return pixels.dim(1); }
  int channels() const { return pixels.dim(2); }
};

// Pixel features for one frame, [H,W,D_f], at `stride` relative to the
// input image.
struct FeatureMap {
  Tensor values;
  int stride = 1;
  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
  int channels() const { return values.dim(2); }
  // View as a [H*W, D_f] matrix of pixel tokens.
  Tensor tokens() const {
    return reshape(values, {height() * width(), channels()});
  }
  static FeatureMap from_tokens(const Tensor& tokens, int h, int w, int stride) {
    return FeatureMap{reshape(tokens, {h, w, tokens.dim(1)}), stride};
  }
};

// The L x D_e latent. Slot i at frame t and slot i at frame t-1 denote the
// same instance; no operation may reorder or pool the slot axis.
struct InstanceCode {
  Tensor values;  // [L, D_e]
  int slots() const { return values.dim(0); }
  int dim() const { return values.dim(1); }
};

// Learnable positional encodings indexed by frame offset: 0 is the target
// frame, 1..n_ref_max are reference offsets.
struct PositionalTable {
  Tensor code_pe;   // [(n_ref_max+1) * L, D_e]
  Tensor pixel_pe;  // [(n_ref_max+1) * H*W, D_f]
  int slots = 0;
  int pixels = 0;
  int n_ref_max = 0;

  Tensor code_slice(int offset) const {
    require(offset >= 0 && offset <= n_ref_max,
            "positional offset " + std::to_string(offset) + " exceeds table");
    return slice(code_pe, 0, offset * slots, slots);
  }
  Tensor pixel_slice(int offset) const {
    require(offset >= 0 && offset <= n_ref_max,
            "positional offset " + std::to_string(offset) + " exceeds table");
    return slice(pixel_pe, 0, offset * pixels, pixels);
  }
};

// The learnable initial instance code, Gaussian(0, 0.02).
inline InstanceCode init_instance_code(int L, int D_e, uint64_t seed) {
  require(L >= 1 && D_e >= 1, "init_instance_code: L and D_e must be >= 1");
  Rng rng(seed);
  return InstanceCode{Tensor::gaussian({L, D_e}, 0.02, rng, true)};
}

inline InstanceCode add_positional_encoding(const InstanceCode& e,
                                            const PositionalTable& table,
                                            int frame_offset) {
  return InstanceCode{add(e.values, table.code_slice(frame_offset))};
}

// Operates on pixel tokens ([H*W, D_f]).
inline Tensor add_positional_encoding(const Tensor& pixel_tokens,
                                      const PositionalTable& table,
                                      int frame_offset) {
  return add(pixel_tokens, table.pixel_slice(frame_offset));
}

// ---------------------------------------------------------------------------
// Convolutional stand-in encoder: two stride-2 convolutions followed by two
// residual blocks, total stride 4. The stride-2 intermediate doubles as the
// decoder's skip input.
// ---------------------------------------------------------------------------

struct EncoderParams {
  Tensor conv1_w, conv1_b;  // [3,3,C_in,D_f] stride 2
  Tensor conv2_w, conv2_b;  // [3,3,D_f,D_f] stride 2
  // Two residual blocks, two 3x3 convolutions each.
  Tensor res_w[4], res_b[4];

  static EncoderParams create(ParamStore& ps, int c_in, int d_f, Rng& rng) {
    EncoderParams p;
    const double s1 = std::sqrt(2.0 / (9.0 * c_in));
    const double s2 = std::sqrt(2.0 / (9.0 * d_f));
    p.conv1_w = ps.create_gaussian("encoder.conv1.w", {3, 3, c_in, d_f}, s1, rng);
    p.conv1_b = ps.create_full("encoder.conv1.b", {d_f}, 0.0);
    p.conv2_w = ps.create_gaussian("encoder.conv2.w", {3, 3, d_f, d_f}, s2, rng);
    p.conv2_b = ps.create_full("encoder.conv2.b", {d_f}, 0.0);
    for (int i = 0; i < 4; ++i) {
      const std::string base = "encoder.res" + std::to_string(i);
      p.res_w[i] = ps.create_gaussian(base + ".w", {3, 3, d_f, d_f}, s2, rng);
      p.res_b[i] = ps.create_full(base + ".b", {d_f}, 0.0);
    }
    return p;
  }
};

struct EncodedFrame {
  FeatureMap features;  // stride 4
  FeatureMap skip;      // stride 2
};

inline EncodedFrame encode_frame(const ImageFrame& frame, const EncoderParams& p) {
  require(frame.height() % 4 == 0 && frame.width() % 4 == 0,
          "encode_frame: input dimensions must be multiples of 4, got " +
              shape_str(frame.pixels.shape()));
  Tensor x = relu(conv2d(frame.pixels, p.conv1_w, p.conv1_b, 2, 1));
  FeatureMap skip{x, 2};
  x = relu(conv2d(x, p.conv2_w, p.conv2_b, 2, 1));
  for (int blk = 0; blk < 2; ++blk) {
    Tensor y = relu(conv2d(x, p.res_w[2 * blk], p.res_b[2 * blk], 1, 1));
    y = conv2d(y, p.res_w[2 * blk + 1], p.res_b[2 * blk + 1], 1, 1);
    x = relu(add(x, y));
  }
  return EncodedFrame{FeatureMap{x, 4}, skip};
}

}  // namespace svis
