#pragma once

// Decoder and prediction heads: skip-fusion upsampling, per-slot class
// probabilities from the instance code, and dynamic-convolution masks
// (per-slot filters generated from the code, applied to the decoded
// feature map, softmax over the slot axis per pixel).

#include <vector>

#include "svis/frame.hpp"
#include "svis/matching.hpp"
#include "svis/params.hpp"
#include "svis/tensor.hpp"

namespace svis {

struct DecoderParams {
  Tensor skip_proj_w, skip_proj_b;  // 1x1 conv on the skip features
  Tensor fuse1_w, fuse1_b;          // 3x3 after concatenation
  Tensor fuse2_w, fuse2_b;          // 3x3 -> D_fout
  // Class head: two fully connected layers then softmax over C+1.
  Tensor cls_w1, cls_b1, cls_w2, cls_b2;
  // Mask head: two fully connected layers produce the dynamic filters.
  Tensor mask_w1, mask_b1, mask_w2, mask_b2;

  static DecoderParams create(ParamStore& ps, int d_f, int d_fout,
                              int num_classes, Rng& rng) {
    DecoderParams p;
    p.skip_proj_w = ps.create_gaussian("decoder.skip.w", {1, 1, d_f, d_f},
                                       std::sqrt(2.0 / d_f), rng);
    p.skip_proj_b = ps.create_full("decoder.skip.b", {d_f}, 0.0);
    p.fuse1_w = ps.create_gaussian("decoder.fuse1.w", {3, 3, 2 * d_f, d_fout},
                                   std::sqrt(2.0 / (9.0 * 2 * d_f)), rng);
    p.fuse1_b = ps.create_full("decoder.fuse1.b", {d_fout}, 0.0);
    p.fuse2_w = ps.create_gaussian("decoder.fuse2.w", {3, 3, d_fout, d_fout},
                                   std::sqrt(2.0 / (9.0 * d_fout)), rng);
    p.fuse2_b = ps.create_full("decoder.fuse2.b", {d_fout}, 0.0);
    p.cls_w1 = ps.create_gaussian("head.cls.w1", {d_f, d_f}, std::sqrt(2.0 / d_f), rng);
    p.cls_b1 = ps.create_full("head.cls.b1", {d_f}, 0.0);
    p.cls_w2 = ps.create_gaussian("head.cls.w2", {d_f, num_classes + 1},
                                  std::sqrt(1.0 / d_f), rng);
    p.cls_b2 = ps.create_full("head.cls.b2", {num_classes + 1}, 0.0);
    p.mask_w1 = ps.create_gaussian("head.mask.w1", {d_f, d_f}, std::sqrt(2.0 / d_f), rng);
    p.mask_b1 = ps.create_full("head.mask.b1", {d_f}, 0.0);
    p.mask_w2 = ps.create_gaussian("head.mask.w2", {d_f, d_fout},
                                   std::sqrt(1.0 / d_f), rng);
    p.mask_b2 = ps.create_full("head.mask.b2", {d_fout}, 0.0);
    return p;
  }
};

// Decoded (upsampled) features, [H_o, W_o, D_fout].
struct DecodedFeatures {
  Tensor values;
  int stride = 2;
  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
  int channels() const { return values.dim(2); }
  Tensor tokens() const { return reshape(values, {height() * width(), channels()}); }
};

// Bilinear-upsample the encoder output 2x, concatenate projected skip
// features, and fuse with two convolutions.
inline DecodedFeatures decode_features(const FeatureMap& f, const FeatureMap& skip,
                                       const DecoderParams& p) {
  require(skip.height() == 2 * f.height() && skip.width() == 2 * f.width(),
          "decode_features: skip spatial dims must be 2x the encoder dims");
  Tensor up = upsample_bilinear2x(f.values);
  Tensor sk = conv2d(skip.values, p.skip_proj_w, p.skip_proj_b, 1, 0);
  Tensor x = concat({up, sk}, 2);
  x = relu(conv2d(x, p.fuse1_w, p.fuse1_b, 1, 1));
  x = conv2d(x, p.fuse2_w, p.fuse2_b, 1, 1);
  return DecodedFeatures{x, skip.stride};
}

// Per-slot MLP then row softmax; rows are [L, C+1] with the empty class
// in the last column.
inline Tensor predict_classes(const InstanceCode& e, const DecoderParams& p) {
  Tensor h = relu(add_bias(matmul(e.values, p.cls_w1), p.cls_b1));
  Tensor logits = add_bias(matmul(h, p.cls_w2), p.cls_b2);
  return softmax(logits, 1);
}

// Dynamic convolution: filters theta = MLP(e) of shape [L, D_fout], logits
// theta * f_out^T, softmax over the slot axis per pixel. Returns [L, H_o*W_o].
inline Tensor predict_masks(const InstanceCode& e, const DecodedFeatures& f_out,
                            const DecoderParams& p) {
  Tensor h = relu(add_bias(matmul(e.values, p.mask_w1), p.mask_b1));
  Tensor theta = add_bias(matmul(h, p.mask_w2), p.mask_b2);
  Tensor logits = matmul(theta, transpose(f_out.tokens()));  // [L, H_o*W_o]
  return softmax(logits, 0);
}

inline FramePrediction predict_frame(const InstanceCode& e, const FeatureMap& f,
                                     const FeatureMap& skip, const DecoderParams& p) {
  DecodedFeatures dec = decode_features(f, skip, p);
  FramePrediction out;
  out.class_probs = predict_classes(e, p);
  out.masks = predict_masks(e, dec, p);
  out.height = dec.height();
  out.width = dec.width();
  return out;
}

// Binary mask extraction: pixel p belongs to slot i iff i is the argmax
// over slots and the soft value exceeds 1/L (pure argmax would hand
// background pixels to some slot).
inline std::vector<std::vector<uint8_t>> binarize_masks(const FramePrediction& pred) {
  const int L = pred.slots();
  const int P = pred.height * pred.width;
  const double threshold = 1.0 / L;
  std::vector<std::vector<uint8_t>> out(L, std::vector<uint8_t>(P, 0));
  for (int p = 0; p < P; ++p) {
    int best = 0;
    double best_v = pred.masks.at2(0, p);
    for (int s = 1; s < L; ++s) {
      const double v = pred.masks.at2(s, p);
      if (v > best_v) {
        best_v = v;
        best = s;
      }
    }
    if (best_v > threshold) out[best][p] = 1;
  }
  return out;
}

}  // namespace svis
