#pragma once

// Full model assembly: encoder stack + decoding heads, built from one
// RunConfig with every parameter registered in a single ParamStore.

#include <string>

#include "svis/attention.hpp"
#include "svis/checkpoint.hpp"
#include "svis/config.hpp"
#include "svis/heads.hpp"
#include "svis/matching.hpp"
#include "svis/params.hpp"

namespace svis {

struct VisModel {
  StackConfig stack_cfg;
  int num_classes = 0;
  ParamStore params;
  StackParams stack;
  DecoderParams decoder;

  VisModel(const RunConfig& cfg) : stack_cfg(cfg.stack_config()),
                                   num_classes(cfg.num_classes) {
    stack_cfg.validate();
    Rng rng(cfg.seed);
    stack = StackParams::create(params, stack_cfg, rng);
    decoder = DecoderParams::create(params, stack_cfg.d_model,
                                    stack_cfg.d_model, num_classes, rng);
  }

  ReferenceBuffer make_buffer() const { return ReferenceBuffer(stack_cfg.n_ref); }

  // One online step: encode the frame against the buffer contents and push
  // its snapshot; returns code + features for decoding.
  StackOutput encode_step(const ImageFrame& frame, ReferenceBuffer& buf,
                          const std::string& dump_prefix = "") const {
    return run_encoder_stack(frame, buf, stack_cfg, stack, dump_prefix);
  }

  FramePrediction predict(const StackOutput& out) const {
    return predict_frame(out.code, out.features, out.skip, decoder);
  }

  void save(const std::string& path) const { save_checkpoint(path, params); }
  void load(const std::string& path) { load_checkpoint(path, params); }
};

// Majority-vote block downsampling of a binary mask (ties round up), used
// to compare ground truth with predictions at the decoder resolution.
inline std::vector<uint8_t> downsample_mask(const std::vector<uint8_t>& mask,
                                            int height, int width, int factor) {
  require(factor >= 1 && height % factor == 0 && width % factor == 0,
          "downsample_mask: dimensions not divisible by factor");
  require((int)mask.size() == height * width, "downsample_mask: size mismatch");
  const int ho = height / factor, wo = width / factor;
  std::vector<uint8_t> out((size_t)ho * wo);
  const int half = factor * factor;  // on iff 2*count >= factor^2
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      int count = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx)
          count += mask[(size_t)(y * factor + dy) * width + x * factor + dx];
      out[(size_t)y * wo + x] = (2 * count >= half) ? 1 : 0;
    }
  }
  return out;
}

inline std::vector<uint8_t> upsample_mask_nearest(
    const std::vector<uint8_t>& mask, int height, int width, int factor) {
  require(factor >= 1, "upsample_mask_nearest: bad factor");
  require((int)mask.size() == height * width, "upsample_mask_nearest: size mismatch");
  std::vector<uint8_t> out((size_t)height * factor * width * factor);
  for (int y = 0; y < height * factor; ++y)
    for (int x = 0; x < width * factor; ++x)
      out[(size_t)y * width * factor + x] =
          mask[(size_t)(y / factor) * width + x / factor];
  return out;
}

inline GroundTruthFrame downsample_ground_truth(const GroundTruthFrame& gt,
                                                int factor) {
  GroundTruthFrame out;
  out.height = gt.height / factor;
  out.width = gt.width / factor;
  out.classes = gt.classes;
  out.ids = gt.ids;
  for (const auto& m : gt.masks)
    out.masks.push_back(downsample_mask(m, gt.height, gt.width, factor));
  return out;
}

}  // namespace svis
