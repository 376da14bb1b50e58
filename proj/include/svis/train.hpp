#pragma once

// Training loop: short online windows sampled from the clip set, two-frame
// matching, one optimizer step per iteration.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "svis/data.hpp"
#include "svis/matching.hpp"
#include "svis/model.hpp"
#include "svis/optim.hpp"

namespace svis {

struct TrainSample {
  const Clip* clip = nullptr;
  int t = 0;  // target frame, >= 1 so a previous frame always exists
};

// Train-time augmentation: per-sample channel gains (instance colors carry
// no class information, and with a small clip set the class head will
// happily memorize them instead of reading silhouettes) and a horizontal
// flip, both applied consistently across the frames of the clip.
inline Clip augment_clip(const Clip& clip, Rng& rng) {
  std::uniform_real_distribution<double> gain_dist(0.6, 1.4);
  double gain[3] = {gain_dist(rng), gain_dist(rng), gain_dist(rng)};
  std::uniform_int_distribution<int> coin(0, 1);
  const bool flip = coin(rng) == 1;

  Clip out;
  out.frames.reserve(clip.frames.size());
  for (const auto& fr : clip.frames) {
    const int H = fr.pixels.dim(0), W = fr.pixels.dim(1), C = fr.pixels.dim(2);
    Tensor px = Tensor::zeros({H, W, C});
    const auto& src = fr.pixels.data();
    auto& dst = px.mutable_data();
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < C; ++c) {
          const int sx = flip ? W - 1 - x : x;
          double v = src[((size_t)y * W + sx) * C + c] * gain[c % 3];
          dst[((size_t)y * W + x) * C + c] = std::min(1.0, std::max(0.0, v));
        }
    out.frames.push_back(ImageFrame{px});
  }
  out.annotations = clip.annotations;
  if (flip) {
    for (auto& gt : out.annotations)
      for (auto& m : gt.masks) {
        std::vector<uint8_t> f(m.size());
        for (int y = 0; y < gt.height; ++y)
          for (int x = 0; x < gt.width; ++x)
            f[(size_t)y * gt.width + x] = m[(size_t)y * gt.width + (gt.width - 1 - x)];
        m = std::move(f);
      }
  }
  return out;
}

// Loss of one sample: encode frames t-n_ref..t online (fresh buffer), match
// ground truth against the target frame (optionally scored jointly with
// frame t-1), then apply the loss at frame t.
inline Tensor sample_loss(const VisModel& model, const Clip& clip, int t,
                          bool pairwise, const LossWeights& weights) {
  require(t >= 1 && t < (int)clip.frames.size(), "sample_loss: bad target frame");
  ReferenceBuffer buf = model.make_buffer();
  int start = std::max(0, t - model.stack_cfg.n_ref);
  FramePrediction pred_t, pred_prev;
  for (int u = start; u <= t; ++u) {
    StackOutput out = model.encode_step(clip.frames[(size_t)u], buf);
    if (u == t - 1 && pairwise) pred_prev = model.predict(out);
    if (u == t) pred_t = model.predict(out);
  }
  int factor = clip.annotations[(size_t)t].height / pred_t.height;
  GroundTruthFrame gt_t = downsample_ground_truth(clip.annotations[(size_t)t], factor);
  Tensor sim;
  if (pairwise) {
    GroundTruthFrame gt_prev =
        downsample_ground_truth(clip.annotations[(size_t)t - 1], factor);
    sim = similarity_matrix(pred_t, &pred_prev, gt_t, &gt_prev);
  } else {
    sim = similarity_matrix(pred_t, nullptr, gt_t, nullptr);
  }
  return total_loss(pred_t, gt_t, hungarian_assign(sim), weights);
}

struct TrainResult {
  std::vector<double> losses;  // one per iteration
  double final_loss = 0.0;
};

// sink(iteration, loss, lr) is called once per iteration; pass nullptr to
// skip logging.
using TrainLogSink = std::function<void(int, double, double)>;

inline TrainResult train_model(VisModel& model, const Dataset& data,
                               const RunConfig& cfg,
                               const TrainLogSink& sink = nullptr) {
  std::vector<TrainSample> pool;
  for (const auto& lc : data.clips)
    for (int t = 1; t < (int)lc.clip.frames.size(); ++t)
      pool.push_back({&lc.clip, t});
  require(!pool.empty(), "train_model: no clips with at least two frames");

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
  AdamConfig ac;
  ac.learning_rate = cfg.learning_rate;
  Adam opt(ac);
  LossWeights weights = cfg.loss_weights();

  TrainResult res;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    Tensor batch = Tensor::scalar(0.0);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const TrainSample& s = pool[pick(rng)];
      if (cfg.augment) {
        Clip aug = augment_clip(*s.clip, rng);
        batch = add(batch, sample_loss(model, aug, s.t,
                                       cfg.pairwise_matching, weights));
      } else {
        batch = add(batch, sample_loss(model, *s.clip, s.t,
                                       cfg.pairwise_matching, weights));
      }
    }
    Tensor loss = scale(batch, 1.0 / cfg.batch_size);
    backward(loss);
    double lr_scale = std::pow(1.0 - (double)iter / cfg.iterations, cfg.poly_power);
    opt.step(model.params, lr_scale);
    res.losses.push_back(loss.at(0));
    if (sink) sink(iter, loss.at(0), cfg.learning_rate * lr_scale);
  }
  res.final_loss = res.losses.empty() ? 0.0 : res.losses.back();
  return res;
}

// Convenience wrapper used by the command line: trains and writes
// metrics.jsonl, config.txt and model.ckpt into out_dir.
inline TrainResult run_training(VisModel& model, const Dataset& data,
                                const RunConfig& cfg,
                                const std::filesystem::path& out_dir,
                                bool verbose = false) {
  std::filesystem::create_directories(out_dir);
  std::ofstream metrics(out_dir / "metrics.jsonl");
  if (!metrics) throw IoError("cannot write metrics.jsonl in " + out_dir.string());
  TrainResult res = train_model(
      model, data, cfg, [&](int iter, double loss, double lr) {
        metrics << nlohmann::json({{"iter", iter}, {"loss", loss}, {"lr", lr}})
                << "\n";
        if (verbose && (iter % 50 == 0 || iter + 1 == cfg.iterations))
          std::printf("iter %5d  loss %.5f  lr %.2e\n", iter, loss, lr);
      });
  std::ofstream cfg_out(out_dir / "config.txt");
  cfg_out << serialize_config(cfg);
  model.save((out_dir / "model.ckpt").string());
  return res;
}

}  // namespace svis
