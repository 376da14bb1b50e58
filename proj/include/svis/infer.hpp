#pragma once

// Streaming inference over a clip: per-frame prediction, binarization,
// upsampling to the input resolution and identity assignment.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "svis/data.hpp"
#include "svis/eval.hpp"
#include "svis/image_io.hpp"
#include "svis/model.hpp"
#include "svis/tracker.hpp"

namespace svis {

struct InferenceResult {
  std::vector<std::vector<SlotObservation>> per_frame_obs;  // full resolution
  std::vector<std::vector<SlotOutcome>> per_frame_ids;
  std::vector<Track> tracks;
  int height = 0, width = 0;
};

inline std::vector<SlotObservation> frame_observations(
    const FramePrediction& pred, int out_height, int out_width) {
  const int L = pred.slots();
  const int C = pred.class_probs.dim(1) - 1;  // last column is "no object"
  require(out_height % pred.height == 0 && out_width % pred.width == 0 &&
              out_height / pred.height == out_width / pred.width,
          "frame_observations: output size must be an integer multiple");
  const int factor = out_height / pred.height;
  const int P = pred.height * pred.width;
  // Leftover slots tend to claim a few stray pixels each; anything holding
  // less than ~1% of the canvas is noise, not an object.
  const int min_pixels = std::max(1, P / 85);
  auto binary = binarize_masks(pred);
  std::vector<SlotObservation> obs(L);
  for (int i = 0; i < L; ++i) {
    int best = C;  // empty class
    double best_p = pred.class_probs.at2(i, C);
    for (int c = 0; c < C; ++c)
      if (pred.class_probs.at2(i, c) > best_p) {
        best_p = pred.class_probs.at2(i, c);
        best = c;
      }
    int pixels = 0;
    double mask_prob_sum = 0.0;
    for (int p = 0; p < P; ++p)
      if (binary[(size_t)i][(size_t)p]) {
        ++pixels;
        mask_prob_sum += pred.masks.at2(i, p);
      }
    obs[(size_t)i].active = (best != C) && pixels >= min_pixels;
    if (!obs[(size_t)i].active) continue;
    obs[(size_t)i].label = best + 1;  // classes are 1-based
    // Class certainty scaled by how decisively the mask claims its pixels;
    // confident classes on washed-out masks should not outrank real objects.
    obs[(size_t)i].confidence = best_p * (mask_prob_sum / pixels);
    obs[(size_t)i].mask = factor == 1
                              ? binary[(size_t)i]
                              : upsample_mask_nearest(binary[(size_t)i],
                                                      pred.height, pred.width,
                                                      factor);
  }
  return obs;
}

// Two slots occasionally split a single object between them, which yields two
// fragment tracks instead of one. Each 4-connected foreground region is given
// wholly to the slot holding the most of its pixels; slots left empty go
// inactive. Only valid when distinct objects never touch.
inline void merge_components(std::vector<SlotObservation>& obs, int height,
                             int width) {
  const int P = height * width;
  std::vector<int> owner(P, -1);
  for (int s = 0; s < (int)obs.size(); ++s)
    if (obs[(size_t)s].active)
      for (int p = 0; p < P; ++p)
        if (obs[(size_t)s].mask[(size_t)p]) owner[(size_t)p] = s;
  std::vector<int> comp(P, -1);
  std::vector<std::vector<int>> votes;  // component -> pixels held per slot
  for (int p = 0; p < P; ++p) {
    if (owner[(size_t)p] < 0 || comp[(size_t)p] >= 0) continue;
    const int c = (int)votes.size();
    votes.emplace_back(obs.size(), 0);
    std::vector<int> stack{p};
    comp[(size_t)p] = c;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      votes[(size_t)c][(size_t)owner[(size_t)u]]++;
      const int y = u / width, x = u % width;
      const int dy[4] = {1, -1, 0, 0}, dx[4] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= height || nx < 0 || nx >= width) continue;
        const int v = ny * width + nx;
        if (owner[(size_t)v] >= 0 && comp[(size_t)v] < 0) {
          comp[(size_t)v] = c;
          stack.push_back(v);
        }
      }
    }
  }
  std::vector<int> winner(votes.size());
  for (size_t c = 0; c < votes.size(); ++c)
    winner[c] = (int)(std::max_element(votes[c].begin(), votes[c].end()) -
                      votes[c].begin());
  for (int s = 0; s < (int)obs.size(); ++s) {
    auto& o = obs[(size_t)s];
    if (!o.active) continue;
    int pixels = 0;
    for (int p = 0; p < P; ++p) {
      const bool keep =
          owner[(size_t)p] >= 0 && winner[(size_t)comp[(size_t)p]] == s;
      o.mask[(size_t)p] = keep ? 1 : 0;
      pixels += keep;
    }
    if (pixels == 0) o.active = false;
  }
}

// Frames are processed strictly in order; nothing ever looks ahead.
inline InferenceResult run_inference(const VisModel& model,
                                     const std::vector<ImageFrame>& frames,
                                     const TrackerConfig& tracker_cfg,
                                     const std::string& dump_prefix = "") {
  InferenceResult res;
  require(!frames.empty(), "run_inference: empty clip");
  res.height = frames[0].height();
  res.width = frames[0].width();
  ReferenceBuffer buf = model.make_buffer();
  Tracker tracker(model.stack_cfg.slots, tracker_cfg);
  for (size_t t = 0; t < frames.size(); ++t) {
    std::string label =
        dump_prefix.empty() ? "" : dump_prefix + ".f" + std::to_string(t);
    StackOutput out = model.encode_step(frames[t], buf, label);
    FramePrediction pred = model.predict(out);
    auto obs = frame_observations(pred, res.height, res.width);
    if (tracker_cfg.component_cleanup)
      merge_components(obs, res.height, res.width);
    auto ids = tracker.associate(obs, (int)t);
    res.per_frame_obs.push_back(std::move(obs));
    res.per_frame_ids.push_back(std::move(ids));
  }
  res.tracks = assemble_tracks(res.per_frame_obs, res.per_frame_ids);
  // A detection that never persists beyond one frame cannot describe an
  // object track; drop it rather than exporting a guaranteed false positive.
  if (frames.size() > 1) {
    res.tracks.erase(std::remove_if(res.tracks.begin(), res.tracks.end(),
                                    [](const Track& t) {
                                      return t.frame_masks.size() < 2;
                                    }),
                     res.tracks.end());
  }
  return res;
}

inline void write_tracks(const std::filesystem::path& path,
                         const InferenceResult& res) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << tracks_to_json(res.tracks, res.height, res.width,
                      (int)res.per_frame_obs.size())
           .dump(1)
    << "\n";
}

// Per-frame indexed segmentation maps (pixel value = slot index + 1).
inline void write_segmentation_maps(const std::filesystem::path& dir,
                                    const InferenceResult& res) {
  std::filesystem::create_directories(dir);
  for (size_t t = 0; t < res.per_frame_obs.size(); ++t) {
    std::vector<uint8_t> img((size_t)res.height * res.width, 0);
    for (size_t i = 0; i < res.per_frame_obs[t].size(); ++i) {
      const auto& o = res.per_frame_obs[t][i];
      if (!o.active) continue;
      for (size_t p = 0; p < o.mask.size(); ++p)
        if (o.mask[p]) img[p] = (uint8_t)(i + 1);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%03zu.pgm", t);
    write_pnm((dir / name).string(), res.width, res.height, 1, img);
  }
}

inline GtTrack gt_track_from_clip(const Clip& clip, size_t instance) {
  GtTrack tr;
  tr.id = clip.annotations[0].ids[instance];
  tr.label = clip.annotations[0].classes[instance];
  for (size_t t = 0; t < clip.annotations.size(); ++t)
    tr.frame_masks[(int)t] = clip.annotations[t].masks[instance];
  return tr;
}

inline VideoGroundTruth ground_truth_of(const std::string& name,
                                        const Clip& clip) {
  VideoGroundTruth gt;
  gt.video = name;
  if (!clip.annotations.empty())
    for (size_t k = 0; k < clip.annotations[0].masks.size(); ++k)
      gt.tracks.push_back(gt_track_from_clip(clip, k));
  return gt;
}

}  // namespace svis
