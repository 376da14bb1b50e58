#pragma once

// Track-level average precision over whole videos. A predicted track matches
// a ground-truth track through spatio-temporal IoU: per-frame intersections
// and unions are summed over the video before dividing, with a track treated
// as an empty mask in frames where it is absent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "svis/common.hpp"
#include "svis/tracker.hpp"

namespace svis {

struct GtTrack {
  int id = 0;
  int label = 0;
  std::map<int, std::vector<uint8_t>> frame_masks;
};

struct VideoPredictions {
  std::string video;
  std::vector<Track> tracks;
};

struct VideoGroundTruth {
  std::string video;
  std::vector<GtTrack> tracks;
};

inline double track_iou(const std::map<int, std::vector<uint8_t>>& a,
                        const std::map<int, std::vector<uint8_t>>& b) {
  long long inter = 0, uni = 0;
  auto count_ones = [](const std::vector<uint8_t>& m) {
    long long n = 0;
    for (uint8_t v : m) n += v;
    return n;
  };
  for (const auto& [t, ma] : a) {
    auto it = b.find(t);
    if (it == b.end()) {
      uni += count_ones(ma);
      continue;
    }
    require(ma.size() == it->second.size(), "track_iou: mask size mismatch");
    for (size_t p = 0; p < ma.size(); ++p) {
      inter += (ma[p] && it->second[p]);
      uni += (ma[p] || it->second[p]);
    }
  }
  for (const auto& [t, mb] : b)
    if (!a.count(t)) uni += count_ones(mb);
  return uni == 0 ? 0.0 : (double)inter / (double)uni;
}

struct ApReport {
  double ap = 0.0;    // mean over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ar1 = 0.0;   // recall at 1 / 10 detections per video, averaged
  double ar10 = 0.0;  // over classes and thresholds
};

namespace detail {

struct Det {
  double confidence;
  size_t video;
  size_t track;   // index within the video's prediction list
};

// 101-point interpolated AP from ordered TP/FP flags.
inline double interpolated_ap(const std::vector<uint8_t>& tp_flags, int npos) {
  if (npos == 0) return 0.0;
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (uint8_t f : tp_flags) {
    if (f) ++tp; else ++fp;
    precision.push_back((double)tp / (tp + fp));
    recall.push_back((double)tp / npos);
  }
  double sum = 0.0;
  for (int i = 0; i <= 100; ++i) {
    double r = i / 100.0;
    double best = 0.0;
    for (size_t k = 0; k < recall.size(); ++k)
      if (recall[k] >= r - 1e-12) best = std::max(best, precision[k]);
    sum += best;
  }
  return sum / 101.0;
}

}  // namespace detail

// Evaluates one class at one IoU threshold; max_dets < 0 means unlimited.
// Returns {ap, recall}.
inline std::pair<double, double> evaluate_class_threshold(
    const std::vector<VideoPredictions>& preds,
    const std::vector<VideoGroundTruth>& gts, int label, double iou_thr,
    int max_dets = -1) {
  require(preds.size() == gts.size(), "evaluate: video count mismatch");
  int npos = 0;
  for (const auto& g : gts)
    for (const auto& t : g.tracks)
      if (t.label == label) ++npos;
  if (npos == 0) return {0.0, 0.0};

  std::vector<detail::Det> dets;
  for (size_t v = 0; v < preds.size(); ++v) {
    std::vector<detail::Det> video_dets;
    for (size_t k = 0; k < preds[v].tracks.size(); ++k)
      if (preds[v].tracks[k].label == label)
        video_dets.push_back({preds[v].tracks[k].confidence, v, k});
    std::stable_sort(video_dets.begin(), video_dets.end(),
                     [](const auto& a, const auto& b) {
                       return a.confidence > b.confidence;
                     });
    if (max_dets >= 0 && (int)video_dets.size() > max_dets)
      video_dets.resize((size_t)max_dets);
    dets.insert(dets.end(), video_dets.begin(), video_dets.end());
  }
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) {
    return a.confidence > b.confidence;
  });

  std::vector<std::set<size_t>> gt_used(gts.size());
  std::vector<uint8_t> tp_flags;
  int tp_total = 0;
  for (const auto& d : dets) {
    const auto& video_gt = gts[d.video].tracks;
    double best_iou = 0.0;
    int best = -1;
    for (size_t g = 0; g < video_gt.size(); ++g) {
      if (video_gt[g].label != label || gt_used[d.video].count(g)) continue;
      double iou = track_iou(preds[d.video].tracks[d.track].frame_masks,
                             video_gt[g].frame_masks);
      if (iou > best_iou) { best_iou = iou; best = (int)g; }
    }
    if (best >= 0 && best_iou >= iou_thr) {
      gt_used[d.video].insert((size_t)best);
      tp_flags.push_back(1);
      ++tp_total;
    } else {
      tp_flags.push_back(0);
    }
  }
  return {detail::interpolated_ap(tp_flags, npos), (double)tp_total / npos};
}

inline ApReport evaluate_ap(const std::vector<VideoPredictions>& preds,
                            const std::vector<VideoGroundTruth>& gts,
                            int num_classes) {
  std::set<int> classes_present;
  for (const auto& g : gts)
    for (const auto& t : g.tracks) classes_present.insert(t.label);
  require(num_classes >= 1, "evaluate_ap: num_classes must be positive");

  ApReport rep;
  if (classes_present.empty()) return rep;
  int n_thr = 0;
  for (double thr = 0.50; thr < 0.951; thr += 0.05, ++n_thr) {
    double ap_c = 0.0, ar1_c = 0.0, ar10_c = 0.0;
    for (int c : classes_present) {
      auto [ap, rec] = evaluate_class_threshold(preds, gts, c, thr);
      (void)rec;
      ap_c += ap;
      ar1_c += evaluate_class_threshold(preds, gts, c, thr, 1).second;
      ar10_c += evaluate_class_threshold(preds, gts, c, thr, 10).second;
    }
    ap_c /= classes_present.size();
    ar1_c /= classes_present.size();
    ar10_c /= classes_present.size();
    rep.ap += ap_c;
    rep.ar1 += ar1_c;
    rep.ar10 += ar10_c;
    if (std::abs(thr - 0.50) < 1e-9) rep.ap50 = ap_c;
    if (std::abs(thr - 0.75) < 1e-9) rep.ap75 = ap_c;
  }
  rep.ap /= n_thr;
  rep.ar1 /= n_thr;
  rep.ar10 /= n_thr;
  return rep;
}

// Identity switches from the ground-truth perspective: for every gt track,
// follow which predicted track claims it frame by frame (per-frame mask IoU
// above 0.5, best match); each change between two claimed identities counts
// as one switch. Frames where nothing claims the object are skipped.
inline int count_id_switches(const std::vector<VideoPredictions>& preds,
                             const std::vector<VideoGroundTruth>& gts) {
  require(preds.size() == gts.size(), "count_id_switches: video mismatch");
  int switches = 0;
  for (size_t v = 0; v < preds.size(); ++v) {
    for (const auto& gt : gts[v].tracks) {
      int last_id = -1;
      for (const auto& [t, gmask] : gt.frame_masks) {
        bool nonempty = false;
        for (uint8_t x : gmask) if (x) { nonempty = true; break; }
        if (!nonempty) continue;
        double best_iou = 0.5;
        int best_id = -1;
        for (const auto& pt : preds[v].tracks) {
          auto it = pt.frame_masks.find(t);
          if (it == pt.frame_masks.end()) continue;
          double iou = mask_iou(gmask, it->second);
          if (iou > best_iou) { best_iou = iou; best_id = pt.id; }
        }
        if (best_id < 0) continue;
        if (last_id >= 0 && best_id != last_id) ++switches;
        last_id = best_id;
      }
    }
  }
  return switches;
}

}  // namespace svis
