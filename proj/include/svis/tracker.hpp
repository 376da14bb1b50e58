#pragma once

// Slot-based identity tracking. Each decoder slot tends to keep following
// the same object, so a slot's track id persists across frames; a mask-IoU
// override re-links identities when objects migrate between slots.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "svis/common.hpp"
#include "svis/rle.hpp"

namespace svis {

inline double mask_iou(const std::vector<uint8_t>& a,
                       const std::vector<uint8_t>& b) {
  require(a.size() == b.size(), "mask_iou: size mismatch");
  long long inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  return uni == 0 ? 0.0 : (double)inter / (double)uni;
}

struct SlotObservation {
  bool active = false;       // non-background class AND non-empty mask
  int label = 0;             // argmax class (1-based), valid when active
  double confidence = 0.0;   // probability of that class
  std::vector<uint8_t> mask; // binary, full output resolution
};

struct TrackerConfig {
  double iou_threshold = 0.5;   // override link threshold (strict >)
  int gone_patience = 5;        // frames a vacant track id stays claimable
  bool iou_override = true;
  // Reassign each connected foreground region to the single slot that owns
  // most of it. Helps when two slots split one object, but merges distinct
  // objects whose masks touch, so keep it off for data with occlusion.
  bool component_cleanup = false;
};

struct SlotOutcome {
  bool active = false;
  int track_id = -1;
};

class Tracker {
 public:
  explicit Tracker(int slots, TrackerConfig cfg = {})
      : slots_(slots), cfg_(cfg), slot_track_(slots, -1),
        track_last_seen_() {
    require(slots > 0, "Tracker: slots must be positive");
  }

  // Assign track ids to the active slots of one frame. Frames must be fed
  // in order, one call per frame.
  std::vector<SlotOutcome> associate(const std::vector<SlotObservation>& obs,
                                     int frame_index) {
    require((int)obs.size() == slots_, "Tracker: wrong slot count");
    std::vector<SlotOutcome> out(slots_);
    std::vector<int> assigned(slots_, -1);
    std::set<int> used_ids;

    // 1) IoU override: greedily link current active slots to last frame's
    //    active slots by descending mask overlap; a link inherits the
    //    previous slot's track id regardless of slot index.
    if (cfg_.iou_override && !prev_masks_.empty()) {
      struct Cand { double iou; int cur, prev; };
      std::vector<Cand> cands;
      for (int i = 0; i < slots_; ++i) {
        if (!obs[(size_t)i].active) continue;
        for (const auto& [j, pmask] : prev_masks_) {
          double iou = mask_iou(obs[(size_t)i].mask, pmask);
          if (iou > cfg_.iou_threshold) cands.push_back({iou, i, j});
        }
      }
      std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.cur != b.cur) return a.cur < b.cur;
        return a.prev < b.prev;
      });
      std::set<int> prev_used;
      for (const auto& c : cands) {
        if (assigned[(size_t)c.cur] != -1 || prev_used.count(c.prev)) continue;
        int id = prev_slot_track_.at(c.prev);
        if (id < 0 || used_ids.count(id)) continue;
        assigned[(size_t)c.cur] = id;
        used_ids.insert(id);
        prev_used.insert(c.prev);
      }
    }

    // 2) a still-unassigned active slot reclaims its own track id unless the
    //    id was taken this frame or has been gone longer than the patience
    for (int i = 0; i < slots_; ++i) {
      if (!obs[(size_t)i].active || assigned[(size_t)i] != -1) continue;
      int id = slot_track_[(size_t)i];
      if (id < 0 || used_ids.count(id)) continue;
      int missed_frames = frame_index - track_last_seen_.at(id) - 1;
      if (missed_frames <= cfg_.gone_patience) {
        assigned[(size_t)i] = id;
        used_ids.insert(id);
      }
    }

    // 3) fresh ids for anything left
    for (int i = 0; i < slots_; ++i) {
      if (!obs[(size_t)i].active || assigned[(size_t)i] != -1) continue;
      assigned[(size_t)i] = next_id_++;
      used_ids.insert(assigned[(size_t)i]);
    }

    // update state
    prev_masks_.clear();
    prev_slot_track_.clear();
    for (int i = 0; i < slots_; ++i) {
      if (!obs[(size_t)i].active) continue;
      int id = assigned[(size_t)i];
      // a stolen id leaves its former owner slot without a claim
      for (int j = 0; j < slots_; ++j)
        if (j != i && slot_track_[(size_t)j] == id) slot_track_[(size_t)j] = -1;
      slot_track_[(size_t)i] = id;
      track_last_seen_[id] = frame_index;
      prev_masks_[i] = obs[(size_t)i].mask;
      prev_slot_track_[i] = id;
      out[(size_t)i] = {true, id};
    }
    return out;
  }

 private:
  int slots_;
  TrackerConfig cfg_;
  std::vector<int> slot_track_;            // slot -> last owned track id
  std::map<int, int> track_last_seen_;     // track id -> last active frame
  std::map<int, std::vector<uint8_t>> prev_masks_;  // last frame's active slots
  std::map<int, int> prev_slot_track_;
  int next_id_ = 1;
};

// Assembled per-video output track.
struct Track {
  int id = 0;
  int label = 0;                            // majority vote over frames
  double confidence = 0.0;                  // mean over active frames
  std::map<int, std::vector<uint8_t>> frame_masks;  // frame index -> mask
};

inline std::vector<Track> assemble_tracks(
    const std::vector<std::vector<SlotObservation>>& per_frame_obs,
    const std::vector<std::vector<SlotOutcome>>& per_frame_ids) {
  require(per_frame_obs.size() == per_frame_ids.size(),
          "assemble_tracks: frame count mismatch");
  std::map<int, Track> tracks;
  std::map<int, std::map<int, int>> label_votes;
  std::map<int, double> conf_sum;
  std::map<int, int> conf_n;
  for (size_t t = 0; t < per_frame_obs.size(); ++t) {
    const auto& obs = per_frame_obs[t];
    const auto& ids = per_frame_ids[t];
    require(obs.size() == ids.size(), "assemble_tracks: slot count mismatch");
    for (size_t i = 0; i < obs.size(); ++i) {
      if (!ids[i].active) continue;
      int id = ids[i].track_id;
      tracks[id].id = id;
      tracks[id].frame_masks[(int)t] = obs[i].mask;
      label_votes[id][obs[i].label]++;
      conf_sum[id] += obs[i].confidence;
      conf_n[id]++;
    }
  }
  std::vector<Track> out;
  for (auto& [id, tr] : tracks) {
    int best_label = 0, best_votes = -1;
    for (auto [label, votes] : label_votes[id])
      if (votes > best_votes) { best_votes = votes; best_label = label; }
    tr.label = best_label;
    tr.confidence = conf_sum[id] / conf_n[id];
    out.push_back(tr);
  }
  return out;
}

inline nlohmann::json tracks_to_json(const std::vector<Track>& tracks,
                                     int height, int width, int num_frames) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& tr : tracks) {
    nlohmann::json frames = nlohmann::json::object();
    for (const auto& [t, mask] : tr.frame_masks)
      frames[std::to_string(t)] = rle_encode(mask);
    arr.push_back({{"id", tr.id},
                   {"class", tr.label},
                   {"confidence", tr.confidence},
                   {"frames", frames}});
  }
  return {{"height", height},
          {"width", width},
          {"num_frames", num_frames},
          {"tracks", arr}};
}

inline std::vector<Track> tracks_from_json(const nlohmann::json& j) {
  int H = j.at("height").get<int>();
  int W = j.at("width").get<int>();
  std::vector<Track> out;
  for (const auto& tj : j.at("tracks")) {
    Track tr;
    tr.id = tj.at("id").get<int>();
    tr.label = tj.at("class").get<int>();
    tr.confidence = tj.at("confidence").get<double>();
    for (const auto& [key, rle] : tj.at("frames").items())
      tr.frame_masks[std::stoi(key)] =
          rle_decode(rle.get<std::vector<int>>(), (size_t)H * W);
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace svis
