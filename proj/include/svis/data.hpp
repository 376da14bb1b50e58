#pragma once

// Synthetic moving-shapes clips and on-disk dataset layout.
//
// Each clip lives in its own directory:
//   frame_000.ppm ... frame_TTT.ppm   (binary P6)
//   annotations.json                  (per-frame instances with RLE masks)
// The dataset root holds manifest.json listing clips and the split.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "svis/common.hpp"
#include "svis/frame.hpp"
#include "svis/image_io.hpp"
#include "svis/matching.hpp"
#include "svis/rle.hpp"
#include "svis/tensor.hpp"

namespace svis {

enum class ShapeKind { Rect = 0, Disk = 1, Triangle = 2 };

inline int shape_class(ShapeKind k) { return (int)k + 1; }  // classes 1..3

struct ShapeState {
  ShapeKind kind;
  int id;                    // stable per-clip instance id
  double cx, cy;             // center, pixels
  double vx, vy;             // velocity, pixels/frame
  double ext;                // half-extent, pixels
  double r, g, b;            // fill color in [0,1]
};

struct ClipSpec {
  int frames = 8;
  int height = 64;
  int width = 64;
  int min_instances = 1;
  int max_instances = 3;
  double min_speed = 0.5;
  double max_speed = 2.0;
  double min_ext_frac = 0.10;   // half-extent as fraction of min(H,W)
  double max_ext_frac = 0.17;
  bool allow_occlusion = true;  // if false, reject overlapping layouts
  double noise_std = 0.02;
  uint64_t seed = 0;
};

struct Clip {
  std::vector<ImageFrame> frames;
  std::vector<GroundTruthFrame> annotations;  // visible-pixel masks
};

namespace detail {

inline bool shape_covers(const ShapeState& s, int x, int y) {
  double dx = x + 0.5 - s.cx, dy = y + 0.5 - s.cy;
  switch (s.kind) {
    case ShapeKind::Rect:
      return std::abs(dx) <= s.ext && std::abs(dy) <= s.ext;
    case ShapeKind::Disk:
      return dx * dx + dy * dy <= s.ext * s.ext;
    case ShapeKind::Triangle: {
      // upward isoceles triangle inscribed in the shape's bounding square
      if (dy < -s.ext || dy > s.ext) return false;
      double half_width = (dy + s.ext) * 0.5;  // 0 at apex, ext at base
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

inline void bounce(ShapeState& s, int height, int width) {
  s.cx += s.vx;
  s.cy += s.vy;
  if (s.cx - s.ext < 0) { s.cx = 2 * s.ext - s.cx; s.vx = -s.vx; }
  if (s.cx + s.ext > width) { s.cx = 2 * (width - s.ext) - s.cx; s.vx = -s.vx; }
  if (s.cy - s.ext < 0) { s.cy = 2 * s.ext - s.cy; s.vy = -s.vy; }
  if (s.cy + s.ext > height) { s.cy = 2 * (height - s.ext) - s.cy; s.vy = -s.vy; }
}

// Full (occlusion-unaware) mask of one shape at its current state.
inline std::vector<uint8_t> rasterize(const ShapeState& s, int height, int width) {
  std::vector<uint8_t> m((size_t)height * width, 0);
  int x0 = std::max(0, (int)std::floor(s.cx - s.ext - 1));
  int x1 = std::min(width - 1, (int)std::ceil(s.cx + s.ext + 1));
  int y0 = std::max(0, (int)std::floor(s.cy - s.ext - 1));
  int y1 = std::min(height - 1, (int)std::ceil(s.cy + s.ext + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (shape_covers(s, x, y)) m[(size_t)y * width + x] = 1;
  return m;
}

inline bool any_overlap(const std::vector<std::vector<uint8_t>>& masks) {
  if (masks.empty()) return false;
  size_t n = masks[0].size();
  for (size_t p = 0; p < n; ++p) {
    int cover = 0;
    for (const auto& m : masks) cover += m[p];
    if (cover > 1) return true;
  }
  return false;
}

}  // namespace detail

inline Clip generate_clip(const ClipSpec& spec) {
  require(spec.frames >= 1 && spec.height >= 8 && spec.width >= 8,
          "generate_clip: degenerate spec");
  require(spec.min_instances >= 0 && spec.max_instances >= spec.min_instances,
          "generate_clip: bad instance range");
  Rng rng(spec.seed);
  std::uniform_int_distribution<int> count_dist(spec.min_instances,
                                                spec.max_instances);
  std::uniform_int_distribution<int> kind_dist(0, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  int count = count_dist(rng);
  double base = std::min(spec.height, spec.width);

  std::vector<ShapeState> shapes;
  for (int attempt = 0; attempt < 200; ++attempt) {
    shapes.clear();
    for (int i = 0; i < count; ++i) {
      ShapeState s;
      s.kind = (ShapeKind)kind_dist(rng);
      s.id = i + 1;
      s.ext = base * (spec.min_ext_frac +
                      unit(rng) * (spec.max_ext_frac - spec.min_ext_frac));
      s.cx = s.ext + unit(rng) * (spec.width - 2 * s.ext);
      s.cy = s.ext + unit(rng) * (spec.height - 2 * s.ext);
      double speed = spec.min_speed + unit(rng) * (spec.max_speed - spec.min_speed);
      double angle = unit(rng) * 2.0 * 3.14159265358979323846;
      s.vx = speed * std::cos(angle);
      s.vy = speed * std::sin(angle);
      s.r = 0.35 + 0.65 * unit(rng);
      s.g = 0.35 + 0.65 * unit(rng);
      s.b = 0.35 + 0.65 * unit(rng);
      shapes.push_back(s);
    }
    if (spec.allow_occlusion) break;
    // simulate the whole clip; accept only if no two shapes ever overlap
    bool clean = true;
    std::vector<ShapeState> sim = shapes;
    for (int t = 0; t < spec.frames && clean; ++t) {
      std::vector<std::vector<uint8_t>> masks;
      for (const auto& s : sim)
        masks.push_back(detail::rasterize(s, spec.height, spec.width));
      if (detail::any_overlap(masks)) clean = false;
      for (auto& s : sim) detail::bounce(s, spec.height, spec.width);
    }
    if (clean) break;
    if (attempt == 199)
      throw ContractError("generate_clip: cannot place non-overlapping shapes");
  }

  std::normal_distribution<double> noise(0.0, spec.noise_std);
  Clip clip;
  for (int t = 0; t < spec.frames; ++t) {
    // painter's order: later instances drawn on top of earlier ones
    std::vector<std::vector<uint8_t>> full;
    for (const auto& s : shapes)
      full.push_back(detail::rasterize(s, spec.height, spec.width));

    GroundTruthFrame gt;
    gt.height = spec.height;
    gt.width = spec.width;
    std::vector<std::vector<uint8_t>> visible(shapes.size());
    for (size_t i = 0; i < shapes.size(); ++i)
      visible[i].assign((size_t)spec.height * spec.width, 0);
    Tensor img = Tensor::zeros({spec.height, spec.width, 3});
    auto& px = img.node()->data;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        size_t p = (size_t)y * spec.width + x;
        int top = -1;
        for (int i = (int)shapes.size() - 1; i >= 0; --i)
          if (full[(size_t)i][p]) { top = i; break; }
        double r = 0.08, g = 0.08, b = 0.08;
        if (top >= 0) {
          visible[(size_t)top][p] = 1;
          r = shapes[(size_t)top].r;
          g = shapes[(size_t)top].g;
          b = shapes[(size_t)top].b;
        }
        px[p * 3 + 0] = std::clamp(r + noise(rng), 0.0, 1.0);
        px[p * 3 + 1] = std::clamp(g + noise(rng), 0.0, 1.0);
        px[p * 3 + 2] = std::clamp(b + noise(rng), 0.0, 1.0);
      }
    }
    for (size_t i = 0; i < shapes.size(); ++i) {
      gt.masks.push_back(visible[i]);
      gt.classes.push_back(shape_class(shapes[i].kind));
      gt.ids.push_back(shapes[i].id);
    }
    clip.frames.push_back(ImageFrame{img});
    clip.annotations.push_back(std::move(gt));
    for (auto& s : shapes) detail::bounce(s, spec.height, spec.width);
  }
  return clip;
}

// --- on-disk dataset ---

namespace fs = std::filesystem;

inline std::string frame_file_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%03d.ppm", t);
  return buf;
}

inline void write_clip(const fs::path& dir, const Clip& clip) {
  fs::create_directories(dir);
  int H = 0, W = 0;
  nlohmann::json frames_json = nlohmann::json::array();
  for (size_t t = 0; t < clip.frames.size(); ++t) {
    const Tensor& img = clip.frames[t].pixels;
    H = img.node()->shape[0];
    W = img.node()->shape[1];
    std::vector<uint8_t> bytes((size_t)H * W * 3);
    for (size_t i = 0; i < bytes.size(); ++i)
      bytes[i] = (uint8_t)std::lround(
          std::clamp(img.node()->data[i], 0.0, 1.0) * 255.0);
    write_pnm((dir / frame_file_name((int)t)).string(), W, H, 3, bytes);

    const GroundTruthFrame& gt = clip.annotations[t];
    nlohmann::json insts = nlohmann::json::array();
    for (size_t k = 0; k < gt.masks.size(); ++k) {
      insts.push_back({{"id", gt.ids[k]},
                       {"class", gt.classes[k]},
                       {"rle", rle_encode(gt.masks[k])}});
    }
    frames_json.push_back({{"file", frame_file_name((int)t)},
                           {"instances", insts}});
  }
  nlohmann::json ann = {{"height", H}, {"width", W}, {"frames", frames_json}};
  std::ofstream f(dir / "annotations.json");
  if (!f) throw IoError("cannot write annotations.json in " + dir.string());
  f << ann.dump(1) << "\n";
}

struct LoadedClip {
  std::string name;
  Clip clip;
};

inline Clip read_clip(const fs::path& dir) {
  std::ifstream f(dir / "annotations.json");
  if (!f) throw IoError("cannot read annotations.json in " + dir.string());
  nlohmann::json ann;
  f >> ann;
  int H = ann.at("height").get<int>();
  int W = ann.at("width").get<int>();
  Clip clip;
  for (const auto& fr : ann.at("frames")) {
    PnmImage img = read_pnm((dir / fr.at("file").get<std::string>()).string());
    require(img.width == W && img.height == H && img.channels == 3,
            "read_clip: frame dimensions disagree with annotations");
    Tensor px = Tensor::zeros({H, W, 3});
    for (size_t i = 0; i < img.pixels.size(); ++i)
      px.node()->data[i] = img.pixels[i] / 255.0;
    clip.frames.push_back(ImageFrame{px});

    GroundTruthFrame gt;
    gt.height = H;
    gt.width = W;
    for (const auto& inst : fr.at("instances")) {
      gt.ids.push_back(inst.at("id").get<int>());
      gt.classes.push_back(inst.at("class").get<int>());
      gt.masks.push_back(rle_decode(inst.at("rle").get<std::vector<int>>(),
                                    (size_t)H * W));
    }
    clip.annotations.push_back(std::move(gt));
  }
  return clip;
}

struct DatasetSpec {
  int num_clips = 32;
  std::string split = "train";  // all clips share one split label here
  ClipSpec clip;                // clip.seed is the base seed
};

inline void write_dataset(const fs::path& root, const DatasetSpec& spec) {
  fs::create_directories(root);
  nlohmann::json clips = nlohmann::json::array();
  for (int i = 0; i < spec.num_clips; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03d", i);
    ClipSpec cs = spec.clip;
    cs.seed = spec.clip.seed + (uint64_t)i * 1000003ull;
    write_clip(root / name, generate_clip(cs));
    clips.push_back({{"name", name}, {"split", spec.split}});
  }
  nlohmann::json manifest = {{"clips", clips},
                             {"height", spec.clip.height},
                             {"width", spec.clip.width},
                             {"num_classes", 3}};
  std::ofstream f(root / "manifest.json");
  if (!f) throw IoError("cannot write manifest.json in " + root.string());
  f << manifest.dump(1) << "\n";
}

struct Dataset {
  int height = 0, width = 0, num_classes = 0;
  std::vector<LoadedClip> clips;
};

inline Dataset load_dataset(const fs::path& root, const std::string& split = "") {
  std::ifstream f(root / "manifest.json");
  if (!f) throw IoError("cannot read manifest.json in " + root.string());
  nlohmann::json manifest;
  f >> manifest;
  Dataset ds;
  ds.height = manifest.at("height").get<int>();
  ds.width = manifest.at("width").get<int>();
  ds.num_classes = manifest.at("num_classes").get<int>();
  for (const auto& c : manifest.at("clips")) {
    if (!split.empty() && c.at("split").get<std::string>() != split) continue;
    std::string name = c.at("name").get<std::string>();
    ds.clips.push_back({name, read_clip(root / name)});
  }
  return ds;
}

}  // namespace svis
