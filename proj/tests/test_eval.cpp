#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "svis/eval.hpp"

using namespace svis;

namespace {

std::vector<uint8_t> box_mask(int H, int W, int y0, int x0, int y1, int x1) {
  std::vector<uint8_t> m((size_t)H * W, 0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m[(size_t)y * W + x] = 1;
  return m;
}

Track make_track(int id, int label, double conf,
                 std::map<int, std::vector<uint8_t>> masks) {
  Track t;
  t.id = id;
  t.label = label;
  t.confidence = conf;
  t.frame_masks = std::move(masks);
  return t;
}

GtTrack make_gt(int id, int label,
                std::map<int, std::vector<uint8_t>> masks) {
  GtTrack t;
  t.id = id;
  t.label = label;
  t.frame_masks = std::move(masks);
  return t;
}

}  // namespace

TEST_CASE("track_iou: sums intersections and unions over frames") {
  auto a = box_mask(4, 4, 0, 0, 2, 2);  // area 4
  auto b = box_mask(4, 4, 0, 1, 2, 3);  // area 4, overlap 2 with a
  std::map<int, std::vector<uint8_t>> p = {{0, a}, {1, a}};
  std::map<int, std::vector<uint8_t>> g = {{0, a}, {1, b}};
  // frame 0: inter 4, union 4; frame 1: inter 2, union 6
  CHECK(track_iou(p, g) == doctest::Approx(6.0 / 10.0));
}

TEST_CASE("track_iou: absent frames count as empty masks") {
  auto a = box_mask(4, 4, 0, 0, 2, 2);
  std::map<int, std::vector<uint8_t>> p = {{0, a}};
  std::map<int, std::vector<uint8_t>> g = {{0, a}, {1, a}};
  CHECK(track_iou(p, g) == doctest::Approx(4.0 / 8.0));
  CHECK(track_iou({}, {}) == 0.0);
}

TEST_CASE("evaluate_ap: perfect predictions score 1.0 everywhere") {
  auto a = box_mask(8, 8, 0, 0, 4, 4);
  auto b = box_mask(8, 8, 4, 4, 8, 8);
  VideoGroundTruth gt{"v0", {make_gt(1, 1, {{0, a}, {1, a}}),
                             make_gt(2, 2, {{0, b}, {1, b}})}};
  VideoPredictions pr{"v0", {make_track(10, 1, 0.9, {{0, a}, {1, a}}),
                             make_track(11, 2, 0.8, {{0, b}, {1, b}})}};
  ApReport rep = evaluate_ap({pr}, {gt}, 3);
  CHECK(rep.ap == doctest::Approx(1.0));
  CHECK(rep.ap50 == doctest::Approx(1.0));
  CHECK(rep.ap75 == doctest::Approx(1.0));
  CHECK(rep.ar1 == doctest::Approx(1.0));
  CHECK(rep.ar10 == doctest::Approx(1.0));
}

TEST_CASE("evaluate_ap: no predictions scores 0") {
  auto a = box_mask(8, 8, 0, 0, 4, 4);
  VideoGroundTruth gt{"v0", {make_gt(1, 1, {{0, a}})}};
  VideoPredictions pr{"v0", {}};
  ApReport rep = evaluate_ap({pr}, {gt}, 3);
  CHECK(rep.ap == 0.0);
  CHECK(rep.ap50 == 0.0);
}

TEST_CASE("evaluate_ap: half-perfect detector hits the 51/101 plateau") {
  // two gt objects, one matched perfectly by the higher-confidence
  // detection, the other missed entirely: interpolated precision is 1 up to
  // recall 0.5 and 0 beyond, so AP50 = 51/101
  auto a = box_mask(8, 8, 0, 0, 4, 4);
  auto b = box_mask(8, 8, 4, 4, 8, 8);
  auto wrong = box_mask(8, 8, 0, 4, 2, 6);  // no overlap with b
  VideoGroundTruth gt{"v0", {make_gt(1, 1, {{0, a}}),
                             make_gt(2, 1, {{0, b}})}};
  VideoPredictions pr{"v0", {make_track(10, 1, 0.9, {{0, a}}),
                             make_track(11, 1, 0.8, {{0, wrong}})}};
  ApReport rep = evaluate_ap({pr}, {gt}, 3);
  CHECK(rep.ap50 == doctest::Approx(51.0 / 101.0));
}

TEST_CASE("evaluate_ap: class confusion gives no credit") {
  auto a = box_mask(8, 8, 0, 0, 4, 4);
  VideoGroundTruth gt{"v0", {make_gt(1, 1, {{0, a}})}};
  VideoPredictions pr{"v0", {make_track(10, 2, 0.9, {{0, a}})}};
  CHECK(evaluate_ap({pr}, {gt}, 3).ap50 == 0.0);
}

TEST_CASE("evaluate_ap: loose masks pass at 0.5 but fail at 0.75") {
  // IoU chosen between the two thresholds
  auto g = box_mask(10, 10, 0, 0, 6, 6);   // area 36
  auto p = box_mask(10, 10, 0, 0, 6, 4);   // area 24, inter 24, union 36
  // IoU = 24/36 = 0.667
  VideoGroundTruth gt{"v0", {make_gt(1, 1, {{0, g}})}};
  VideoPredictions pr{"v0", {make_track(10, 1, 0.9, {{0, p}})}};
  ApReport rep = evaluate_ap({pr}, {gt}, 3);
  CHECK(rep.ap50 == doctest::Approx(1.0));
  CHECK(rep.ap75 == 0.0);
}

TEST_CASE("evaluate_ap: duplicate detections of one object add a false positive") {
  auto a = box_mask(8, 8, 0, 0, 4, 4);
  VideoGroundTruth gt{"v0", {make_gt(1, 1, {{0, a}})}};
  VideoPredictions pr{"v0", {make_track(10, 1, 0.9, {{0, a}}),
                             make_track(11, 1, 0.8, {{0, a}})}};
  // first det matches (recall 1 at precision 1), second is FP
  ApReport rep = evaluate_ap({pr}, {gt}, 3);
  CHECK(rep.ap50 == doctest::Approx(1.0));
  CHECK(rep.ar1 == doctest::Approx(1.0));
}

TEST_CASE("count_id_switches: detects a single swap") {
  auto a = box_mask(8, 8, 0, 0, 4, 4);
  auto b = box_mask(8, 8, 4, 4, 8, 8);
  VideoGroundTruth gt{"v0", {make_gt(1, 1, {{0, a}, {1, a}, {2, a}}),
                             make_gt(2, 1, {{0, b}, {1, b}, {2, b}})}};
  // predictions swap identities at frame 2
  VideoPredictions swapped{
      "v0",
      {make_track(10, 1, 0.9, {{0, a}, {1, a}, {2, b}}),
       make_track(11, 1, 0.9, {{0, b}, {1, b}, {2, a}})}};
  CHECK(count_id_switches({swapped}, {gt}) == 2);  // one per gt track

  VideoPredictions clean{
      "v0",
      {make_track(10, 1, 0.9, {{0, a}, {1, a}, {2, a}}),
       make_track(11, 1, 0.9, {{0, b}, {1, b}, {2, b}})}};
  CHECK(count_id_switches({clean}, {gt}) == 0);
}

TEST_CASE("count_id_switches: gaps without a claimant are not switches") {
  auto a = box_mask(8, 8, 0, 0, 4, 4);
  VideoGroundTruth gt{"v0", {make_gt(1, 1, {{0, a}, {1, a}, {2, a}})}};
  VideoPredictions pr{"v0", {make_track(10, 1, 0.9, {{0, a}, {2, a}})}};
  CHECK(count_id_switches({pr}, {gt}) == 0);
}
