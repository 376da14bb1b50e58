#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "svis/data.hpp"
#include "svis/image_io.hpp"
#include "svis/rle.hpp"

using namespace svis;
namespace fs = std::filesystem;

TEST_CASE("rle: hand-checked encodings") {
  CHECK(rle_encode({0, 0, 1, 1, 1, 0}) == std::vector<int>{2, 3, 1});
  CHECK(rle_encode({1, 1, 0}) == std::vector<int>{0, 2, 1});  // leading zero run
  CHECK(rle_encode({0, 0, 0}) == std::vector<int>{3});
  CHECK(rle_encode({1}) == std::vector<int>{0, 1});
  CHECK(rle_encode({}) == std::vector<int>{});
}

TEST_CASE("rle: round trip on random masks") {
  Rng rng(7);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<uint8_t> mask(257);
    for (auto& v : mask) v = (uint8_t)bit(rng);
    CHECK(rle_decode(rle_encode(mask), mask.size()) == mask);
  }
}

TEST_CASE("rle: malformed input rejected") {
  CHECK_THROWS_AS(rle_encode({0, 2, 1}), ContractError);
  CHECK_THROWS_AS(rle_decode({3, 2}, 4), ContractError);  // size mismatch
  CHECK_THROWS_AS(rle_decode({-1, 5}, 4), ContractError);
}

TEST_CASE("pnm: round trip") {
  fs::path p = fs::temp_directory_path() / "svis_test_img.ppm";
  std::vector<uint8_t> px(5 * 3 * 3);
  for (size_t i = 0; i < px.size(); ++i) px[i] = (uint8_t)(i * 7 % 256);
  write_pnm(p.string(), 5, 3, 3, px);
  PnmImage img = read_pnm(p.string());
  CHECK(img.width == 5);
  CHECK(img.height == 3);
  CHECK(img.channels == 3);
  CHECK(img.pixels == px);
  fs::remove(p);
}

TEST_CASE("pnm: read errors") {
  CHECK_THROWS_AS(read_pnm("/nonexistent/file.ppm"), IoError);
}

TEST_CASE("clip generation: determinism and shape invariants") {
  ClipSpec spec;
  spec.seed = 11;
  Clip a = generate_clip(spec);
  Clip b = generate_clip(spec);
  REQUIRE(a.frames.size() == 8);
  REQUIRE(a.annotations.size() == 8);
  for (size_t t = 0; t < a.frames.size(); ++t) {
    CHECK(a.frames[t].pixels.node()->data == b.frames[t].pixels.node()->data);
    CHECK(a.annotations[t].masks == b.annotations[t].masks);
    CHECK(a.annotations[t].ids == b.annotations[t].ids);
  }
  size_t count = a.annotations[0].masks.size();
  CHECK(count >= 1);
  CHECK(count <= 3);
  for (const auto& gt : a.annotations) {
    CHECK(gt.masks.size() == count);  // ids persist even when fully occluded
    for (int c : gt.classes) {
      CHECK(c >= 1);
      CHECK(c <= 3);
    }
  }
}

TEST_CASE("clip generation: visible masks are disjoint") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    ClipSpec spec;
    spec.seed = seed;
    spec.max_instances = 3;
    Clip c = generate_clip(spec);
    for (const auto& gt : c.annotations) {
      std::vector<int> cover((size_t)gt.height * gt.width, 0);
      for (const auto& m : gt.masks)
        for (size_t p = 0; p < m.size(); ++p) cover[p] += m[p];
      for (int v : cover) CHECK(v <= 1);
    }
  }
}

TEST_CASE("clip generation: no-occlusion mode keeps full shapes separate") {
  ClipSpec spec;
  spec.seed = 3;
  spec.allow_occlusion = false;
  spec.max_instances = 2;
  Clip c = generate_clip(spec);
  // with no occlusion, every instance keeps a constant visible area
  for (size_t k = 0; k < c.annotations[0].masks.size(); ++k) {
    long long area0 = 0;
    for (auto v : c.annotations[0].masks[k]) area0 += v;
    CHECK(area0 > 0);
  }
}

TEST_CASE("clip generation: shapes stay within the canvas over many frames") {
  ClipSpec spec;
  spec.seed = 5;
  spec.frames = 40;
  spec.max_speed = 3.0;
  Clip c = generate_clip(spec);
  // areas never vanish entirely across all instances at once (bounce keeps
  // shapes inside, so the only area loss is mutual occlusion)
  for (const auto& gt : c.annotations) {
    long long total = 0;
    for (const auto& m : gt.masks)
      for (auto v : m) total += v;
    CHECK(total > 0);
  }
}

TEST_CASE("dataset: write then load round trip") {
  fs::path root = fs::temp_directory_path() / "svis_test_dataset";
  fs::remove_all(root);
  DatasetSpec spec;
  spec.num_clips = 3;
  spec.clip.seed = 21;
  spec.clip.frames = 4;
  spec.clip.height = 32;
  spec.clip.width = 32;
  write_dataset(root, spec);

  Dataset ds = load_dataset(root, "train");
  REQUIRE(ds.clips.size() == 3);
  CHECK(ds.height == 32);
  CHECK(ds.num_classes == 3);
  CHECK(load_dataset(root, "val").clips.empty());

  // annotations survive the round trip exactly; pixels within quantization
  ClipSpec cs = spec.clip;
  cs.seed = spec.clip.seed;  // clip 0 uses the base seed
  Clip direct = generate_clip(cs);
  const Clip& loaded = ds.clips[0].clip;
  REQUIRE(loaded.frames.size() == 4);
  for (size_t t = 0; t < 4; ++t) {
    CHECK(loaded.annotations[t].masks == direct.annotations[t].masks);
    CHECK(loaded.annotations[t].classes == direct.annotations[t].classes);
    CHECK(loaded.annotations[t].ids == direct.annotations[t].ids);
    const auto& a = loaded.frames[t].pixels.node()->data;
    const auto& b = direct.frames[t].pixels.node()->data;
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i)
      CHECK(std::abs(a[i] - b[i]) <= 0.5 / 255.0 + 1e-9);
  }
  fs::remove_all(root);
}

TEST_CASE("dataset: missing manifest raises IoError") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/dataset"), IoError);
}
