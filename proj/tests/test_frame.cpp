#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "svis/checkpoint.hpp"
#include "svis/frame.hpp"
#include "svis/gradcheck.hpp"

using namespace svis;

namespace {

ImageFrame random_frame(int h, int w, int c, uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> px((size_t)h * w * c);
  for (auto& v : px) v = dist(rng);
  return ImageFrame{Tensor({h, w, c}, std::move(px))};
}

}  // namespace

TEST_CASE("init_instance_code: determinism, shape, statistics") {
  InstanceCode a = init_instance_code(10, 16, 7);
  InstanceCode b = init_instance_code(10, 16, 7);
  CHECK(a.values.data() == b.values.data());
  CHECK(a.values.shape() == Shape{10, 16});
  CHECK(a.values.requires_grad());
  InstanceCode big = init_instance_code(100, 100, 3);
  double mean = 0;
  for (double v : big.values.data()) mean += v;
  mean /= big.values.numel();
  CHECK(std::abs(mean) < 0.01);
  CHECK_THROWS_AS(init_instance_code(0, 16, 1), ContractError);
}

TEST_CASE("encode_frame shapes and determinism") {
  ParamStore ps;
  Rng rng(3);
  EncoderParams enc = EncoderParams::create(ps, 3, 32, rng);
  ImageFrame frame = random_frame(32, 32, 3, 11);
  EncodedFrame out = encode_frame(frame, enc);
  CHECK(out.features.values.shape() == Shape{8, 8, 32});
  CHECK(out.features.stride == 4);
  CHECK(out.skip.values.shape() == Shape{16, 16, 32});
  CHECK(out.skip.stride == 2);

  // all-zero image: bias-only path stays finite
  ImageFrame zero{Tensor::zeros({32, 32, 3})};
  CHECK(encode_frame(zero, enc).features.values.all_finite());

  // bitwise determinism for fixed seed and image
  ParamStore ps2;
  Rng rng2(3);
  EncoderParams enc2 = EncoderParams::create(ps2, 3, 32, rng2);
  EncodedFrame again = encode_frame(random_frame(32, 32, 3, 11), enc2);
  CHECK(out.features.values.data() == again.features.values.data());
}

TEST_CASE("encode_frame rejects indivisible dimensions") {
  ParamStore ps;
  Rng rng(3);
  EncoderParams enc = EncoderParams::create(ps, 3, 8, rng);
  ImageFrame bad = random_frame(30, 32, 3, 1);
  CHECK_THROWS_WITH_AS(encode_frame(bad, enc),
                       doctest::Contains("multiples of 4"), ContractError);
}

TEST_CASE("positional encoding: additive identity, distinguishability, range") {
  const int L = 3, D = 4, HW = 6, n_ref = 2;
  PositionalTable table;
  table.slots = L;
  table.pixels = HW;
  table.n_ref_max = n_ref;
  table.code_pe = Tensor::zeros({(n_ref + 1) * L, D});
  table.pixel_pe = Tensor::zeros({(n_ref + 1) * HW, D});
  Rng rng(4);
  InstanceCode e{Tensor::gaussian({L, D}, 1.0, rng)};

  // zero table: output equals input
  InstanceCode same = add_positional_encoding(e, table, 1);
  CHECK(same.values.data() == e.values.data());

  // distinct slices distinguish offsets
  Rng rng2(5);
  table.code_pe = Tensor::gaussian({(n_ref + 1) * L, D}, 1.0, rng2);
  InstanceCode at0 = add_positional_encoding(e, table, 0);
  InstanceCode at1 = add_positional_encoding(e, table, 1);
  CHECK(at0.values.data() != at1.values.data());

  CHECK_THROWS_AS(add_positional_encoding(e, table, 3), ContractError);
}

TEST_CASE("gradient flows into the positional table") {
  const int L = 2, D = 3, HW = 4;
  PositionalTable table;
  table.slots = L;
  table.pixels = HW;
  table.n_ref_max = 1;
  Rng rng(9);
  table.code_pe = Tensor::gaussian({2 * L, D}, 0.5, rng, true);
  table.pixel_pe = Tensor::gaussian({2 * HW, D}, 0.5, rng, true);
  Tensor code = Tensor::gaussian({L, D}, 0.5, rng);
  double err = finite_diff_check(
      [&](const std::vector<Tensor>& in) {
        PositionalTable t = table;
        t.code_pe = in[0];
        InstanceCode out = add_positional_encoding(InstanceCode{code}, t, 1);
        return sum(mul(out.values, out.values));
      },
      {table.code_pe});
  CHECK(err < 1e-6);
}

TEST_CASE("checkpoint round-trip restores every tensor") {
  ParamStore ps;
  Rng rng(21);
  ps.create_gaussian("a.w", {3, 4}, 1.0, rng);
  ps.create_gaussian("b.conv", {3, 3, 2, 2}, 1.0, rng);
  ps.create_full("c.bias", {5}, 0.25);
  std::map<std::string, std::vector<double>> saved;
  for (auto& [name, t] : ps.all()) saved[name] = t.data();

  const std::string path = "/tmp/svis_test_ckpt.bin";
  save_checkpoint(path, ps);
  for (auto& [name, t] : ps.all())
    for (auto& v : t.mutable_data()) v = -99.0;
  load_checkpoint(path, ps);
  for (auto& [name, t] : ps.all()) CHECK(t.data() == saved[name]);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects shape-incompatible stores") {
  const std::string path = "/tmp/svis_test_ckpt2.bin";
  {
    ParamStore ps;
    Rng rng(1);
    ps.create_gaussian("w", {3, 4}, 1.0, rng);
    save_checkpoint(path, ps);
  }
  ParamStore other;
  Rng rng(1);
  other.create_gaussian("w", {4, 4}, 1.0, rng);
  CHECK_THROWS_AS(load_checkpoint(path, other), ContractError);
  std::remove(path.c_str());
}
