#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "svis/gradcheck.hpp"
#include "svis/heads.hpp"

using namespace svis;

namespace {

FeatureMap random_features(int h, int w, int d, Rng& rng, int stride) {
  return FeatureMap{Tensor::gaussian({h, w, d}, 1.0, rng), stride};
}

}  // namespace

TEST_CASE("decode_features shapes and skip behaviour") {
  const int d = 8;
  ParamStore ps;
  Rng rng(1);
  DecoderParams p = DecoderParams::create(ps, d, d, 3, rng);
  FeatureMap f = random_features(8, 8, d, rng, 4);
  FeatureMap skip = random_features(16, 16, d, rng, 2);
  DecodedFeatures out = decode_features(f, skip, p);
  CHECK(out.values.shape() == Shape{16, 16, d});

  // zero skip: output depends only on the encoder path
  FeatureMap zero_skip{Tensor::zeros({16, 16, d}), 2};
  DecodedFeatures a = decode_features(f, zero_skip, p);
  FeatureMap f2 = f;
  DecodedFeatures b = decode_features(f2, zero_skip, p);
  CHECK(a.values.data() == b.values.data());

  FeatureMap bad_skip = random_features(12, 12, d, rng, 2);
  CHECK_THROWS_AS(decode_features(f, bad_skip, p), ContractError);

  // determinism across recreation with the same seed
  ParamStore ps2;
  Rng rng2(1);
  DecoderParams p2 = DecoderParams::create(ps2, d, d, 3, rng2);
  Rng rng3(1);
  (void)rng3;
  CHECK(p2.fuse1_w.data() == p.fuse1_w.data());
}

TEST_CASE("predict_classes: uniform under zero weights, simplex rows, equivariance") {
  const int d = 6, C = 3, L = 4;
  ParamStore ps;
  Rng rng(2);
  DecoderParams p = DecoderParams::create(ps, d, d, C, rng);
  InstanceCode e{Tensor::gaussian({L, d}, 1.0, rng)};

  SUBCASE("zero weights give uniform 1/(C+1)") {
    for (Tensor t : {p.cls_w1, p.cls_b1, p.cls_w2, p.cls_b2})
      for (auto& v : t.mutable_data()) v = 0.0;
    Tensor probs = predict_classes(e, p);
    for (long long i = 0; i < probs.numel(); ++i)
      CHECK(probs.at(i) == doctest::Approx(1.0 / (C + 1)));
  }
  SUBCASE("rows sum to one") {
    Tensor probs = predict_classes(e, p);
    for (int i = 0; i < L; ++i) {
      double s = 0;
      for (int c = 0; c <= C; ++c) s += probs.at2(i, c);
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  SUBCASE("permuting code slots permutes class rows identically") {
    Tensor probs = predict_classes(e, p);
    std::vector<int> perm = {2, 0, 3, 1};
    std::vector<double> permuted((size_t)L * d);
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < d; ++j)
        permuted[(size_t)i * d + j] = e.values.at2(perm[i], j);
    Tensor probs_p = predict_classes(InstanceCode{Tensor({L, d}, std::move(permuted))}, p);
    for (int i = 0; i < L; ++i)
      for (int c = 0; c <= C; ++c)
        CHECK(probs_p.at2(i, c) == doctest::Approx(probs.at2(perm[i], c)).epsilon(1e-12));
  }
}

TEST_CASE("predict_masks: symmetry, simplex, hand evaluation of the dynamic conv") {
  const int d = 2, L = 2;
  ParamStore ps;
  Rng rng(3);
  DecoderParams p = DecoderParams::create(ps, d, d, 3, rng);

  SUBCASE("identical filters for every slot give uniform 1/L") {
    // zero the filter MLP: theta rows all equal the bias
    for (Tensor t : {p.mask_w1, p.mask_b1, p.mask_w2})
      for (auto& v : t.mutable_data()) v = 0.0;
    p.mask_b2.mutable_data() = {0.7, -0.3};
    DecodedFeatures f_out{Tensor::gaussian({2, 2, d}, 1.0, rng), 2};
    InstanceCode e{Tensor::gaussian({L, d}, 1.0, rng)};
    Tensor m = predict_masks(e, f_out, p);
    for (long long i = 0; i < m.numel(); ++i)
      CHECK(m.at(i) == doctest::Approx(0.5));
  }

  SUBCASE("hand-evaluated L=2, 2x2 case") {
    // Make the filter MLP the identity: theta = relu(e).
    p.mask_w1.mutable_data() = {1, 0, 0, 1};
    p.mask_b1.mutable_data() = {0, 0};
    p.mask_w2.mutable_data() = {1, 0, 0, 1};
    p.mask_b2.mutable_data() = {0, 0};
    InstanceCode e{Tensor({L, d}, {1.0, 2.0, 3.0, 0.5})};  // nonnegative: relu = id
    DecodedFeatures f_out{
        Tensor({2, 2, d}, {0.2, -0.1, 1.0, 0.4, -0.5, 0.3, 0.0, 2.0}), 2};
    Tensor m = predict_masks(e, f_out, p);
    for (int pix = 0; pix < 4; ++pix) {
      const double f0 = f_out.values.at(2 * pix), f1 = f_out.values.at(2 * pix + 1);
      const double l0 = 1.0 * f0 + 2.0 * f1;
      const double l1 = 3.0 * f0 + 0.5 * f1;
      const double z = std::exp(l0) + std::exp(l1);
      CHECK(m.at2(0, pix) == doctest::Approx(std::exp(l0) / z).epsilon(1e-12));
      CHECK(m.at2(1, pix) == doctest::Approx(std::exp(l1) / z).epsilon(1e-12));
    }
  }

  SUBCASE("per-pixel slot distributions normalize; argmax masks are disjoint") {
    const int dd = 8, LL = 5;
    ParamStore ps2;
    Rng rng2(5);
    DecoderParams p2 = DecoderParams::create(ps2, dd, dd, 3, rng2);
    DecodedFeatures f_out{Tensor::gaussian({4, 4, dd}, 1.0, rng2), 2};
    InstanceCode e{Tensor::gaussian({LL, dd}, 1.0, rng2)};
    FramePrediction pred;
    pred.class_probs = predict_classes(e, p2);
    pred.masks = predict_masks(e, f_out, p2);
    pred.height = 4;
    pred.width = 4;
    for (int pix = 0; pix < 16; ++pix) {
      double s = 0;
      for (int i = 0; i < LL; ++i) s += pred.masks.at2(i, pix);
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
    auto bin = binarize_masks(pred);
    for (int pix = 0; pix < 16; ++pix) {
      int owners = 0;
      for (int i = 0; i < LL; ++i) owners += bin[i][pix];
      CHECK(owners <= 1);
    }
  }
}

TEST_CASE("head gradients pass finite differences") {
  const int d = 4, C = 3, L = 2;
  ParamStore ps;
  Rng rng(6);
  DecoderParams p = DecoderParams::create(ps, d, d, C, rng);
  Tensor code = Tensor::gaussian({L, d}, 1.0, rng, true);
  FeatureMap f{Tensor::gaussian({2, 2, d}, 1.0, rng, true), 4};
  FeatureMap skip{Tensor::gaussian({4, 4, d}, 1.0, rng), 2};

  auto f_cls = [&](const std::vector<Tensor>& in) {
    Tensor probs = predict_classes(InstanceCode{in[0]}, p);
    return sum(mul(probs, probs));
  };
  CHECK(finite_diff_check(f_cls, {code, p.cls_w1, p.cls_w2}) < 1e-4);

  auto f_mask = [&](const std::vector<Tensor>& in) {
    DecodedFeatures dec = decode_features(FeatureMap{in[1], 4}, skip, p);
    Tensor m = predict_masks(InstanceCode{in[0]}, dec, p);
    return sum(mul(m, m));
  };
  CHECK(finite_diff_check(f_mask, {code, f.values, p.mask_w2, p.fuse1_w}) < 1e-4);
}
