#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "svis/attention.hpp"
#include "svis/gradcheck.hpp"

using namespace svis;

namespace {

// Small single-head configuration matching the bare equations.
StackConfig oracle_config(int L = 2, int d = 4, int fh = 8, int fw = 8) {
  StackConfig cfg;
  cfg.slots = L;
  cfg.d_model = d;
  cfg.num_intra = 1;
  cfg.num_alternating = 1;
  cfg.n_ref = 2;
  cfg.frame_height = fh;
  cfg.frame_width = fw;
  cfg.attn.head_count = 1;
  cfg.attn.use_layer_norm = false;
  cfg.attn.use_ffn = false;
  cfg.attn.use_pixel_self_attention = false;
  return cfg;
}

Tensor random_tensor(const Shape& sh, Rng& rng, double scl = 1.0, bool rg = false) {
  Tensor t = Tensor::gaussian(sh, scl, rng, rg);
  return t;
}

InstanceCode random_code(int L, int d, Rng& rng) {
  return InstanceCode{random_tensor({L, d}, rng)};
}

FeatureMap random_features(int h, int w, int d, Rng& rng) {
  return FeatureMap{random_tensor({h, w, d}, rng), 4};
}

ImageFrame random_frame(int h, int w, Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> px((size_t)h * w * 3);
  for (auto& v : px) v = dist(rng);
  return ImageFrame{Tensor({h, w, 3}, std::move(px))};
}

void zero_out(Tensor t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

}  // namespace

TEST_CASE("intra ops: zero value projections give the identity map") {
  StackConfig cfg = oracle_config();
  cfg.attn.head_count = 2;
  cfg.attn.use_layer_norm = true;  // LN feeds attention only; residual is raw
  ParamStore ps;
  Rng rng(1);
  IntraLayerParams p = IntraLayerParams::create(ps, "t", cfg.d_model, rng);
  zero_out(p.c_wv_e);
  zero_out(p.c_wv_f);
  zero_out(p.p_wv);
  InstanceCode e = random_code(cfg.slots, cfg.d_model, rng);
  FeatureMap f = random_features(2, 2, cfg.d_model, rng);
  CHECK(intra_c2c_c2p(e, f, p, cfg.attn).values.data() == e.values.data());
  CHECK(intra_p2c(e, f, p, cfg.attn).values.data() == f.values.data());
}

TEST_CASE("intra attention weights form a simplex (L=1, H=W=1)") {
  StackConfig cfg = oracle_config(1, 4, 4, 4);
  ParamStore ps;
  Rng rng(2);
  IntraLayerParams p = IntraLayerParams::create(ps, "t", cfg.d_model, rng);
  InstanceCode e = random_code(1, 4, rng);
  FeatureMap f = random_features(1, 1, 4, rng);
  // With V = output basis, the attention output reproduces the weights:
  // here we check normalization indirectly through the invariant counter.
  auto& stats = invariant_stats();
  stats.enabled = true;
  stats.reset();
  intra_c2c_c2p(e, f, p, cfg.attn);
  stats.enabled = false;
  CHECK(stats.rows_checked > 0);
  CHECK(stats.violations == 0);
}

TEST_CASE("intra c2c&c2p and p2c match the explicit-loop oracle") {
  Rng rng(33);
  for (int trial = 0; trial < 25; ++trial) {
    StackConfig cfg = oracle_config(2, 4);
    ParamStore ps;
    IntraLayerParams p = IntraLayerParams::create(ps, "t", cfg.d_model, rng);
    InstanceCode e = random_code(cfg.slots, cfg.d_model, rng);
    FeatureMap f = random_features(2, 2, cfg.d_model, rng);
    oracle::Mat em = oracle::to_mat(e.values);
    oracle::Mat fm = oracle::to_mat(f.tokens());
    CHECK(oracle::max_abs_diff(oracle::intra_c2c_c2p(em, fm, p),
                               intra_c2c_c2p(e, f, p, cfg.attn).values) < 1e-10);
    CHECK(oracle::max_abs_diff(oracle::intra_p2c(em, fm, p),
                               intra_p2c(e, f, p, cfg.attn).tokens()) < 1e-10);
  }
}

TEST_CASE("inter ops match the explicit-loop oracle with 2 references") {
  Rng rng(44);
  for (int trial = 0; trial < 25; ++trial) {
    StackConfig cfg = oracle_config(2, 4);
    const int h = 2, w = 2, hw = h * w;
    ParamStore ps;
    InterLayerParams p = InterLayerParams::create(ps, "t", cfg.d_model, rng);
    PositionalTable pe;
    pe.slots = cfg.slots;
    pe.pixels = hw;
    pe.n_ref_max = 2;
    pe.code_pe = random_tensor({3 * cfg.slots, cfg.d_model}, rng, 0.5);
    pe.pixel_pe = random_tensor({3 * hw, cfg.d_model}, rng, 0.5);
    ReferenceBuffer buf(2);
    buf.push(random_code(cfg.slots, cfg.d_model, rng),
             random_features(h, w, cfg.d_model, rng));
    buf.push(random_code(cfg.slots, cfg.d_model, rng),
             random_features(h, w, cfg.d_model, rng));
    InstanceCode e_tgt = random_code(cfg.slots, cfg.d_model, rng);
    FeatureMap f_tgt = random_features(h, w, cfg.d_model, rng);

    CHECK(oracle::max_abs_diff(
              oracle::inter_c2c_c2p(oracle::to_mat(e_tgt.values), buf, pe, p),
              inter_c2c_c2p(e_tgt, buf, pe, p, cfg.attn).values) < 1e-10);
    CHECK(oracle::max_abs_diff(
              oracle::inter_p2c(oracle::to_mat(f_tgt.tokens()), buf, pe, p),
              inter_p2c(f_tgt, buf, pe, p, cfg.attn).tokens()) < 1e-10);
  }
}

TEST_CASE("inter ops: zero value projection is identity; empty buffer rejected") {
  StackConfig cfg = oracle_config();
  const int h = 2, w = 2;
  ParamStore ps;
  Rng rng(5);
  InterLayerParams p = InterLayerParams::create(ps, "t", cfg.d_model, rng);
  PositionalTable pe;
  pe.slots = cfg.slots;
  pe.pixels = h * w;
  pe.n_ref_max = 2;
  pe.code_pe = random_tensor({3 * cfg.slots, cfg.d_model}, rng);
  pe.pixel_pe = random_tensor({3 * h * w, cfg.d_model}, rng);
  zero_out(p.c_wv_e);
  zero_out(p.c_wv_f);
  zero_out(p.p_wv);
  InstanceCode e = random_code(cfg.slots, cfg.d_model, rng);
  FeatureMap f = random_features(h, w, cfg.d_model, rng);

  ReferenceBuffer empty(2);
  CHECK_THROWS_AS(inter_c2c_c2p(e, empty, pe, p, cfg.attn), ContractError);
  CHECK_THROWS_AS(inter_p2c(f, empty, pe, p, cfg.attn), ContractError);

  ReferenceBuffer buf(2);
  buf.push(e, f);  // single reference identical to target
  CHECK(inter_c2c_c2p(e, buf, pe, p, cfg.attn).values.data() == e.values.data());
  CHECK(inter_p2c(f, buf, pe, p, cfg.attn).values.data() == f.values.data());
}

TEST_CASE("inter key axis has length n_ref*(HW+L)") {
  StackConfig cfg = oracle_config(2, 4);
  const int h = 2, w = 2;
  ParamStore ps;
  Rng rng(6);
  InterLayerParams p = InterLayerParams::create(ps, "t", cfg.d_model, rng);
  PositionalTable pe;
  pe.slots = cfg.slots;
  pe.pixels = h * w;
  pe.n_ref_max = 3;
  pe.code_pe = random_tensor({4 * cfg.slots, cfg.d_model}, rng);
  pe.pixel_pe = random_tensor({4 * h * w, cfg.d_model}, rng);
  ReferenceBuffer buf(3);
  for (int i = 0; i < 3; ++i)
    buf.push(random_code(cfg.slots, cfg.d_model, rng),
             random_features(h, w, cfg.d_model, rng));
  InstanceCode e = random_code(cfg.slots, cfg.d_model, rng);

  auto& sink = attn_dump();
  sink.enabled = true;
  sink.maps.clear();
  inter_c2c_c2p(e, buf, pe, p, cfg.attn, "probe");
  sink.enabled = false;
  REQUIRE(sink.maps.size() == 1);
  CHECK(sink.maps[0].cols == 3 * (h * w + cfg.slots));
  sink.maps.clear();
}

TEST_CASE("encoder stack: first frame is independent of inter-frame params") {
  StackConfig cfg = oracle_config(3, 8, 8, 8);
  cfg.attn.head_count = 2;
  cfg.attn.use_layer_norm = true;
  cfg.attn.use_ffn = true;
  Rng rng(7);
  ParamStore ps;
  StackParams sp = StackParams::create(ps, cfg, rng);
  ImageFrame frame = random_frame(8, 8, rng);

  ReferenceBuffer buf1(cfg.n_ref);
  StackOutput out1 = run_encoder_stack(frame, buf1, cfg, sp);

  // Perturb every inter-frame parameter; first-frame output is unchanged.
  for (auto& [name, t] : ps.all())
    if (name.find(".inter.") != std::string::npos)
      for (auto& v : t.mutable_data()) v += 1.5;
  ReferenceBuffer buf2(cfg.n_ref);
  StackOutput out2 = run_encoder_stack(frame, buf2, cfg, sp);
  CHECK(out1.code.values.data() == out2.code.values.data());
  CHECK(out1.features.values.data() == out2.features.values.data());
}

TEST_CASE("encoder stack: FIFO snapshots hold the last n_ref frames") {
  StackConfig cfg = oracle_config(2, 8, 8, 8);
  cfg.n_ref = 3;
  Rng rng(8);
  ParamStore ps;
  StackParams sp = StackParams::create(ps, cfg, rng);
  ReferenceBuffer buf(cfg.n_ref);
  std::vector<ImageFrame> frames;
  for (int t = 0; t < 5; ++t) frames.push_back(random_frame(8, 8, rng));
  for (int t = 0; t < 5; ++t) run_encoder_stack(frames[t], buf, cfg, sp);
  CHECK(buf.size() == 3);
  // The snapshot is the post-intra state: recompute frame 4's directly.
  EncodedFrame enc = encode_frame(frames[4], sp.encoder);
  InstanceCode e{sp.init_code};
  FeatureMap f = enc.features;
  for (const auto& layer : sp.intra_backbone) {
    IntraResult r = intra_layer(e, f, layer, cfg.attn);
    e = r.code;
    f = r.features;
  }
  CHECK(buf.by_offset(1).code.values.data() == e.values.data());
}

TEST_CASE("encoder stack output depends only on the last n_ref+1 frames") {
  StackConfig cfg = oracle_config(2, 8, 8, 8);
  cfg.n_ref = 1;
  cfg.attn.head_count = 2;
  cfg.attn.use_layer_norm = true;
  cfg.attn.use_ffn = true;
  cfg.attn.use_pixel_self_attention = true;
  Rng rng(9);
  ParamStore ps;
  StackParams sp = StackParams::create(ps, cfg, rng);
  std::vector<ImageFrame> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(random_frame(8, 8, rng));

  auto run_all = [&](const std::vector<ImageFrame>& fs) {
    ReferenceBuffer buf(cfg.n_ref);
    StackOutput last;
    for (const auto& fr : fs) last = run_encoder_stack(fr, buf, cfg, sp);
    return last;
  };
  StackOutput base = run_all(frames);
  // Perturb frame t - n_ref - 1 = frame 0; the frame-2 output is bit-identical.
  std::vector<ImageFrame> perturbed = frames;
  Rng rng2(99);
  perturbed[0] = random_frame(8, 8, rng2);
  StackOutput alt = run_all(perturbed);
  CHECK(base.code.values.data() == alt.code.values.data());
  CHECK(base.features.values.data() == alt.features.values.data());
}

TEST_CASE("gradients flow through the full stack (finite differences)") {
  StackConfig cfg = oracle_config(2, 4, 8, 8);
  cfg.attn.head_count = 2;
  cfg.attn.use_layer_norm = true;
  cfg.attn.use_ffn = true;
  cfg.attn.use_pixel_self_attention = true;
  cfg.n_ref = 1;
  Rng rng(10);
  ParamStore ps;
  StackParams sp = StackParams::create(ps, cfg, rng);
  std::vector<ImageFrame> frames = {random_frame(8, 8, rng), random_frame(8, 8, rng)};

  // Reduce with fixed random weights: a plain sum of squares is nearly
  // invariant after the closing layer norm, which would zero out the
  // gradients under test.
  Tensor wc = Tensor::gaussian({cfg.slots, cfg.d_model}, 1.0, rng);
  Tensor wf = Tensor::gaussian({2, 2, cfg.d_model}, 1.0, rng);
  auto loss_fn = [&](const std::vector<Tensor>&) {
    ReferenceBuffer buf(cfg.n_ref);
    StackOutput last;
    for (const auto& fr : frames) last = run_encoder_stack(fr, buf, cfg, sp);
    return add(sum(mul(last.code.values, wc)),
               sum(mul(last.features.values, wf)));
  };
  // Check a representative parameter from each family.
  std::vector<Tensor> picks = {
      ps.get("instance_code"), ps.get("pos.code"),
      ps.get("alt.0.inter.c2cp.wk_f"), ps.get("alt.0.inter.p2c.wv"),
      ps.get("intra.0.c2cp.wq"), ps.get("alt.0.intra.ffn.w1"),
      ps.get("encoder.conv2.w")};
  for (auto& t : picks) {
    CHECK(finite_diff_check(loss_fn, {t}) < 1e-4);
  }
}
