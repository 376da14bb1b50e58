#pragma once

// The four attention types linking instance code and pixel features:
// intra-frame c2c&c2p and p2c within one frame, and inter-frame c2c&c2p and
// p2c from the target frame into concatenated reference-frame snapshots.
// The encoder stack runs N intra-frame layers, snapshots the results into a
// FIFO reference buffer, then M alternating inter/intra layers.

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "svis/frame.hpp"
#include "svis/params.hpp"
#include "svis/tensor.hpp"

namespace svis {

struct AttentionConfig {
  int head_count = 2;
  bool use_layer_norm = true;
  bool use_ffn = true;
  bool use_pixel_self_attention = true;
  bool enable_inter_c2c_c2p = true;
  bool enable_inter_p2c = true;
};

struct StackConfig {
  int slots = 10;           // L
  int d_model = 32;         // D_e = D_f
  int num_intra = 2;        // N, intra layers in the backbone stage
  int num_alternating = 2;  // M, inter+intra repetitions
  int n_ref = 3;            // reference frame count
  int frame_height = 64;
  int frame_width = 64;
  int in_channels = 3;
  AttentionConfig attn;

  int feat_height() const { return frame_height / 4; }
  int feat_width() const { return frame_width / 4; }
  int feat_pixels() const { return feat_height() * feat_width(); }

  void validate() const {
    require(slots >= 1 && d_model >= 1, "StackConfig: slots and d_model must be >= 1");
    require(num_intra >= 1 && num_alternating >= 1,
            "StackConfig: layer counts must be >= 1");
    require(n_ref >= 0, "StackConfig: n_ref must be >= 0");
    require(d_model % attn.head_count == 0,
            "StackConfig: d_model must be divisible by head_count");
    require(frame_height % 4 == 0 && frame_width % 4 == 0,
            "StackConfig: frame dimensions must be multiples of 4");
  }
};

// Optional capture of inter-frame attention weights for PGM export.
struct AttnDumpSink {
  bool enabled = false;
  struct Map {
    std::string label;
    int rows = 0, cols = 0;
    std::vector<double> weights;
  };
  std::vector<Map> maps;
};

inline AttnDumpSink& attn_dump() {
  static AttnDumpSink s;
  return s;
}

// ---------------------------------------------------------------------------
// Shared multi-head machinery. Q/K/V are already projected [n, D] token
// matrices; heads act on column blocks. Logits are scaled by
// 1/sqrt(per-head dim); softmax runs over the key axis.
// ---------------------------------------------------------------------------

inline Tensor multihead_attention(const Tensor& q, const Tensor& k,
                                  const Tensor& v, const Tensor& w_out,
                                  int heads, const std::string& dump_label = "") {
  const int d = q.dim(1);
  require(d % heads == 0, "attention: width not divisible by head count");
  const int dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt((double)dh);
  std::vector<Tensor> head_outs;
  for (int h = 0; h < heads; ++h) {
    Tensor qh = heads == 1 ? q : slice(q, 1, h * dh, dh);
    Tensor kh = heads == 1 ? k : slice(k, 1, h * dh, dh);
    Tensor vh = heads == 1 ? v : slice(v, 1, h * dh, dh);
    Tensor logits = scale(matmul(qh, transpose(kh)), inv_scale);
    Tensor weights = softmax(logits, 1);
    auto& sink = attn_dump();
    if (sink.enabled && !dump_label.empty()) {
      sink.maps.push_back({dump_label + ".h" + std::to_string(h),
                           weights.dim(0), weights.dim(1), weights.data()});
    }
    head_outs.push_back(matmul(weights, vh));
  }
  Tensor joined = heads == 1 ? head_outs[0] : concat(head_outs, 1);
  return matmul(joined, w_out);
}

namespace detail {

struct LayerNormParams {
  Tensor gamma, beta;
  static LayerNormParams create(ParamStore& ps, const std::string& name, int d) {
    return {ps.create_full(name + ".g", {d}, 1.0), ps.create_full(name + ".b", {d}, 0.0)};
  }
  Tensor apply(const Tensor& x, bool enabled) const {
    return enabled ? layer_norm(x, gamma, beta) : x;
  }
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
  static FfnParams create(ParamStore& ps, const std::string& name, int d, Rng& rng) {
    FfnParams p;
    p.w1 = ps.create_gaussian(name + ".w1", {d, 2 * d}, std::sqrt(2.0 / d), rng);
    p.b1 = ps.create_full(name + ".b1", {2 * d}, 0.0);
    p.w2 = ps.create_gaussian(name + ".w2", {2 * d, d}, std::sqrt(1.0 / (2.0 * d)), rng);
    p.b2 = ps.create_full(name + ".b2", {d}, 0.0);
    return p;
  }
  Tensor apply(const Tensor& x) const {
    return add_bias(matmul(relu(add_bias(matmul(x, w1), b1)), w2), b2);
  }
};

inline Tensor proj_weight(ParamStore& ps, const std::string& name, int d, Rng& rng) {
  return ps.create_gaussian(name, {d, d}, std::sqrt(1.0 / d), rng);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Intra-frame layer
// ---------------------------------------------------------------------------

struct IntraLayerParams {
  // c2c & c2p: code queries over the joint [code; pixel] key axis.
  Tensor c_wq, c_wk_e, c_wk_f, c_wv_e, c_wv_f, c_wo;
  // p2c: pixel queries over code keys.
  Tensor p_wq, p_wk, p_wv, p_wo;
  // Pixel self-attention (MaX-DeepLab-style extra pixel-wise attention).
  Tensor s_wq, s_wk, s_wv, s_wo;
  detail::LayerNormParams ln_e, ln_f, ln_f2, ln_e2;
  detail::FfnParams ffn;

  static IntraLayerParams create(ParamStore& ps, const std::string& prefix,
                                 int d, Rng& rng) {
    using detail::proj_weight;
    IntraLayerParams p;
    p.c_wq = proj_weight(ps, prefix + ".c2cp.wq", d, rng);
    p.c_wk_e = proj_weight(ps, prefix + ".c2cp.wk_e", d, rng);
    p.c_wk_f = proj_weight(ps, prefix + ".c2cp.wk_f", d, rng);
    p.c_wv_e = proj_weight(ps, prefix + ".c2cp.wv_e", d, rng);
    p.c_wv_f = proj_weight(ps, prefix + ".c2cp.wv_f", d, rng);
    p.c_wo = proj_weight(ps, prefix + ".c2cp.wo", d, rng);
    p.p_wq = proj_weight(ps, prefix + ".p2c.wq", d, rng);
    p.p_wk = proj_weight(ps, prefix + ".p2c.wk", d, rng);
    p.p_wv = proj_weight(ps, prefix + ".p2c.wv", d, rng);
    p.p_wo = proj_weight(ps, prefix + ".p2c.wo", d, rng);
    p.s_wq = proj_weight(ps, prefix + ".self.wq", d, rng);
    p.s_wk = proj_weight(ps, prefix + ".self.wk", d, rng);
    p.s_wv = proj_weight(ps, prefix + ".self.wv", d, rng);
    p.s_wo = proj_weight(ps, prefix + ".self.wo", d, rng);
    p.ln_e = detail::LayerNormParams::create(ps, prefix + ".ln_e", d);
    p.ln_f = detail::LayerNormParams::create(ps, prefix + ".ln_f", d);
    p.ln_f2 = detail::LayerNormParams::create(ps, prefix + ".ln_f2", d);
    p.ln_e2 = detail::LayerNormParams::create(ps, prefix + ".ln_e2", d);
    p.ffn = detail::FfnParams::create(ps, prefix + ".ffn", d, rng);
    return p;
  }
};

// Code queries attend over the joint [code; pixel] key axis; the result is
// added to the input code (residual).
inline InstanceCode intra_c2c_c2p(const InstanceCode& e, const FeatureMap& f,
                                  const IntraLayerParams& p,
                                  const AttentionConfig& cfg) {
  require(e.dim() == p.c_wq.dim(0) && f.channels() == p.c_wk_f.dim(0),
          "intra_c2c_c2p: dims do not match params");
  Tensor ne = p.ln_e.apply(e.values, cfg.use_layer_norm);
  Tensor nf = p.ln_f.apply(f.tokens(), cfg.use_layer_norm);
  Tensor q = matmul(ne, p.c_wq);
  Tensor k = concat({matmul(ne, p.c_wk_e), matmul(nf, p.c_wk_f)}, 0);
  Tensor v = concat({matmul(ne, p.c_wv_e), matmul(nf, p.c_wv_f)}, 0);
  Tensor out = multihead_attention(q, k, v, p.c_wo, cfg.head_count);
  return InstanceCode{add(e.values, out)};
}

// Pixel queries attend over the L code slots; residual into the feature map.
inline FeatureMap intra_p2c(const InstanceCode& e, const FeatureMap& f,
                            const IntraLayerParams& p, const AttentionConfig& cfg) {
  require(e.dim() == p.p_wk.dim(0) && f.channels() == p.p_wq.dim(0),
          "intra_p2c: dims do not match params");
  Tensor ne = p.ln_e.apply(e.values, cfg.use_layer_norm);
  Tensor nf = p.ln_f.apply(f.tokens(), cfg.use_layer_norm);
  Tensor q = matmul(nf, p.p_wq);
  Tensor k = matmul(ne, p.p_wk);
  Tensor v = matmul(ne, p.p_wv);
  Tensor out = multihead_attention(q, k, v, p.p_wo, cfg.head_count);
  return FeatureMap::from_tokens(add(f.tokens(), out), f.height(), f.width(),
                                 f.stride);
}

struct IntraResult {
  InstanceCode code;
  FeatureMap features;
};

// One full intra-frame layer: c2c&c2p and p2c computed in parallel from the
// layer inputs, then optional pixel self-attention and a code-side
// feed-forward block.
inline IntraResult intra_layer(const InstanceCode& e, const FeatureMap& f,
                               const IntraLayerParams& p,
                               const AttentionConfig& cfg) {
  InstanceCode e1 = intra_c2c_c2p(e, f, p, cfg);
  FeatureMap f1 = intra_p2c(e, f, p, cfg);
  if (cfg.use_pixel_self_attention) {
    Tensor nf = p.ln_f2.apply(f1.tokens(), cfg.use_layer_norm);
    Tensor out = multihead_attention(matmul(nf, p.s_wq), matmul(nf, p.s_wk),
                                     matmul(nf, p.s_wv), p.s_wo, cfg.head_count);
    f1 = FeatureMap::from_tokens(add(f1.tokens(), out), f1.height(), f1.width(),
                                 f1.stride);
  }
  if (cfg.use_ffn) {
    Tensor ne = p.ln_e2.apply(e1.values, cfg.use_layer_norm);
    e1 = InstanceCode{add(e1.values, p.ffn.apply(ne))};
  }
  return {e1, f1};
}

// ---------------------------------------------------------------------------
// Reference buffer and inter-frame layer
// ---------------------------------------------------------------------------

// FIFO of the last n_ref frames' (code, feature-map) snapshots taken after
// the first N intra-frame layers, most recent last.
class ReferenceBuffer {
 public:
  struct Entry {
    InstanceCode code;
    FeatureMap features;
  };

  explicit ReferenceBuffer(int capacity = 0) : capacity_(capacity) {}

  void push(InstanceCode code, FeatureMap features) {
    if (capacity_ == 0) return;
    entries_.push_back({std::move(code), std::move(features)});
    while ((int)entries_.size() > capacity_) entries_.pop_front();
  }
  bool empty() const { return entries_.empty(); }
  int size() const { return (int)entries_.size(); }
  int capacity() const { return capacity_; }
  // delta = 1 is the most recent frame.
  const Entry& by_offset(int delta) const {
    require(delta >= 1 && delta <= size(), "reference offset out of range");
    return entries_[entries_.size() - delta];
  }
  void clear() { entries_.clear(); }

 private:
  int capacity_;
  std::deque<Entry> entries_;
};

struct InterLayerParams {
  Tensor c_wq, c_wk_e, c_wk_f, c_wv_e, c_wv_f, c_wo;  // c2c & c2p
  Tensor p_wq, p_wk, p_wv, p_wo;                      // p2c
  detail::LayerNormParams ln_e, ln_f, ln_ref_e, ln_ref_f, ln_e2;
  detail::FfnParams ffn;

  static InterLayerParams create(ParamStore& ps, const std::string& prefix,
                                 int d, Rng& rng) {
    using detail::proj_weight;
    InterLayerParams p;
    p.c_wq = proj_weight(ps, prefix + ".c2cp.wq", d, rng);
    p.c_wk_e = proj_weight(ps, prefix + ".c2cp.wk_e", d, rng);
    p.c_wk_f = proj_weight(ps, prefix + ".c2cp.wk_f", d, rng);
    p.c_wv_e = proj_weight(ps, prefix + ".c2cp.wv_e", d, rng);
    p.c_wv_f = proj_weight(ps, prefix + ".c2cp.wv_f", d, rng);
    p.c_wo = proj_weight(ps, prefix + ".c2cp.wo", d, rng);
    p.p_wq = proj_weight(ps, prefix + ".p2c.wq", d, rng);
    p.p_wk = proj_weight(ps, prefix + ".p2c.wk", d, rng);
    p.p_wv = proj_weight(ps, prefix + ".p2c.wv", d, rng);
    p.p_wo = proj_weight(ps, prefix + ".p2c.wo", d, rng);
    p.ln_e = detail::LayerNormParams::create(ps, prefix + ".ln_e", d);
    p.ln_f = detail::LayerNormParams::create(ps, prefix + ".ln_f", d);
    p.ln_ref_e = detail::LayerNormParams::create(ps, prefix + ".ln_ref_e", d);
    p.ln_ref_f = detail::LayerNormParams::create(ps, prefix + ".ln_ref_f", d);
    p.ln_e2 = detail::LayerNormParams::create(ps, prefix + ".ln_e2", d);
    p.ffn = detail::FfnParams::create(ps, prefix + ".ffn", d, rng);
    return p;
  }
};

namespace detail {

// References concatenated most-recent-first with per-offset positional
// encoding: all codes, then all pixel tokens.
inline Tensor concat_ref_codes(const ReferenceBuffer& buf,
                               const PositionalTable& pe,
                               const LayerNormParams& ln, bool use_ln) {
  std::vector<Tensor> parts;
  for (int delta = 1; delta <= buf.size(); ++delta) {
    Tensor c = ln.apply(buf.by_offset(delta).code.values, use_ln);
    parts.push_back(add(c, pe.code_slice(delta)));
  }
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

inline Tensor concat_ref_pixels(const ReferenceBuffer& buf,
                                const PositionalTable& pe,
                                const LayerNormParams& ln, bool use_ln) {
  std::vector<Tensor> parts;
  for (int delta = 1; delta <= buf.size(); ++delta) {
    Tensor f = ln.apply(buf.by_offset(delta).features.tokens(), use_ln);
    parts.push_back(add(f, pe.pixel_slice(delta)));
  }
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

}  // namespace detail

// Target-code queries over all reference codes and reference pixels
// (key axis length n_ref*(HW+L)); residual into the target code.
inline InstanceCode inter_c2c_c2p(const InstanceCode& e_tgt,
                                  const ReferenceBuffer& buf,
                                  const PositionalTable& pe,
                                  const InterLayerParams& p,
                                  const AttentionConfig& cfg,
                                  const std::string& dump_label = "") {
  require(!buf.empty(), "inter_c2c_c2p: reference buffer is empty");
  Tensor ne = add(p.ln_e.apply(e_tgt.values, cfg.use_layer_norm), pe.code_slice(0));
  Tensor ref_e = detail::concat_ref_codes(buf, pe, p.ln_ref_e, cfg.use_layer_norm);
  Tensor ref_f = detail::concat_ref_pixels(buf, pe, p.ln_ref_f, cfg.use_layer_norm);
  Tensor q = matmul(ne, p.c_wq);
  Tensor k = concat({matmul(ref_e, p.c_wk_e), matmul(ref_f, p.c_wk_f)}, 0);
  Tensor v = concat({matmul(ref_e, p.c_wv_e), matmul(ref_f, p.c_wv_f)}, 0);
  Tensor out = multihead_attention(q, k, v, p.c_wo, cfg.head_count, dump_label);
  return InstanceCode{add(e_tgt.values, out)};
}

// Target-pixel queries over the n_ref*L reference code slots only;
// residual into the target feature map.
inline FeatureMap inter_p2c(const FeatureMap& f_tgt, const ReferenceBuffer& buf,
                            const PositionalTable& pe, const InterLayerParams& p,
                            const AttentionConfig& cfg,
                            const std::string& dump_label = "") {
  require(!buf.empty(), "inter_p2c: reference buffer is empty");
  Tensor nf = add(p.ln_f.apply(f_tgt.tokens(), cfg.use_layer_norm), pe.pixel_slice(0));
  Tensor ref_e = detail::concat_ref_codes(buf, pe, p.ln_ref_e, cfg.use_layer_norm);
  Tensor q = matmul(nf, p.p_wq);
  Tensor k = matmul(ref_e, p.p_wk);
  Tensor v = matmul(ref_e, p.p_wv);
  Tensor out = multihead_attention(q, k, v, p.p_wo, cfg.head_count, dump_label);
  return FeatureMap::from_tokens(add(f_tgt.tokens(), out), f_tgt.height(),
                                 f_tgt.width(), f_tgt.stride);
}

// One inter-frame layer: both inter attentions from the same inputs, then
// the code-side feed-forward block.
inline IntraResult inter_layer(const InstanceCode& e, const FeatureMap& f,
                               const ReferenceBuffer& buf,
                               const PositionalTable& pe,
                               const InterLayerParams& p,
                               const AttentionConfig& cfg,
                               const std::string& dump_label = "") {
  InstanceCode e1 = cfg.enable_inter_c2c_c2p
                        ? inter_c2c_c2p(e, buf, pe, p, cfg,
                                        dump_label.empty() ? "" : dump_label + ".c2cp")
                        : e;
  FeatureMap f1 = cfg.enable_inter_p2c
                      ? inter_p2c(f, buf, pe, p, cfg,
                                  dump_label.empty() ? "" : dump_label + ".p2c")
                      : f;
  if (cfg.use_ffn && cfg.enable_inter_c2c_c2p) {
    Tensor ne = p.ln_e2.apply(e1.values, cfg.use_layer_norm);
    e1 = InstanceCode{add(e1.values, p.ffn.apply(ne))};
  }
  return {e1, f1};
}

// ---------------------------------------------------------------------------
// Encoder stack
// ---------------------------------------------------------------------------

struct StackParams {
  EncoderParams encoder;
  Tensor init_code;  // learnable initial instance code [L, D]
  PositionalTable positional;
  std::vector<IntraLayerParams> intra_backbone;   // N layers
  std::vector<InterLayerParams> inter_alt;        // M layers
  std::vector<IntraLayerParams> intra_alt;        // M layers
  // Pre-norm stacks need a closing normalization, otherwise the residual
  // stream grows without bound and the downstream softmaxes saturate.
  detail::LayerNormParams ln_final_e, ln_final_f;

  static StackParams create(ParamStore& ps, const StackConfig& cfg, Rng& rng) {
    cfg.validate();
    StackParams sp;
    sp.encoder = EncoderParams::create(ps, cfg.in_channels, cfg.d_model, rng);
    sp.init_code = ps.create_gaussian("instance_code", {cfg.slots, cfg.d_model},
                                      0.02, rng);
    const int pe_frames = cfg.n_ref + 1;  // offset 0 is the target frame
    sp.positional.slots = cfg.slots;
    sp.positional.pixels = cfg.feat_pixels();
    sp.positional.n_ref_max = cfg.n_ref;
    sp.positional.code_pe = ps.create_gaussian(
        "pos.code", {pe_frames * cfg.slots, cfg.d_model}, 0.02, rng);
    sp.positional.pixel_pe = ps.create_gaussian(
        "pos.pixel", {pe_frames * cfg.feat_pixels(), cfg.d_model}, 0.02, rng);
    for (int i = 0; i < cfg.num_intra; ++i)
      sp.intra_backbone.push_back(IntraLayerParams::create(
          ps, "intra." + std::to_string(i), cfg.d_model, rng));
    for (int i = 0; i < cfg.num_alternating; ++i) {
      sp.inter_alt.push_back(InterLayerParams::create(
          ps, "alt." + std::to_string(i) + ".inter", cfg.d_model, rng));
      sp.intra_alt.push_back(IntraLayerParams::create(
          ps, "alt." + std::to_string(i) + ".intra", cfg.d_model, rng));
    }
    sp.ln_final_e = detail::LayerNormParams::create(ps, "final.ln_e", cfg.d_model);
    sp.ln_final_f = detail::LayerNormParams::create(ps, "final.ln_f", cfg.d_model);
    return sp;
  }
};

struct StackOutput {
  InstanceCode code;
  FeatureMap features;  // stride 4
  FeatureMap skip;      // stride 2, for the decoder
};

// Full per-frame encoder pass. References for this frame are the buffer
// contents from previous frames; the post-intra snapshot is then pushed
// (evicting beyond capacity). On the first frame of a video the buffer is
// empty and the inter-frame sublayers are skipped.
inline StackOutput run_encoder_stack(const ImageFrame& frame, ReferenceBuffer& buf,
                                     const StackConfig& cfg, const StackParams& sp,
                                     const std::string& dump_prefix = "") {
  require(frame.height() == cfg.frame_height && frame.width() == cfg.frame_width,
          "run_encoder_stack: frame shape does not match config");
  EncodedFrame enc = encode_frame(frame, sp.encoder);
  InstanceCode e{sp.init_code};
  FeatureMap f = enc.features;
  for (const auto& layer : sp.intra_backbone) {
    IntraResult r = intra_layer(e, f, layer, cfg.attn);
    e = r.code;
    f = r.features;
  }
  // Snapshot the post-intra state; the M alternating layers never write to
  // the buffer.
  ReferenceBuffer refs = buf;
  buf.push(e, f);
  const bool have_refs = !refs.empty() &&
                         (cfg.attn.enable_inter_c2c_c2p || cfg.attn.enable_inter_p2c);
  for (int m = 0; m < cfg.num_alternating; ++m) {
    if (have_refs) {
      const std::string label =
          dump_prefix.empty() ? "" : dump_prefix + ".alt" + std::to_string(m);
      IntraResult r = inter_layer(e, f, refs, sp.positional, sp.inter_alt[m],
                                  cfg.attn, label);
      e = r.code;
      f = r.features;
    }
    IntraResult r = intra_layer(e, f, sp.intra_alt[m], cfg.attn);
    e = r.code;
    f = r.features;
  }
  e = InstanceCode{sp.ln_final_e.apply(e.values, cfg.attn.use_layer_norm)};
  f = FeatureMap::from_tokens(
      sp.ln_final_f.apply(f.tokens(), cfg.attn.use_layer_norm), f.height(),
      f.width(), f.stride);
  return {e, f, enc.skip};
}

}  // namespace svis
