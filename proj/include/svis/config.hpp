#pragma once

// Flat key=value run configuration. Files hold one `key=value` pair per
// line; '#' starts a comment. Unknown keys are rejected so typos cannot
// silently fall back to defaults.

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "svis/attention.hpp"
#include "svis/common.hpp"
#include "svis/matching.hpp"
#include "svis/tracker.hpp"

namespace svis {

struct RunConfig {
  uint64_t seed = 42;

  // model
  int slots = 10;
  int d_model = 32;
  int head_count = 2;
  int num_intra = 2;
  int num_alternating = 2;
  int n_ref = 3;
  int frame_height = 64;
  int frame_width = 64;
  int in_channels = 3;
  int num_classes = 3;
  bool use_layer_norm = true;
  bool use_ffn = true;
  bool use_pixel_self_attention = true;
  bool enable_inter_c2c_c2p = true;
  bool enable_inter_p2c = true;

  // training
  bool pairwise_matching = true;  // include frame t-1 in the match score
  double lambda_inst = 0.75;
  double lambda_aux = 0.0;
  double k_mask = 1.0;
  double k_cls = 1.0;
  double learning_rate = 2e-3;
  double poly_power = 0.9;
  int iterations = 2000;
  int batch_size = 4;
  bool augment = true;  // train-time color jitter + horizontal flips

  // tracking
  double track_iou_threshold = 0.5;
  int track_gone_patience = 5;
  bool track_iou_override = true;
  bool component_cleanup = false;  // see TrackerConfig::component_cleanup

  StackConfig stack_config() const {
    StackConfig cfg;
    cfg.slots = slots;
    cfg.d_model = d_model;
    cfg.num_intra = num_intra;
    cfg.num_alternating = num_alternating;
    cfg.n_ref = n_ref;
    cfg.frame_height = frame_height;
    cfg.frame_width = frame_width;
    cfg.in_channels = in_channels;
    cfg.attn.head_count = head_count;
    cfg.attn.use_layer_norm = use_layer_norm;
    cfg.attn.use_ffn = use_ffn;
    cfg.attn.use_pixel_self_attention = use_pixel_self_attention;
    cfg.attn.enable_inter_c2c_c2p = enable_inter_c2c_c2p;
    cfg.attn.enable_inter_p2c = enable_inter_p2c;
    return cfg;
  }

  LossWeights loss_weights() const {
    LossWeights w;
    w.lambda_inst = lambda_inst;
    w.lambda_aux = lambda_aux;
    w.k_mask = k_mask;
    w.k_cls = k_cls;
    return w;
  }

  TrackerConfig tracker_config() const {
    TrackerConfig tc;
    tc.iou_threshold = track_iou_threshold;
    tc.gone_patience = track_gone_patience;
    tc.iou_override = track_iou_override;
    tc.component_cleanup = component_cleanup;
    return tc;
  }
};

namespace detail {

struct ConfigField {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("config: bad boolean for " + key + ": '" + v + "'");
}

inline const std::map<std::string, ConfigField>& config_fields() {
  auto int_field = [](int RunConfig::* m) {
    return ConfigField{
        [m](const RunConfig& c) { return std::to_string(c.*m); },
        [m](RunConfig& c, const std::string& v) { c.*m = std::stoi(v); }};
  };
  auto double_field = [](double RunConfig::* m) {
    return ConfigField{
        [m](const RunConfig& c) {
          std::ostringstream os;
          os << (c.*m);
          return os.str();
        },
        [m](RunConfig& c, const std::string& v) { c.*m = std::stod(v); }};
  };
  auto bool_field = [](bool RunConfig::* m) {
    return ConfigField{
        [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); },
        [m](RunConfig& c, const std::string& v) {
          c.*m = parse_bool(v, "<bool>");
        }};
  };
  static const std::map<std::string, ConfigField> fields = {
      {"seed",
       {[](const RunConfig& c) { return std::to_string(c.seed); },
        [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); }}},
      {"slots", int_field(&RunConfig::slots)},
      {"d_model", int_field(&RunConfig::d_model)},
      {"head_count", int_field(&RunConfig::head_count)},
      {"num_intra", int_field(&RunConfig::num_intra)},
      {"num_alternating", int_field(&RunConfig::num_alternating)},
      {"n_ref", int_field(&RunConfig::n_ref)},
      {"frame_height", int_field(&RunConfig::frame_height)},
      {"frame_width", int_field(&RunConfig::frame_width)},
      {"in_channels", int_field(&RunConfig::in_channels)},
      {"num_classes", int_field(&RunConfig::num_classes)},
      {"use_layer_norm", bool_field(&RunConfig::use_layer_norm)},
      {"use_ffn", bool_field(&RunConfig::use_ffn)},
      {"use_pixel_self_attention",
       bool_field(&RunConfig::use_pixel_self_attention)},
      {"enable_inter_c2c_c2p", bool_field(&RunConfig::enable_inter_c2c_c2p)},
      {"enable_inter_p2c", bool_field(&RunConfig::enable_inter_p2c)},
      {"pairwise_matching", bool_field(&RunConfig::pairwise_matching)},
      {"augment", bool_field(&RunConfig::augment)},
      {"lambda_inst", double_field(&RunConfig::lambda_inst)},
      {"lambda_aux", double_field(&RunConfig::lambda_aux)},
      {"k_mask", double_field(&RunConfig::k_mask)},
      {"k_cls", double_field(&RunConfig::k_cls)},
      {"learning_rate", double_field(&RunConfig::learning_rate)},
      {"poly_power", double_field(&RunConfig::poly_power)},
      {"iterations", int_field(&RunConfig::iterations)},
      {"batch_size", int_field(&RunConfig::batch_size)},
      {"track_iou_threshold", double_field(&RunConfig::track_iou_threshold)},
      {"track_gone_patience", int_field(&RunConfig::track_gone_patience)},
      {"track_iou_override", bool_field(&RunConfig::track_iou_override)},
      {"component_cleanup", bool_field(&RunConfig::component_cleanup)},
  };
  return fields;
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& key,
                               const std::string& value) {
  const auto& fields = detail::config_fields();
  auto it = fields.find(key);
  require(it != fields.end(), "config: unknown key '" + key + "'");
  try {
    it->second.set(cfg, value);
  } catch (const ContractError&) {
    throw;
  } catch (const std::exception&) {
    throw ContractError("config: bad value for " + key + ": '" + value + "'");
  }
}

// "key=value" as used by --set overrides.
inline void apply_config_override(RunConfig& cfg, const std::string& spec) {
  auto eq = spec.find('=');
  require(eq != std::string::npos && eq > 0,
          "config: override must look like key=value, got '" + spec + "'");
  apply_config_entry(cfg, spec.substr(0, eq), spec.substr(eq + 1));
}

inline std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, field] : detail::config_fields())
    os << key << "=" << field.get(cfg) << "\n";
  return os.str();
}

inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    auto eq = line.find('=');
    require(eq != std::string::npos,
            "config: line " + std::to_string(line_no) + " is not key=value");
    auto trim = [](std::string s) {
      auto b2 = s.find_first_not_of(" \t");
      if (b2 == std::string::npos) return std::string();
      auto e2 = s.find_last_not_of(" \t");
      return s.substr(b2, e2 - b2 + 1);
    };
    apply_config_entry(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  return parse_config(f, base);
}

}  // namespace svis
