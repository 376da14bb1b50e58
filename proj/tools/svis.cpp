// Command-line front end: dataset generation, training, inference,
// evaluation and attention-map export.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "svis/config.hpp"
#include "svis/data.hpp"
#include "svis/eval.hpp"
#include "svis/infer.hpp"
#include "svis/model.hpp"
#include "svis/train.hpp"

namespace fs = std::filesystem;
using namespace svis;

namespace {

struct CommonModelArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  // ablation shortcuts; -1 / empty means "leave as configured"
  int n_ref = -1;
  int alt_layers = -1;
  int slots = -1;
  bool disable_inter_p2c = false;
  bool disable_inter_c2c_c2p = false;
  std::string pairwise;  // "on"/"off"
  uint64_t seed = 0;
  bool seed_set = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", overrides, "config override key=value")
        ->take_all();
    cmd->add_option("--n-ref", n_ref, "reference frame count");
    cmd->add_option("--alt-layers", alt_layers,
                    "alternating inter/intra layer count");
    cmd->add_option("--slots", slots, "instance slot count");
    cmd->add_flag("--disable-inter-p2c", disable_inter_p2c,
                  "drop pixel-to-code inter-frame attention");
    cmd->add_flag("--disable-inter-c2c-c2p", disable_inter_c2c_c2p,
                  "drop code-side inter-frame attention");
    cmd->add_option("--pairwise-matching", pairwise,
                    "two-frame match scoring: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--seed", seed, "seed override")
        ->each([this](const std::string&) { seed_set = true; });
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& o : overrides) apply_config_override(cfg, o);
    if (n_ref >= 0) cfg.n_ref = n_ref;
    if (alt_layers >= 0) cfg.num_alternating = alt_layers;
    if (slots >= 0) cfg.slots = slots;
    if (disable_inter_p2c) cfg.enable_inter_p2c = false;
    if (disable_inter_c2c_c2p) cfg.enable_inter_c2c_c2p = false;
    if (pairwise == "on") cfg.pairwise_matching = true;
    if (pairwise == "off") cfg.pairwise_matching = false;
    if (seed_set) cfg.seed = seed;
    return cfg;
  }
};

void infer_dataset(const VisModel& model, const Dataset& ds,
                   const std::vector<std::string>& names,
                   const TrackerConfig& tc, const fs::path& out_dir,
                   bool write_masks, bool dump_attention) {
  for (const auto& lc : ds.clips) {
    if (!names.empty() &&
        std::find(names.begin(), names.end(), lc.name) == names.end())
      continue;
    if (dump_attention) {
      attn_dump().enabled = true;
      attn_dump().maps.clear();
    }
    InferenceResult res =
        run_inference(model, lc.clip.frames, tc, dump_attention ? lc.name : "");
    fs::path clip_out = out_dir / lc.name;
    fs::create_directories(clip_out);
    write_tracks(clip_out / "tracks.json", res);
    if (write_masks) write_segmentation_maps(clip_out, res);
    if (dump_attention) {
      for (const auto& m : attn_dump().maps) {
        double lo = m.weights[0], hi = m.weights[0];
        for (double w : m.weights) {
          lo = std::min(lo, w);
          hi = std::max(hi, w);
        }
        double span = hi - lo > 1e-12 ? hi - lo : 1.0;
        std::vector<uint8_t> img(m.weights.size());
        for (size_t i = 0; i < img.size(); ++i)
          img[i] = (uint8_t)std::lround(255.0 * (m.weights[i] - lo) / span);
        write_pnm((clip_out / (m.label + ".pgm")).string(), m.cols, m.rows, 1,
                  img);
      }
      attn_dump().enabled = false;
      attn_dump().maps.clear();
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale online video instance segmentation"};
  app.require_subcommand(1);

  // --- gen-data ---
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_out, gen_split = "train";
  DatasetSpec dspec;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--clips", dspec.num_clips, "number of clips");
  gen->add_option("--frames", dspec.clip.frames, "frames per clip");
  gen->add_option("--height", dspec.clip.height, "canvas height");
  gen->add_option("--width", dspec.clip.width, "canvas width");
  gen->add_option("--min-instances", dspec.clip.min_instances, "min objects");
  gen->add_option("--max-instances", dspec.clip.max_instances, "max objects");
  gen->add_option("--min-speed", dspec.clip.min_speed, "min px/frame");
  gen->add_option("--max-speed", dspec.clip.max_speed, "max px/frame");
  gen->add_option("--split", gen_split, "split label for all clips");
  gen->add_option("--seed", dspec.clip.seed, "base seed");
  bool gen_no_occ = false;
  gen->add_flag("--no-occlusion", gen_no_occ, "reject overlapping layouts");

  // --- train ---
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_data, train_out;
  CommonModelArgs train_args;
  bool verbose = false;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_flag("--verbose", verbose, "print progress");
  train_args.attach(train);

  // --- infer / dump-attn ---
  auto* infer = app.add_subcommand("infer", "run streaming inference");
  auto* dump = app.add_subcommand("dump-attn",
                                  "inference with attention-map export");
  std::string inf_data, inf_out, inf_ckpt;
  std::vector<std::string> inf_clips;
  bool inf_masks = false;
  CommonModelArgs infer_args, dump_args;
  for (auto* cmd : {infer, dump}) {
    cmd->add_option("--data", inf_data, "dataset directory")->required();
    cmd->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required();
    cmd->add_option("--out", inf_out, "output directory")->required();
    cmd->add_option("--clip", inf_clips, "restrict to named clips")->take_all();
  }
  infer->add_flag("--masks", inf_masks, "also write per-frame PGM maps");
  infer_args.attach(infer);
  dump_args.attach(dump);

  // --- eval ---
  auto* eval = app.add_subcommand("eval", "score predictions against a dataset");
  std::string eval_data, eval_pred, eval_out;
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--pred", eval_pred,
                   "directory with per-clip tracks.json")->required();
  eval->add_option("--out", eval_out, "optional metrics.json path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      dspec.split = gen_split;
      dspec.clip.allow_occlusion = !gen_no_occ;
      write_dataset(gen_out, dspec);
      std::printf("wrote %d clips to %s\n", dspec.num_clips, gen_out.c_str());
    } else if (*train) {
      RunConfig cfg = train_args.resolve();
      Dataset ds = load_dataset(train_data, "train");
      VisModel model(cfg);
      TrainResult res = run_training(model, ds, cfg, train_out, verbose);
      std::printf("trained %d iterations, final loss %.5f\n",
                  (int)res.losses.size(), res.final_loss);
    } else if (*infer || *dump) {
      CommonModelArgs& margs = *infer ? infer_args : dump_args;
      RunConfig cfg = margs.resolve();
      Dataset ds = load_dataset(inf_data);
      VisModel model(cfg);
      model.load(inf_ckpt);
      infer_dataset(model, ds, inf_clips, cfg.tracker_config(), inf_out,
                    inf_masks || *dump, (bool)*dump);
      std::printf("inference written to %s\n", inf_out.c_str());
    } else if (*eval) {
      Dataset ds = load_dataset(eval_data);
      std::vector<VideoPredictions> preds;
      std::vector<VideoGroundTruth> gts;
      for (const auto& lc : ds.clips) {
        fs::path tj = fs::path(eval_pred) / lc.name / "tracks.json";
        std::ifstream f(tj);
        if (!f) throw IoError("missing predictions: " + tj.string());
        nlohmann::json j;
        f >> j;
        preds.push_back({lc.name, tracks_from_json(j)});
        gts.push_back(ground_truth_of(lc.name, lc.clip));
      }
      ApReport rep = evaluate_ap(preds, gts, ds.num_classes);
      int switches = count_id_switches(preds, gts);
      std::printf("AP    %.4f\nAP50  %.4f\nAP75  %.4f\nAR1   %.4f\n"
                  "AR10  %.4f\nIDSW  %d\n",
                  rep.ap, rep.ap50, rep.ap75, rep.ar1, rep.ar10, switches);
      if (!eval_out.empty()) {
        std::ofstream f(eval_out);
        if (!f) throw IoError("cannot write " + eval_out);
        f << nlohmann::json({{"ap", rep.ap},
                             {"ap50", rep.ap50},
                             {"ap75", rep.ap75},
                             {"ar1", rep.ar1},
                             {"ar10", rep.ar10},
                             {"id_switches", switches}})
                 .dump(1)
          << "\n";
      }
    }
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
