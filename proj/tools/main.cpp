// Command-line front end: dataset synthesis, the two pre-training stages and
// their ablations, evaluation suites, sample filtering, and backbone export.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>

#include "geopre/config.hpp"
#include "geopre/data.hpp"
#include "geopre/eval.hpp"
#include "geopre/io.hpp"
#include "geopre/models.hpp"
#include "geopre/training.hpp"
#include "geopre/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace geopre;

namespace {

constexpr const char* kVersion = "geopre 0.1.0";

struct GlobalOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<bool> deterministic;
  std::string out;
};

config::RunConfig resolve_config(const GlobalOpts& g) {
  config::RunConfig cfg = config::load(g.config_path, g.overrides);
  if (g.seed) cfg.seed = *g.seed;
  if (g.deterministic) cfg.deterministic = *g.deterministic;
  return cfg;
}

void write_run_record(const std::string& out_dir, const std::string& command,
                      const config::RunConfig& cfg) {
  ensure_dir(out_dir);
  const std::string resolved = config::to_json_text(cfg);
  write_text_file(path_join(out_dir, "resolved_config.json"), resolved);
  json rec;
  const std::string digest = sha256_hex(resolved.data(), resolved.size());
  rec["run_id"] = digest.substr(0, 12);
  rec["config_digest"] = digest;
  rec["code_version"] = kVersion;
  rec["command"] = command;
  rec["out_dir"] = out_dir;
  if (cfg.deterministic) {
    rec["created"] = "deterministic";
  } else {
    rec["created"] = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
  }
  write_text_file(path_join(out_dir, "run_record.json"), rec.dump(2) + "\n");
}

void add_global_opts(CLI::App* cmd, GlobalOpts& g) {
  cmd->add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", g.overrides, "Override config values (section.key=value)");
  cmd->add_option("--seed", g.seed, "Root seed");
  cmd->add_flag("--deterministic,!--no-deterministic", g.deterministic, "Deterministic mode");
  cmd->add_option("--out", g.out, "Output directory")->required();
}

void require_kind(const models::Checkpoint& ckpt, const std::vector<std::string>& allowed,
                  const std::string& eval_kind) {
  for (const auto& k : allowed) {
    if (ckpt.kind() == k) return;
  }
  std::string expect;
  for (std::size_t i = 0; i < allowed.size(); ++i) expect += (i ? "|" : "") + allowed[i];
  throw std::runtime_error(eval_kind + " evaluation expects a checkpoint of kind " + expect +
                           ", found '" + ckpt.kind() + "' (schema version " +
                           std::to_string(ckpt.schema_version()) + ")");
}

eval::DepthMetrics run_depth_eval(const models::Checkpoint& ckpt, const std::string& data_dir,
                                  const config::RunConfig& cfg) {
  require_kind(ckpt, {"stage1", "single_stage", "no_freeze"}, "depth");
  data::FrameManifest manifest = data::FrameManifest::load(data_dir);
  data::SceneTruth truth = data::SceneTruth::load(data_dir);
  Rng rng(0);
  models::DepthNet depth = models::DepthNet::create(rng, ckpt.backbone());
  nn::ParamMap dp = depth.params("depth");
  models::load_params(ckpt, dp);
  dp.set_requires_grad(false);

  std::vector<DTensor> preds, gts;
  const int stride = std::max(1, cfg.eval.depth_frame_stride);
  for (int i = 0; i < int(manifest.records.size()); i += stride) {
    Tensor img = io::read_image(manifest.frame_path(i));
    Tensor batch({1, 3, img.dim(1), img.dim(2)});
    std::copy(img.data(), img.data() + img.numel(), batch.data());
    std::vector<ag::Var> disps = depth.forward(ag::constant(std::move(batch)), false);
    ag::Var d = geometry::disparity_to_depth(disps[0], cfg.model.min_depth, cfg.model.max_depth);
    const int h = d->shape()[2], w = d->shape()[3];
    DTensor pd({h, w});
    for (std::int64_t k = 0; k < pd.numel(); ++k) pd[k] = double(d->value[k]);
    ag::release_graph(d);
    for (auto& v : disps) ag::release_graph(v);
    preds.push_back(std::move(pd));
    gts.push_back(truth.depth_frame(i));
  }
  return eval::eval_depth(preds, gts, cfg.eval.clamp_min, cfg.eval.clamp_max);
}

eval::OdometryResult run_odometry_eval(const models::Checkpoint& ckpt, const std::string& data_dir,
                                       const config::RunConfig& cfg) {
  require_kind(ckpt, {"stage1", "no_freeze"}, "odometry");
  data::FrameManifest manifest = data::FrameManifest::load(data_dir);
  data::SceneTruth truth = data::SceneTruth::load(data_dir);
  Rng rng(0);
  models::PoseNet pose = models::PoseNet::create(rng, ckpt.backbone(), cfg.model.motion_scale);
  nn::ParamMap pp = pose.params("pose");
  models::load_params(ckpt, pp);
  pp.set_requires_grad(false);

  data::FrameCache cache;
  std::vector<geometry::RigidTransform> pred, gt;
  for (int i = 0; i + 1 < int(manifest.records.size()); ++i) {
    const auto& a = manifest.records[std::size_t(i)];
    const auto& b = manifest.records[std::size_t(i + 1)];
    if (a.sequence != b.sequence || a.index + 1 != b.index) continue;
    const Tensor fa = cache.get(manifest.frame_path(i));
    const Tensor fb = cache.get(manifest.frame_path(i + 1));
    Tensor ta({1, 3, fa.dim(1), fa.dim(2)}), tb(ta.shape());
    std::copy(fa.data(), fa.data() + fa.numel(), ta.data());
    std::copy(fb.data(), fb.data() + fb.numel(), tb.data());
    models::PoseNet::Out out =
        pose.forward(ag::constant(std::move(ta)), ag::constant(std::move(tb)), false);
    pred.push_back(models::motion_row_to_transform(out.motion->value, 0));
    ag::release_graph(out.motion);
    ag::release_graph(out.intr_raw);
    gt.push_back(truth.motion(i, i + 1));
  }
  return eval::eval_odometry(pred, gt, cfg.eval.snippet_length);
}

eval::PlanningMetrics run_planning_eval(const models::Checkpoint& ckpt,
                                        const std::string& data_dir,
                                        const config::RunConfig& cfg) {
  require_kind(ckpt, {"backbone", "stage2", "single_stage", "pseudo_label", "no_freeze"},
               "planning");
  data::FrameManifest manifest = data::FrameManifest::load(data_dir);
  data::SceneTruth truth = data::SceneTruth::load(data_dir);
  Rng rng(derive_seed(cfg.seed, "planning.backbone"));
  models::VisualEncoder enc =
      models::VisualEncoder::create(rng, ckpt.backbone(), cfg.model.motion_scale);
  nn::ParamMap bb = enc.backbone_params("enc");
  models::load_params(ckpt, bb);
  bb.set_requires_grad(false);

  eval::ProbeDataset ds = eval::build_probe_dataset(manifest, truth, enc, cfg.probe);
  eval::WaypointProbe probe = eval::probe_train(ds, cfg.probe, derive_seed(cfg.seed, "probe"));
  auto maps = eval::build_obstacle_maps(truth, ds, cfg.probe);
  return eval::probe_eval(probe, ds, maps, cfg.probe);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised geometric pre-training for driving policies"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GlobalOpts g_synth, g_pre, g_eval, g_filter, g_export;

  auto* synth = app.add_subcommand("synth", "Render a synthetic driving dataset");
  add_global_opts(synth, g_synth);

  auto* pretrain = app.add_subcommand("pretrain", "Run a pre-training stage");
  int stage = 1;
  std::string data_dir, stage1_ckpt_path, ablation = "none";
  pretrain->add_option("--stage", stage, "Training stage (1 or 2)")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  pretrain->add_option("--data", data_dir, "Dataset directory")->required();
  pretrain->add_option("--stage1-ckpt", stage1_ckpt_path, "Stage-one checkpoint (stage 2)");
  pretrain->add_option("--ablation", ablation, "none|single_stage|no_freeze|pseudo_label")
      ->check(CLI::IsMember({"none", "single_stage", "no_freeze", "pseudo_label"}));
  add_global_opts(pretrain, g_pre);

  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_kind, eval_ckpt, eval_data;
  evalc->add_option("--kind", eval_kind, "depth|odometry|planning")
      ->required()
      ->check(CLI::IsMember({"depth", "odometry", "planning"}));
  evalc->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  evalc->add_option("--data", eval_data, "Dataset directory")->required();
  add_global_opts(evalc, g_eval);

  auto* filter = app.add_subcommand("filter", "Filter frames by motion disagreement");
  std::string f_data, f_stage1, f_encoder;
  double f_threshold = 0.0;
  filter->add_option("--data", f_data, "Dataset directory")->required();
  filter->add_option("--stage1-ckpt", f_stage1, "Stage-one checkpoint")->required();
  filter->add_option("--encoder-ckpt", f_encoder, "Encoder checkpoint")->required();
  filter->add_option("--threshold", f_threshold, "Disagreement threshold")->required();
  add_global_opts(filter, g_filter);

  auto* exportc = app.add_subcommand("export", "Export a backbone-only checkpoint");
  std::string e_ckpt;
  bool e_random = false;
  exportc->add_option("--ckpt", e_ckpt, "Source checkpoint (with an encoder)");
  exportc->add_flag("--random", e_random, "Export a freshly initialized backbone");
  add_global_opts(exportc, g_export);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      config::RunConfig cfg = resolve_config(g_synth);
      write_run_record(g_synth.out, "synth", cfg);
      data::SceneResult result = data::generate_synthetic_scene(cfg.synth, cfg.seed, g_synth.out);
      std::printf("synth: wrote %d frames to %s\n", int(result.manifest.records.size()),
                  g_synth.out.c_str());
      return 0;
    }

    if (pretrain->parsed()) {
      config::RunConfig cfg = resolve_config(g_pre);
      if (stage == 1) {
        if (ablation != "none") {
          std::fprintf(stderr, "error: --ablation is only valid with --stage 2\n");
          return 2;
        }
        write_run_record(g_pre.out, "pretrain-stage1", cfg);
        training::TripletDataset ds = training::TripletDataset::open(data_dir, 0);
        training::Stage1Trainer trainer(ds, cfg, g_pre.out);
        trainer.run();
      } else {
        const training::Stage2Mode mode = training::stage2_mode_from_string(ablation);
        std::optional<models::Checkpoint> s1;
        if (mode == training::Stage2Mode::kSingleStage) {
          if (!stage1_ckpt_path.empty()) {
            std::fprintf(stderr, "error: --ablation single_stage trains from scratch and takes "
                                 "no --stage1-ckpt\n");
            return 2;
          }
        } else {
          if (stage1_ckpt_path.empty()) {
            std::fprintf(stderr, "error: --stage 2 requires --stage1-ckpt\n");
            return 2;
          }
          s1 = models::Checkpoint::load(stage1_ckpt_path);
        }
        cfg.train.ablation = ablation;
        write_run_record(g_pre.out, "pretrain-stage2", cfg);
        training::TripletDataset ds =
            training::TripletDataset::open(data_dir, cfg.train.holdout_every);
        training::Stage2Trainer trainer(ds, cfg, mode, s1 ? &*s1 : nullptr, g_pre.out);
        trainer.run();
      }
      std::printf("pretrain: checkpoint written to %s\n",
                  path_join(g_pre.out, "checkpoint_final.ckpt").c_str());
      return 0;
    }

    if (evalc->parsed()) {
      config::RunConfig cfg = resolve_config(g_eval);
      models::Checkpoint ckpt = models::Checkpoint::load(eval_ckpt);
      write_run_record(g_eval.out, "eval-" + eval_kind, cfg);
      const std::string report_path = path_join(g_eval.out, "report_" + eval_kind + ".json");
      if (eval_kind == "depth") {
        eval::DepthMetrics m = run_depth_eval(ckpt, eval_data, cfg);
        write_text_file(report_path, m.to_json());
        std::printf("abs_rel: %.6f\n", m.abs_rel);
      } else if (eval_kind == "odometry") {
        eval::OdometryResult m = run_odometry_eval(ckpt, eval_data, cfg);
        write_text_file(report_path, m.to_json());
        std::printf("ate_mean: %.6f\n", m.mean);
      } else {
        eval::PlanningMetrics m = run_planning_eval(ckpt, eval_data, cfg);
        write_text_file(report_path, m.to_json());
        std::printf("L2_3s: %.6f\n", m.l2[2]);
      }
      std::printf("report: %s\n", report_path.c_str());
      return 0;
    }

    if (filter->parsed()) {
      config::RunConfig cfg = resolve_config(g_filter);
      write_run_record(g_filter.out, "filter", cfg);
      data::FrameManifest manifest = data::FrameManifest::load(f_data);
      models::Checkpoint s1 = models::Checkpoint::load(f_stage1);
      models::Checkpoint enc = models::Checkpoint::load(f_encoder);
      training::FilterReport report =
          training::filter_samples(manifest, s1, enc, f_threshold, cfg);
      // Rewrite paths relative to the output directory so the filtered
      // manifest validates in place without copying frames.
      data::FrameManifest out_manifest = report.manifest;
      out_manifest.root = g_filter.out;
      for (auto& r : out_manifest.records) {
        const fs::path abs = fs::absolute(path_join(f_data, r.path));
        r.path = fs::relative(abs, fs::absolute(g_filter.out)).string();
      }
      out_manifest.save();
      json jr{{"total", report.total},
              {"removed", report.removed},
              {"fraction", report.fraction()}};
      write_text_file(path_join(g_filter.out, "filter_report.json"), jr.dump(2) + "\n");
      std::printf("filter: removed %d/%d frames (fraction %.6f)\n", report.removed, report.total,
                  report.fraction());
      return 0;
    }

    if (exportc->parsed()) {
      config::RunConfig cfg = resolve_config(g_export);
      ensure_dir(g_export.out);
      const std::string out_path = path_join(g_export.out, "backbone.ckpt");
      if (e_random) {
        Rng rng(derive_seed(cfg.seed, "init.encoder"));
        models::VisualEncoder enc =
            models::VisualEncoder::create(rng, cfg.model.backbone, cfg.model.motion_scale);
        models::export_backbone(enc, cfg.model.backbone, "", out_path);
      } else {
        if (e_ckpt.empty()) {
          std::fprintf(stderr, "error: export requires --ckpt or --random\n");
          return 2;
        }
        models::Checkpoint ckpt = models::Checkpoint::load(e_ckpt);
        require_kind(ckpt, {"stage2", "single_stage", "pseudo_label", "no_freeze"}, "export");
        Rng rng(0);
        models::VisualEncoder enc =
            models::VisualEncoder::create(rng, ckpt.backbone(), cfg.model.motion_scale);
        nn::ParamMap pm = enc.params("enc");
        models::load_params(ckpt, pm);
        models::export_backbone(enc, ckpt.backbone(), ckpt.meta_json, out_path);
      }
      std::printf("export: %s\n", out_path.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
