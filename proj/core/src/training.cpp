#include "geopre/training.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>

#include "geopre/io.hpp"
#include "geopre/util.hpp"

namespace geopre {
namespace training {

using nlohmann::json;

TripletDataset TripletDataset::open(const std::string& root, int holdout_every) {
  TripletDataset ds;
  ds.manifest = data::FrameManifest::load(root);
  ds.manifest.validate();
  ds.cache = std::make_unique<data::FrameCache>();
  const std::vector<int> all = ds.manifest.triplet_positions();
  check_state(!all.empty(), "dataset yields no valid triplets: " + root);
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (holdout_every > 0 && int(i) % holdout_every == holdout_every - 1) {
      ds.holdout_positions.push_back(all[i]);
    } else {
      ds.train_positions.push_back(all[i]);
    }
  }
  check_state(!ds.train_positions.empty(), "dataset has no training triplets after holdout");
  return ds;
}

namespace {

struct FrameShape {
  int h = 0, w = 0;
};

FrameShape probe_shape(const data::FrameManifest& m) {
  const Tensor img = io::read_image(m.frame_path(0));
  return {img.dim(1), img.dim(2)};
}

}  // namespace

int TripletDataset::frame_height() const { return probe_shape(manifest).h; }
int TripletDataset::frame_width() const { return probe_shape(manifest).w; }

MetricsWriter::MetricsWriter(const std::string& path, bool zero_walltime)
    : path_(path), zero_walltime_(zero_walltime) {
  if (!path_.empty()) {
    std::ofstream f(path_, std::ios::trunc);
    check_state(f.good(), "cannot open metrics file: " + path_);
  }
}

void MetricsWriter::log(const StepStats& s) {
  json j{{"step", s.step},
         {"epoch", s.epoch},
         {"loss", s.loss},
         {"pe", s.photometric},
         {"smooth", s.smoothness},
         {"lr", s.lr},
         {"mask", s.mask_fraction},
         {"wall_ms", zero_walltime_ ? 0.0 : s.wall_ms}};
  const std::string line = j.dump() + "\n";
  history_ += line;
  if (!path_.empty()) {
    std::ofstream f(path_, std::ios::app);
    f << line;
  }
}

double schedule_lr(const config::ScheduleConfig& s, int epoch, int total_epochs,
                   std::int64_t step, std::int64_t total_steps) {
  if (s.type == "const") return s.lr;
  if (s.type == "step") {
    int drop = s.drop_epoch;
    if (drop < 0) drop = int(std::floor(double(total_epochs) * 25.0 / 30.0));
    return epoch >= drop ? s.lr * s.drop_factor : s.lr;
  }
  if (s.type == "cyclic") {
    std::int64_t cycle = s.cycle_steps > 0 ? s.cycle_steps : std::max<std::int64_t>(total_steps, 2);
    const double phase = double(step % cycle) / double(cycle);
    const double tri = phase < 0.5 ? 2.0 * phase : 2.0 * (1.0 - phase);
    return s.lr_min + (s.lr_max - s.lr_min) * tri;
  }
  throw std::invalid_argument("unknown schedule type: " + s.type);
}

namespace {

struct Batch {
  ag::Var prev, target, next;              // clean
  ag::Var prev_aug, target_aug, next_aug;  // augmented
  std::vector<int> positions;
  int size = 0;
};

Tensor stack_images(const std::vector<Tensor>& imgs) {
  const int n = int(imgs.size());
  const int c = imgs[0].dim(0), h = imgs[0].dim(1), w = imgs[0].dim(2);
  Tensor out({n, c, h, w});
  const std::int64_t chw = std::int64_t(c) * h * w;
  for (int i = 0; i < n; ++i) {
    std::copy(imgs[i].data(), imgs[i].data() + chw, out.data() + std::int64_t(i) * chw);
  }
  return out;
}

Batch make_batch(TripletDataset& ds, const std::vector<int>& positions, std::uint64_t seed,
                 int epoch, bool augment) {
  std::vector<Tensor> p, t, n, pa, ta, na;
  for (int pos : positions) {
    const std::uint64_t aug_seed =
        derive_seed(seed, "augment", std::uint64_t(epoch), std::uint64_t(pos));
    data::FrameTriplet trip =
        data::sample_triplet(ds.manifest, pos, aug_seed, ds.cache.get(), augment);
    p.push_back(std::move(trip.prev));
    t.push_back(std::move(trip.target));
    n.push_back(std::move(trip.next));
    pa.push_back(std::move(trip.prev_aug));
    ta.push_back(std::move(trip.target_aug));
    na.push_back(std::move(trip.next_aug));
  }
  Batch b;
  b.positions = positions;
  b.size = int(positions.size());
  b.prev = ag::constant(stack_images(p));
  b.target = ag::constant(stack_images(t));
  b.next = ag::constant(stack_images(n));
  b.prev_aug = ag::constant(stack_images(pa));
  b.target_aug = ag::constant(stack_images(ta));
  b.next_aug = ag::constant(stack_images(na));
  return b;
}

geometry::Se3Var motion_to_se3(const ag::Var& motion, bool invert) {
  using namespace ag;
  return geometry::se3_from_params(slice_cols(motion, 0, 3), slice_cols(motion, 3, 6), invert);
}

geometry::IntrinsicsVar average_intrinsics(const geometry::IntrinsicsVar& a,
                                           const geometry::IntrinsicsVar& b) {
  using namespace ag;
  geometry::IntrinsicsVar k;
  k.fx = smul(add(a.fx, b.fx), 0.5f);
  k.fy = smul(add(a.fy, b.fy), 0.5f);
  k.cx = smul(add(a.cx, b.cx), 0.5f);
  k.cy = smul(add(a.cy, b.cy), 0.5f);
  k.width = a.width;
  k.height = a.height;
  return k;
}

struct ReconLossOut {
  ag::Var total;  // scalar graph root
  double photometric = 0, smoothness = 0, mask_fraction = 0;
};

// Shared multi-scale reconstruction objective. Disparities are upsampled to
// full resolution before any loss is computed; smoothness (when enabled)
// uses weight smooth_weight * 2^-s at scale s; the total is the mean over
// scales.
ReconLossOut reconstruction_loss(const std::vector<ag::Var>& disps, const Batch& batch,
                                 const geometry::IntrinsicsVar& K, const geometry::Se3Var& t_prev,
                                 const geometry::Se3Var& t_next, const config::LossConfig& loss_cfg,
                                 const config::ModelConfig& model_cfg, bool with_smoothness) {
  using namespace ag;
  const int h = batch.target->shape()[2], w = batch.target->shape()[3];
  constexpr float kInvalidPenalty = 1e4f;

  // Identity errors depend only on the clean frames; compute once.
  Var id_prev = photometry::photometric_error(batch.target, batch.prev, loss_cfg.alpha);
  Var id_next = photometry::photometric_error(batch.target, batch.next, loss_cfg.alpha);

  ReconLossOut out;
  Var total;
  const int num_scales = int(disps.size());
  for (int s = 0; s < num_scales; ++s) {
    Var disp = s == 0 ? disps[0] : upsample_bilinear(disps[s], h, w);
    Var depth = geometry::disparity_to_depth(disp, model_cfg.min_depth, model_cfg.max_depth);

    std::vector<Var> errs;
    Tensor valid_any;
    for (int src = 0; src < 2; ++src) {
      const geometry::Se3Var& T = src == 0 ? t_prev : t_next;
      const Var& source = src == 0 ? batch.prev : batch.next;
      geometry::ReprojectOut proj = geometry::reproject_grid(depth, K, T);
      Var recon = geometry::warp_bilinear(source, proj.grid);
      Var err = photometry::photometric_error(batch.target, recon, loss_cfg.alpha);
      // Out-of-frustum pixels must never win the per-pixel minimum.
      Tensor penalty(proj.valid.shape());
      for (std::int64_t i = 0; i < penalty.numel(); ++i) {
        penalty[i] = proj.valid[i] > 0.0f ? 0.0f : kInvalidPenalty;
      }
      errs.push_back(add(err, constant(std::move(penalty))));
      if (src == 0) {
        valid_any = proj.valid;
      } else {
        for (std::int64_t i = 0; i < valid_any.numel(); ++i) {
          valid_any[i] = std::max(valid_any[i], proj.valid[i]);
        }
      }
    }

    Var scale_loss;
    double mask_fraction = 1.0;
    if (loss_cfg.auto_mask) {
      photometry::AggregateResult agg = photometry::aggregate_reprojection(errs, {id_prev, id_next});
      scale_loss = agg.loss;
      mask_fraction = agg.mask_fraction;
    } else {
      Var min_err = minimum(errs[0], errs[1]);
      scale_loss = masked_mean(min_err, valid_any);
      double kept = 0;
      for (std::int64_t i = 0; i < valid_any.numel(); ++i) kept += valid_any[i] > 0.0f;
      mask_fraction = kept / double(valid_any.numel());
    }
    out.photometric += scale_loss->value[0] / num_scales;
    out.mask_fraction += mask_fraction / num_scales;

    if (with_smoothness) {
      Var sm = photometry::smoothness_loss(disp, batch.target);
      const float weight = loss_cfg.smooth_weight / float(1 << s);
      out.smoothness += double(weight) * sm->value[0] / num_scales;
      scale_loss = add(scale_loss, smul(sm, weight));
    }
    total = total ? add(total, scale_loss) : scale_loss;
  }
  out.total = smul(total, 1.0f / float(num_scales));
  return out;
}

void dump_bad_batch(const std::string& out_dir, const Batch& batch, std::int64_t step) {
  if (out_dir.empty()) return;
  const std::string path = path_join(out_dir, "nonfinite_batch.npz");
  json meta{{"step", step}, {"positions", batch.positions}};
  io::write_npz(path, {{"target", batch.target->value},
                       {"prev", batch.prev->value},
                       {"next", batch.next->value}});
  write_text_file(path_join(out_dir, "nonfinite_batch.json"), meta.dump(2) + "\n");
}

std::vector<int> shuffled_positions(const std::vector<int>& positions, std::uint64_t seed,
                                    int epoch) {
  std::vector<int> order = positions;
  Rng rng(derive_seed(seed, "shuffle", std::uint64_t(epoch)));
  rng.shuffle(order);
  return order;
}

std::int64_t steps_per_epoch(std::size_t n, int batch) {
  return std::int64_t((n + std::size_t(batch) - 1) / std::size_t(batch));
}

std::vector<int> batch_positions(const std::vector<int>& order, int step_in_epoch, int batch) {
  const std::size_t b0 = std::size_t(step_in_epoch) * std::size_t(batch);
  const std::size_t b1 = std::min(order.size(), b0 + std::size_t(batch));
  return std::vector<int>(order.begin() + std::ptrdiff_t(b0), order.begin() + std::ptrdiff_t(b1));
}

}  // namespace

// ---- Stage One ----

Stage1Trainer::Stage1Trainer(TripletDataset& dataset, const config::RunConfig& cfg,
                             const std::string& out_dir)
    : data_(dataset), cfg_(cfg), out_dir_(out_dir) {
  Rng depth_rng(derive_seed(cfg.seed, "init.depth"));
  Rng pose_rng(derive_seed(cfg.seed, "init.pose"));
  depth_ = models::DepthNet::create(depth_rng, cfg.model.backbone);
  pose_ = models::PoseNet::create(pose_rng, cfg.model.backbone, cfg.model.motion_scale);
  depth_params_ = depth_.params("depth");
  pose_params_ = pose_.params("pose");
  nn::ParamMap all = depth_params_;
  all.merge(pose_params_);
  nn::AdamParams hp;  // first-moment adaptive optimizer, no weight decay
  opt_ = std::make_unique<nn::Adam>(all.param_vars(), hp);
  total_steps_ = steps_per_epoch(data_.train_positions.size(), cfg.train.batch_size) *
                 cfg_.train.epochs;
  if (!out_dir_.empty()) {
    ensure_dir(out_dir_);
    metrics_ = std::make_unique<MetricsWriter>(path_join(out_dir_, "metrics.jsonl"),
                                               cfg_.deterministic);
  } else {
    metrics_ = std::make_unique<MetricsWriter>("", cfg_.deterministic);
  }
}

std::vector<int> Stage1Trainer::epoch_order(int epoch) const {
  return shuffled_positions(data_.train_positions, cfg_.seed, epoch);
}

bool Stage1Trainer::done() const {
  if (cfg_.train.max_steps > 0 && global_step_ >= cfg_.train.max_steps) return true;
  return epoch_ >= cfg_.train.epochs;
}

StepStats Stage1Trainer::step_once() {
  check_state(!done(), "Stage1Trainer: training already finished");
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<int> order = epoch_order(epoch_);
  const std::vector<int> positions =
      batch_positions(order, step_in_epoch_, cfg_.train.batch_size);
  Batch batch = make_batch(data_, positions, cfg_.seed, epoch_, cfg_.train.augment);

  std::vector<ag::Var> disps = depth_.forward(batch.target_aug, true);
  models::PoseNet::Out to_prev = pose_.forward(batch.target_aug, batch.prev_aug, true);
  models::PoseNet::Out to_next = pose_.forward(batch.target_aug, batch.next_aug, true);
  const int w = batch.target->shape()[3], h = batch.target->shape()[2];
  geometry::IntrinsicsVar K =
      average_intrinsics(models::decode_intrinsics(to_prev.intr_raw, w, h),
                         models::decode_intrinsics(to_next.intr_raw, w, h));
  geometry::Se3Var t_prev = motion_to_se3(to_prev.motion, false);
  geometry::Se3Var t_next = motion_to_se3(to_next.motion, false);

  ReconLossOut loss = reconstruction_loss(disps, batch, K, t_prev, t_next, cfg_.train.loss,
                                          cfg_.model, /*with_smoothness=*/true);

  StepStats st;
  st.step = global_step_;
  st.epoch = epoch_;
  st.loss = loss.total->value[0];
  st.photometric = loss.photometric;
  st.smoothness = loss.smoothness;
  st.mask_fraction = loss.mask_fraction;
  st.lr = schedule_lr(cfg_.train.stage1_schedule, epoch_, cfg_.train.epochs, global_step_,
                      total_steps_);
  if (!std::isfinite(st.loss)) {
    dump_bad_batch(out_dir_, batch, global_step_);
    ag::release_graph(loss.total);
    throw std::runtime_error("stage one: non-finite loss at step " + std::to_string(global_step_) +
                             (out_dir_.empty() ? "" : "; offending batch saved to " + out_dir_));
  }

  opt_->zero_grad();
  ag::backward(loss.total);
  opt_->step(float(st.lr));

  ++global_step_;
  ++step_in_epoch_;
  if (step_in_epoch_ >= steps_per_epoch(data_.train_positions.size(), cfg_.train.batch_size)) {
    step_in_epoch_ = 0;
    ++epoch_;
  }
  st.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (cfg_.train.log_every > 0 && (st.step % cfg_.train.log_every == 0)) metrics_->log(st);
  return st;
}

void Stage1Trainer::run() {
  while (!done()) step_once();
  if (!out_dir_.empty()) {
    make_checkpoint().save(path_join(out_dir_, "checkpoint_final.ckpt"));
  }
}

namespace {

void store_optimizer(models::Checkpoint& ckpt, const nn::Adam& opt, const nn::ParamMap& pm) {
  const auto& m = opt.m();
  const auto& v = opt.v();
  for (std::size_t i = 0; i < pm.params.size(); ++i) {
    ckpt.tensors["opt.m." + pm.params[i].first] = m[i];
    ckpt.tensors["opt.v." + pm.params[i].first] = v[i];
  }
}

void restore_optimizer(const models::Checkpoint& ckpt, nn::Adam& opt, const nn::ParamMap& pm,
                       std::int64_t t) {
  std::vector<Tensor> m, v;
  for (const auto& [name, var] : pm.params) {
    auto im = ckpt.tensors.find("opt.m." + name);
    auto iv = ckpt.tensors.find("opt.v." + name);
    check_state(im != ckpt.tensors.end() && iv != ckpt.tensors.end(),
                "checkpoint missing optimizer state for " + name);
    m.push_back(im->second);
    v.push_back(iv->second);
  }
  opt.restore(std::move(m), std::move(v), t);
}

json trainer_meta(const std::string& kind, const config::RunConfig& cfg, int h, int w, int epoch,
                  int step_in_epoch, std::int64_t global_step, std::int64_t adam_t) {
  json meta;
  meta["schema_version"] = models::Checkpoint::kSchemaVersion;
  meta["kind"] = kind;
  meta["backbone"] = cfg.model.backbone;
  meta["image_size"] = {h, w};
  meta["motion_scale"] = cfg.model.motion_scale;
  meta["depth_range"] = {cfg.model.min_depth, cfg.model.max_depth};
  meta["epoch"] = epoch;
  meta["step_in_epoch"] = step_in_epoch;
  meta["global_step"] = global_step;
  meta["adam_t"] = adam_t;
  return meta;
}

}  // namespace

models::Checkpoint Stage1Trainer::make_checkpoint() const {
  models::Checkpoint ckpt;
  json meta = trainer_meta("stage1", cfg_, data_.frame_height(), data_.frame_width(), epoch_,
                           step_in_epoch_, global_step_, opt_->step_count());
  ckpt.meta_json = meta.dump(2);
  ckpt.config_json = config::to_json_text(cfg_);
  ckpt.metrics_jsonl = metrics_->history();
  models::store_params(ckpt, depth_params_);
  models::store_params(ckpt, pose_params_);
  nn::ParamMap all = depth_params_;
  all.merge(pose_params_);
  store_optimizer(ckpt, *opt_, all);
  return ckpt;
}

void Stage1Trainer::restore(const models::Checkpoint& ckpt) {
  check_state(ckpt.kind() == "stage1", "Stage1Trainer: checkpoint kind mismatch, found '" +
                                           ckpt.kind() + "'");
  models::load_params(ckpt, depth_params_);
  models::load_params(ckpt, pose_params_);
  nn::ParamMap all = depth_params_;
  all.merge(pose_params_);
  restore_optimizer(ckpt, *opt_, all, std::int64_t(ckpt.meta_num("adam_t", 0)));
  epoch_ = int(ckpt.meta_num("epoch", 0));
  step_in_epoch_ = int(ckpt.meta_num("step_in_epoch", 0));
  global_step_ = std::int64_t(ckpt.meta_num("global_step", 0));
}

// ---- Stage Two ----

Stage2Mode stage2_mode_from_string(const std::string& name) {
  if (name == "none" || name == "default") return Stage2Mode::kDefault;
  if (name == "no_freeze") return Stage2Mode::kNoFreeze;
  if (name == "pseudo_label") return Stage2Mode::kPseudoLabel;
  if (name == "single_stage") return Stage2Mode::kSingleStage;
  throw std::invalid_argument("unknown ablation mode: " + name);
}

namespace {

std::string stage2_kind(Stage2Mode mode) {
  switch (mode) {
    case Stage2Mode::kDefault: return "stage2";
    case Stage2Mode::kNoFreeze: return "no_freeze";
    case Stage2Mode::kPseudoLabel: return "pseudo_label";
    case Stage2Mode::kSingleStage: return "single_stage";
  }
  return "stage2";
}

}  // namespace

Stage2Trainer::Stage2Trainer(TripletDataset& dataset, const config::RunConfig& cfg,
                             Stage2Mode mode, const models::Checkpoint* stage1_ckpt,
                             const std::string& out_dir)
    : data_(dataset), cfg_(cfg), mode_(mode), out_dir_(out_dir) {
  Rng enc_rng(derive_seed(cfg.seed, "init.encoder"));
  encoder_ = models::VisualEncoder::create(enc_rng, cfg.model.backbone, cfg.model.motion_scale);
  trainable_ = encoder_.params("enc");

  if (mode_ == Stage2Mode::kSingleStage) {
    check_arg(stage1_ckpt == nullptr, "single_stage ablation does not take a stage-one checkpoint");
    Rng depth_rng(derive_seed(cfg.seed, "init.depth"));
    depth_ = std::make_unique<models::DepthNet>(
        models::DepthNet::create(depth_rng, cfg.model.backbone));
    nn::ParamMap dp = depth_->params("depth");
    trainable_.merge(dp);
    intr_raw_param_ = ag::parameter(Tensor::zeros({1, 4}));
    trainable_.add("intrinsics.raw", intr_raw_param_);
  } else {
    check_arg(stage1_ckpt != nullptr, "stage two requires a stage-one checkpoint");
    check_state(stage1_ckpt->kind() == "stage1",
                "stage two expects a stage1 checkpoint, found '" + stage1_ckpt->kind() + "'");
    const std::string bb = stage1_ckpt->backbone();
    check_state(bb == cfg.model.backbone,
                "backbone mismatch: config " + cfg.model.backbone + " vs checkpoint " + bb);
    Rng depth_rng(derive_seed(cfg.seed, "init.depth"));
    Rng pose_rng(derive_seed(cfg.seed, "init.pose"));
    depth_ = std::make_unique<models::DepthNet>(
        models::DepthNet::create(depth_rng, cfg.model.backbone));
    pose_ = std::make_unique<models::PoseNet>(
        models::PoseNet::create(pose_rng, cfg.model.backbone, cfg.model.motion_scale));
    nn::ParamMap dp = depth_->params("depth");
    nn::ParamMap pp = pose_->params("pose");
    models::load_params(*stage1_ckpt, dp);
    models::load_params(*stage1_ckpt, pp);
    if (mode_ == Stage2Mode::kNoFreeze) {
      trainable_.merge(dp);
      trainable_.merge(pp);
    } else {
      frozen_map_ = dp;
      frozen_map_.merge(pp);
      frozen_map_.set_requires_grad(false);
      frozen_params_ = frozen_map_.param_vars();
    }
  }

  nn::AdamParams hp;  // decoupled-weight-decay optimizer
  hp.decoupled = true;
  hp.weight_decay = 1e-2f;
  opt_ = std::make_unique<nn::Adam>(trainable_.param_vars(), hp);
  total_steps_ = steps_per_epoch(data_.train_positions.size(), cfg_.train.batch_size) *
                 cfg_.train.epochs;
  if (!out_dir_.empty()) {
    ensure_dir(out_dir_);
    metrics_ = std::make_unique<MetricsWriter>(path_join(out_dir_, "metrics.jsonl"),
                                               cfg_.deterministic);
  } else {
    metrics_ = std::make_unique<MetricsWriter>("", cfg_.deterministic);
  }
}

std::vector<int> Stage2Trainer::epoch_order(int epoch) const {
  return shuffled_positions(data_.train_positions, cfg_.seed, epoch);
}

bool Stage2Trainer::done() const {
  if (cfg_.train.max_steps > 0 && global_step_ >= cfg_.train.max_steps) return true;
  return epoch_ >= cfg_.train.epochs;
}

std::string Stage2Trainer::frozen_digest() const { return frozen_map_.digest(); }

geometry::IntrinsicsVar Stage2Trainer::batch_intrinsics(const ag::Var& target, const ag::Var& prev,
                                                        const ag::Var& next, bool training) {
  const int h = target->shape()[2], w = target->shape()[3];
  if (mode_ == Stage2Mode::kSingleStage) {
    return models::decode_intrinsics(ag::repeat_rows(intr_raw_param_, target->shape()[0]), w, h);
  }
  // Per-sample intrinsics from the (frozen by default) PoseNet heads,
  // averaged over the two pair evaluations as in stage one.
  models::PoseNet::Out a = pose_->forward(target, prev, training);
  models::PoseNet::Out b = pose_->forward(target, next, training);
  return average_intrinsics(models::decode_intrinsics(a.intr_raw, w, h),
                            models::decode_intrinsics(b.intr_raw, w, h));
}

StepStats Stage2Trainer::step_once() {
  using namespace ag;
  check_state(!done(), "Stage2Trainer: training already finished");
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<int> order = epoch_order(epoch_);
  const std::vector<int> positions =
      batch_positions(order, step_in_epoch_, cfg_.train.batch_size);
  Batch batch = make_batch(data_, positions, cfg_.seed, epoch_, cfg_.train.augment);

  const Var enc_target_in = cfg_.train.encoder_input_clean ? batch.target : batch.target_aug;
  const Var enc_prev_in = cfg_.train.encoder_input_clean ? batch.prev : batch.prev_aug;

  // T_{t -> t+1} from the current frame; T_{t -> t-1} by inverting the
  // previous frame's predicted forward motion.
  models::VisualEncoder::Out enc_t = encoder_.forward(enc_target_in, true);
  models::VisualEncoder::Out enc_p = encoder_.forward(enc_prev_in, true);

  StepStats st;
  st.step = global_step_;
  st.epoch = epoch_;
  st.lr = schedule_lr(cfg_.train.stage2_schedule, epoch_, cfg_.train.epochs, global_step_,
                      total_steps_);

  Var total;
  if (mode_ == Stage2Mode::kPseudoLabel) {
    // Direct 6-DoF supervision from the frozen PoseNet; the dense warp path
    // is never invoked in this mode.
    models::PoseNet::Out lbl_next = pose_->forward(batch.target_aug, batch.next_aug, false);
    models::PoseNet::Out lbl_prev = pose_->forward(batch.prev_aug, batch.target_aug, false);
    Var l1_next = mean_all(abs_op(sub(enc_t.motion, detach(lbl_next.motion))));
    Var l1_prev = mean_all(abs_op(sub(enc_p.motion, detach(lbl_prev.motion))));
    total = smul(add(l1_next, l1_prev), 0.5f);
    st.photometric = total->value[0];
    st.mask_fraction = 0.0;
  } else {
    const bool geom_training = mode_ == Stage2Mode::kNoFreeze || mode_ == Stage2Mode::kSingleStage;
    std::vector<Var> disps = depth_->forward(batch.target_aug, geom_training);
    geometry::IntrinsicsVar K =
        batch_intrinsics(batch.target_aug, batch.prev_aug, batch.next_aug, geom_training);
    geometry::Se3Var t_prev = motion_to_se3(enc_p.motion, /*invert=*/true);
    geometry::Se3Var t_next = motion_to_se3(enc_t.motion, /*invert=*/false);
    // Smoothness is omitted: in the default recipe its gradient would reach
    // only frozen parameters; single-stage keeps it since DepthNet trains
    // from scratch there.
    const bool with_smooth = mode_ == Stage2Mode::kSingleStage;
    ReconLossOut loss = reconstruction_loss(disps, batch, K, t_prev, t_next, cfg_.train.loss,
                                            cfg_.model, with_smooth);
    total = loss.total;
    st.photometric = loss.photometric;
    st.smoothness = loss.smoothness;
    st.mask_fraction = loss.mask_fraction;
  }

  st.loss = total->value[0];
  if (!std::isfinite(st.loss)) {
    dump_bad_batch(out_dir_, batch, global_step_);
    ag::release_graph(total);
    throw std::runtime_error("stage two: non-finite loss at step " + std::to_string(global_step_) +
                             (out_dir_.empty() ? "" : "; offending batch saved to " + out_dir_));
  }

  opt_->zero_grad();
  ag::backward(total);
  if (!frozen_params_.empty()) {
    // Freeze contract: any gradient on a frozen parameter is a hard failure.
    const double gn = nn::accumulated_grad_norm(frozen_params_);
    check_state(gn == 0.0, "stage two: gradient leaked into frozen parameters (norm " +
                               std::to_string(gn) + ")");
  }
  opt_->step(float(st.lr));

  ++global_step_;
  ++step_in_epoch_;
  if (step_in_epoch_ >= steps_per_epoch(data_.train_positions.size(), cfg_.train.batch_size)) {
    step_in_epoch_ = 0;
    ++epoch_;
  }
  st.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (cfg_.train.log_every > 0 && (st.step % cfg_.train.log_every == 0)) metrics_->log(st);
  return st;
}

void Stage2Trainer::run() {
  const std::string digest_before = frozen_digest();
  while (!done()) step_once();
  if (mode_ == Stage2Mode::kDefault || mode_ == Stage2Mode::kPseudoLabel) {
    check_state(frozen_digest() == digest_before,
                "stage two: frozen parameter digest changed during training");
  }
  if (!out_dir_.empty()) {
    make_checkpoint().save(path_join(out_dir_, "checkpoint_final.ckpt"));
  }
}

models::Checkpoint Stage2Trainer::make_checkpoint() const {
  models::Checkpoint ckpt;
  json meta = trainer_meta(stage2_kind(mode_), cfg_, data_.frame_height(), data_.frame_width(),
                           epoch_, step_in_epoch_, global_step_, opt_->step_count());
  meta["frozen_digest"] = frozen_map_.params.empty() ? "" : frozen_map_.digest();
  ckpt.meta_json = meta.dump(2);
  ckpt.config_json = config::to_json_text(cfg_);
  ckpt.metrics_jsonl = metrics_->history();
  models::store_params(ckpt, trainable_);
  if (!frozen_map_.params.empty()) models::store_params(ckpt, frozen_map_);
  if (mode_ == Stage2Mode::kNoFreeze) {
    // Geometry nets are part of the trainable map already.
  }
  store_optimizer(ckpt, *opt_, trainable_);
  return ckpt;
}

void Stage2Trainer::restore(const models::Checkpoint& ckpt) {
  check_state(ckpt.kind() == stage2_kind(mode_),
              "Stage2Trainer: checkpoint kind mismatch: expected " + stage2_kind(mode_) +
                  ", found " + ckpt.kind());
  models::load_params(ckpt, trainable_);
  if (!frozen_map_.params.empty()) models::load_params(ckpt, frozen_map_);
  restore_optimizer(ckpt, *opt_, trainable_, std::int64_t(ckpt.meta_num("adam_t", 0)));
  epoch_ = int(ckpt.meta_num("epoch", 0));
  step_in_epoch_ = int(ckpt.meta_num("step_in_epoch", 0));
  global_step_ = std::int64_t(ckpt.meta_num("global_step", 0));
}

// ---- sample filtering ----

FilterReport filter_samples(const data::FrameManifest& manifest,
                            const models::Checkpoint& stage1_ckpt,
                            const models::Checkpoint& encoder_ckpt, double threshold,
                            const config::RunConfig& cfg) {
  check_arg(threshold > 0.0, "filter_samples: threshold must be positive");
  check_state(stage1_ckpt.kind() == "stage1", "filter_samples: first checkpoint must be stage1");

  Rng pose_rng(0);
  models::PoseNet pose =
      models::PoseNet::create(pose_rng, stage1_ckpt.backbone(), cfg.model.motion_scale);
  nn::ParamMap pp = pose.params("pose");
  models::load_params(stage1_ckpt, pp);

  Rng enc_rng(0);
  models::VisualEncoder enc =
      models::VisualEncoder::create(enc_rng, encoder_ckpt.backbone(), cfg.model.motion_scale);
  nn::ParamMap ep = enc.params("enc");
  models::load_params(encoder_ckpt, ep);
  pp.set_requires_grad(false);
  ep.set_requires_grad(false);

  data::FrameCache cache;
  FilterReport report;
  report.manifest.root = manifest.root;
  report.total = int(manifest.records.size());

  for (int i = 0; i < int(manifest.records.size()); ++i) {
    const auto& rec = manifest.records[std::size_t(i)];
    // Forward pair when available, backward pair otherwise; isolated frames
    // cannot be scored and are kept.
    int a = -1, b = -1;
    if (i + 1 < int(manifest.records.size())) {
      const auto& nx = manifest.records[std::size_t(i + 1)];
      if (nx.sequence == rec.sequence && nx.index == rec.index + 1) { a = i; b = i + 1; }
    }
    if (a < 0 && i > 0) {
      const auto& pv = manifest.records[std::size_t(i - 1)];
      if (pv.sequence == rec.sequence && pv.index + 1 == rec.index) { a = i - 1; b = i; }
    }
    bool keep = true;
    if (a >= 0) {
      const Tensor fa = cache.get(manifest.frame_path(a));
      const Tensor fb = cache.get(manifest.frame_path(b));
      Tensor pair_a({1, 3, fa.dim(1), fa.dim(2)});
      Tensor pair_b(pair_a.shape());
      std::copy(fa.data(), fa.data() + fa.numel(), pair_a.data());
      std::copy(fb.data(), fb.data() + fb.numel(), pair_b.data());
      ag::Var va = ag::constant(std::move(pair_a));
      ag::Var vb = ag::constant(std::move(pair_b));
      models::PoseNet::Out po = pose.forward(va, vb, false);
      models::VisualEncoder::Out eo = enc.forward(va, false);
      const geometry::RigidTransform tp = models::motion_row_to_transform(po.motion->value, 0);
      const geometry::RigidTransform te = models::motion_row_to_transform(eo.motion->value, 0);
      ag::release_graph(po.motion);
      ag::release_graph(po.intr_raw);
      ag::release_graph(eo.motion);
      ag::release_graph(eo.embedding);
      const double dist =
          (tp.translation - te.translation).norm() +
          1.0 * geometry::RigidTransform::from_matrix(tp.matrix().inverse() * te.matrix())
                    .rotation_angle();
      keep = dist <= threshold;
    }
    if (keep) report.manifest.records.push_back(rec);
  }
  report.removed = report.total - int(report.manifest.records.size());
  check_state(!report.manifest.records.empty(),
              "filter_samples: threshold " + format_double(threshold) + " removed every frame");
  return report;
}

}  // namespace training
}  // namespace geopre
