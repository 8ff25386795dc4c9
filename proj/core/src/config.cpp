#include "geopre/config.hpp"

#include <nlohmann/json.hpp>

#include "geopre/util.hpp"

namespace geopre {
namespace config {

using nlohmann::json;

namespace {

json schedule_to_json(const ScheduleConfig& s) {
  return json{{"type", s.type},         {"lr", s.lr},
              {"drop_epoch", s.drop_epoch}, {"drop_factor", s.drop_factor},
              {"lr_min", s.lr_min},     {"lr_max", s.lr_max},
              {"cycle_steps", s.cycle_steps}};
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["deterministic"] = c.deterministic;
  j["synth"] = {{"num_frames", c.synth.num_frames},
                {"height", c.synth.height},
                {"width", c.synth.width},
                {"fx", c.synth.fx},
                {"fy", c.synth.fy},
                {"cx", c.synth.cx},
                {"cy", c.synth.cy},
                {"frame_rate_hz", c.synth.frame_rate_hz},
                {"motion_profile", c.synth.motion_profile},
                {"speed", c.synth.speed},
                {"road_amplitude", c.synth.road_amplitude},
                {"road_wavelength", c.synth.road_wavelength},
                {"num_billboards", c.synth.num_billboards},
                {"backdrop_distance", c.synth.backdrop_distance},
                {"texture_amplitude", c.synth.texture_amplitude}};
  j["model"] = {{"backbone", c.model.backbone},
                {"motion_scale", c.model.motion_scale},
                {"min_depth", c.model.min_depth},
                {"max_depth", c.model.max_depth}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"stage1_schedule", schedule_to_json(c.train.stage1_schedule)},
                {"stage2_schedule", schedule_to_json(c.train.stage2_schedule)},
                {"loss",
                 {{"alpha", c.train.loss.alpha},
                  {"smooth_weight", c.train.loss.smooth_weight},
                  {"auto_mask", c.train.loss.auto_mask}}},
                {"ablation", c.train.ablation},
                {"augment", c.train.augment},
                {"encoder_input_clean", c.train.encoder_input_clean},
                {"holdout_every", c.train.holdout_every},
                {"log_every", c.train.log_every},
                {"max_steps", c.train.max_steps}};
  j["probe"] = {{"waypoints", c.probe.waypoints},
                {"dt", c.probe.dt},
                {"epochs", c.probe.epochs},
                {"batch_size", c.probe.batch_size},
                {"lr", c.probe.lr},
                {"bottleneck", c.probe.bottleneck},
                {"hidden", c.probe.hidden},
                {"train_fraction", c.probe.train_fraction},
                {"finetune_backbone", c.probe.finetune_backbone},
                {"ego_length", c.probe.ego_length},
                {"ego_width", c.probe.ego_width},
                {"grid_half_width", c.probe.grid_half_width},
                {"grid_forward", c.probe.grid_forward},
                {"grid_resolution", c.probe.grid_resolution}};
  j["eval"] = {{"clamp_min", c.eval.clamp_min},
               {"clamp_max", c.eval.clamp_max},
               {"snippet_length", c.eval.snippet_length},
               {"depth_frame_stride", c.eval.depth_frame_stride}};
  return j;
}

void schedule_from_json(const json& j, ScheduleConfig& s) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "type") s.type = it->get<std::string>();
    else if (k == "lr") s.lr = it->get<double>();
    else if (k == "drop_epoch") s.drop_epoch = it->get<int>();
    else if (k == "drop_factor") s.drop_factor = it->get<double>();
    else if (k == "lr_min") s.lr_min = it->get<double>();
    else if (k == "lr_max") s.lr_max = it->get<double>();
    else if (k == "cycle_steps") s.cycle_steps = it->get<int>();
    else throw std::invalid_argument("config: unknown schedule key '" + k + "'");
  }
}

void overlay(RunConfig& c, const json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = *it;
    if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "deterministic") c.deterministic = v.get<bool>();
    else if (k == "synth") {
      for (auto s = v.begin(); s != v.end(); ++s) {
        const std::string& sk = s.key();
        if (sk == "num_frames") c.synth.num_frames = s->get<int>();
        else if (sk == "height") c.synth.height = s->get<int>();
        else if (sk == "width") c.synth.width = s->get<int>();
        else if (sk == "fx") c.synth.fx = s->get<double>();
        else if (sk == "fy") c.synth.fy = s->get<double>();
        else if (sk == "cx") c.synth.cx = s->get<double>();
        else if (sk == "cy") c.synth.cy = s->get<double>();
        else if (sk == "frame_rate_hz") c.synth.frame_rate_hz = s->get<double>();
        else if (sk == "motion_profile") c.synth.motion_profile = s->get<std::string>();
        else if (sk == "speed") c.synth.speed = s->get<double>();
        else if (sk == "road_amplitude") c.synth.road_amplitude = s->get<double>();
        else if (sk == "road_wavelength") c.synth.road_wavelength = s->get<double>();
        else if (sk == "num_billboards") c.synth.num_billboards = s->get<int>();
        else if (sk == "backdrop_distance") c.synth.backdrop_distance = s->get<double>();
        else if (sk == "texture_amplitude") c.synth.texture_amplitude = s->get<double>();
        else throw std::invalid_argument("config: unknown synth key '" + sk + "'");
      }
    } else if (k == "model") {
      for (auto s = v.begin(); s != v.end(); ++s) {
        const std::string& sk = s.key();
        if (sk == "backbone") c.model.backbone = s->get<std::string>();
        else if (sk == "motion_scale") c.model.motion_scale = s->get<float>();
        else if (sk == "min_depth") c.model.min_depth = s->get<float>();
        else if (sk == "max_depth") c.model.max_depth = s->get<float>();
        else throw std::invalid_argument("config: unknown model key '" + sk + "'");
      }
    } else if (k == "train") {
      for (auto s = v.begin(); s != v.end(); ++s) {
        const std::string& sk = s.key();
        if (sk == "epochs") c.train.epochs = s->get<int>();
        else if (sk == "batch_size") c.train.batch_size = s->get<int>();
        else if (sk == "stage1_schedule") schedule_from_json(*s, c.train.stage1_schedule);
        else if (sk == "stage2_schedule") schedule_from_json(*s, c.train.stage2_schedule);
        else if (sk == "loss") {
          for (auto l = s->begin(); l != s->end(); ++l) {
            const std::string& lk = l.key();
            if (lk == "alpha") c.train.loss.alpha = l->get<float>();
            else if (lk == "smooth_weight") c.train.loss.smooth_weight = l->get<float>();
            else if (lk == "auto_mask") c.train.loss.auto_mask = l->get<bool>();
            else throw std::invalid_argument("config: unknown loss key '" + lk + "'");
          }
        } else if (sk == "ablation") c.train.ablation = s->get<std::string>();
        else if (sk == "augment") c.train.augment = s->get<bool>();
        else if (sk == "encoder_input_clean") c.train.encoder_input_clean = s->get<bool>();
        else if (sk == "holdout_every") c.train.holdout_every = s->get<int>();
        else if (sk == "log_every") c.train.log_every = s->get<int>();
        else if (sk == "max_steps") c.train.max_steps = s->get<int>();
        else throw std::invalid_argument("config: unknown train key '" + sk + "'");
      }
    } else if (k == "probe") {
      for (auto s = v.begin(); s != v.end(); ++s) {
        const std::string& sk = s.key();
        if (sk == "waypoints") c.probe.waypoints = s->get<int>();
        else if (sk == "dt") c.probe.dt = s->get<double>();
        else if (sk == "epochs") c.probe.epochs = s->get<int>();
        else if (sk == "batch_size") c.probe.batch_size = s->get<int>();
        else if (sk == "lr") c.probe.lr = s->get<double>();
        else if (sk == "bottleneck") c.probe.bottleneck = s->get<int>();
        else if (sk == "hidden") c.probe.hidden = s->get<int>();
        else if (sk == "train_fraction") c.probe.train_fraction = s->get<double>();
        else if (sk == "finetune_backbone") c.probe.finetune_backbone = s->get<bool>();
        else if (sk == "ego_length") c.probe.ego_length = s->get<double>();
        else if (sk == "ego_width") c.probe.ego_width = s->get<double>();
        else if (sk == "grid_half_width") c.probe.grid_half_width = s->get<double>();
        else if (sk == "grid_forward") c.probe.grid_forward = s->get<double>();
        else if (sk == "grid_resolution") c.probe.grid_resolution = s->get<double>();
        else throw std::invalid_argument("config: unknown probe key '" + sk + "'");
      }
    } else if (k == "eval") {
      for (auto s = v.begin(); s != v.end(); ++s) {
        const std::string& sk = s.key();
        if (sk == "clamp_min") c.eval.clamp_min = s->get<double>();
        else if (sk == "clamp_max") c.eval.clamp_max = s->get<double>();
        else if (sk == "snippet_length") c.eval.snippet_length = s->get<int>();
        else if (sk == "depth_frame_stride") c.eval.depth_frame_stride = s->get<int>();
        else throw std::invalid_argument("config: unknown eval key '" + sk + "'");
      }
    } else {
      throw std::invalid_argument("config: unknown top-level key '" + k + "'");
    }
  }
}

json parse_scalar(const std::string& text) {
  // Typed literals first, string fallback.
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace

RunConfig from_json_text(const std::string& text) {
  RunConfig cfg;
  overlay(cfg, json::parse(text));
  return cfg;
}

RunConfig load(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) {
    overlay(cfg, json::parse(read_text_file(config_path)));
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& dotted_assignment) {
  const auto eq = dotted_assignment.find('=');
  check_arg(eq != std::string::npos && eq > 0,
            "override must look like section.key=value, got '" + dotted_assignment + "'");
  const std::string path = dotted_assignment.substr(0, eq);
  const std::string value = dotted_assignment.substr(eq + 1);
  // Build a nested single-key document and overlay it.
  json patch = parse_scalar(value);
  std::size_t end = path.size();
  while (true) {
    const auto dot = path.rfind('.', end - 1);
    const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    check_arg(!key.empty(), "override has an empty path segment: '" + dotted_assignment + "'");
    patch = json{{key, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  overlay(cfg, patch);
}

std::string to_json_text(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void resolve_intrinsics(SynthConfig& synth) {
  if (synth.fx <= 0) synth.fx = 0.58 * synth.width;
  if (synth.fy <= 0) synth.fy = synth.fx;
  if (synth.cx <= 0) synth.cx = 0.5 * synth.width;
  if (synth.cy <= 0) synth.cy = 0.5 * synth.height;
}

}  // namespace config
}  // namespace geopre
