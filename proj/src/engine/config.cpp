#include "stretchlab/engine/config.hpp"

#include <fstream>

#include "nlohmann/json.hpp"
#include "stretchlab/core/errors.hpp"

namespace stretchlab::engine {

using nlohmann::json;

void ModelConfig::validate() const {
  if (bev_channels <= 0) throw ConfigError("model: bev_channels must be > 0");
  if (enc_channels <= 0 || latent_channels <= 0 || z_channels <= 0)
    throw ConfigError("model: channel counts must be positive");
  if (img_width <= 0 || enc_width <= 0 || dec_width <= 0 || net_width <= 0 ||
      gru_hidden <= 0 || head_width <= 0 || label_width <= 0)
    throw ConfigError("model: widths must be positive");
  if (obs_var <= 0) throw ConfigError("model: obs_var must be > 0");
}

void RigConfig::validate() const {
  if (n_cameras <= 0) throw ConfigError("rig: n_cameras must be > 0");
  if (image_h <= 0 || image_w <= 0 || image_h % 4 != 0 || image_w % 4 != 0)
    throw ConfigError("rig: image size must be positive and divisible by 4");
  if (fov_deg <= 1 || fov_deg >= 179) throw ConfigError("rig: fov out of range");
  if (camera_height <= 0) throw ConfigError("rig: camera_height must be > 0");
}

void InstancePostConfig::validate() const {
  if (center_threshold < 0 || center_threshold > 1)
    throw ConfigError("instances: center_threshold outside [0,1]");
  if (nms_radius < 0) throw ConfigError("instances: nms_radius must be >= 0");
  if (min_track_iou < 0 || min_track_iou > 1)
    throw ConfigError("instances: min_track_iou outside [0,1]");
}

void TrainConfig::validate() const {
  if (mode != "pretrain" && mode != "joint" && mode != "finetune")
    throw ConfigError("train: mode must be pretrain, joint or finetune");
  if (variant != "stretchbev" && variant != "stretchbev-p")
    throw ConfigError("train: variant must be stretchbev or stretchbev-p");
  if (lr <= 0) throw ConfigError("train: lr must be > 0");
  if (lr_decay_factor <= 0 || lr_decay_factor > 1)
    throw ConfigError("train: lr_decay_factor outside (0,1]");
  if (plateau_patience < 1) throw ConfigError("train: plateau_patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (finetune_lr_scale <= 0 || finetune_lr_scale > 1)
    throw ConfigError("train: finetune_lr_scale outside (0,1]");
}

void Config::validate() const {
  world.validate();
  rig.validate();
  frustum.validate();
  model.validate();
  train.validate();
  instances.validate();
  if (world.grid_cells % 4 != 0)
    throw ConfigError("world: grid_cells must be divisible by 4");
}

world::CameraRig Config::make_rig() const {
  return world::CameraRig::surround(rig.n_cameras, rig.image_h, rig.image_w,
                                    rig.fov_deg, rig.camera_height);
}

liftsplat::GridSpec Config::grid() const {
  return liftsplat::GridSpec{world.grid_cells, world.cell_size};
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Config Config::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }

  Config c;
  try {
    if (j.contains("world")) {
      const json& w = j["world"];
      read(w, "grid_cells", c.world.grid_cells);
      read(w, "cell_size", c.world.cell_size);
      read(w, "n_agents_min", c.world.n_agents_min);
      read(w, "n_agents_max", c.world.n_agents_max);
      read(w, "agent_length", c.world.agent_length);
      read(w, "agent_width", c.world.agent_width);
      read(w, "speed_min", c.world.speed_min);
      read(w, "speed_max", c.world.speed_max);
      read(w, "p_turn", c.world.p_turn);
      read(w, "p_speed_change", c.world.p_speed_change);
      read(w, "episode_len", c.world.episode_len);
      read(w, "conditioning_len", c.world.conditioning_len);
      read(w, "seed", c.world.seed);
      read(w, "center_sigma", c.world.center_sigma);
      read(w, "fork_mode", c.world.fork_mode);
    }
    if (j.contains("rig")) {
      const json& r = j["rig"];
      read(r, "n_cameras", c.rig.n_cameras);
      read(r, "image_h", c.rig.image_h);
      read(r, "image_w", c.rig.image_w);
      read(r, "fov_deg", c.rig.fov_deg);
      read(r, "camera_height", c.rig.camera_height);
    }
    if (j.contains("frustum")) {
      const json& f = j["frustum"];
      read(f, "d_min", c.frustum.d_min);
      read(f, "d_max", c.frustum.d_max);
      read(f, "d_size", c.frustum.d_size);
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      read(m, "bev_channels", c.model.bev_channels);
      read(m, "enc_channels", c.model.enc_channels);
      read(m, "latent_channels", c.model.latent_channels);
      read(m, "z_channels", c.model.z_channels);
      read(m, "img_width", c.model.img_width);
      read(m, "enc_width", c.model.enc_width);
      read(m, "dec_width", c.model.dec_width);
      read(m, "net_width", c.model.net_width);
      read(m, "gru_hidden", c.model.gru_hidden);
      read(m, "head_width", c.model.head_width);
      read(m, "label_width", c.model.label_width);
      read(m, "obs_var", c.model.obs_var);
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      read(t, "mode", c.train.mode);
      read(t, "variant", c.train.variant);
      read(t, "lr", c.train.lr);
      read(t, "lr_decay_factor", c.train.lr_decay_factor);
      read(t, "plateau_patience", c.train.plateau_patience);
      read(t, "max_epochs", c.train.max_epochs);
      read(t, "batch_size", c.train.batch_size);
      read(t, "seed", c.train.seed);
      read(t, "finetune_lr_scale", c.train.finetune_lr_scale);
      if (t.contains("weights")) {
        const json& w = t["weights"];
        read(w, "seg", c.train.weights.seg);
        read(w, "center", c.train.weights.center);
        read(w, "offset", c.train.weights.offset);
        read(w, "flow", c.train.weights.flow);
        read(w, "kl", c.train.weights.kl);
        read(w, "state_nll", c.train.weights.state_nll);
        read(w, "obs_modality", c.train.weights.obs_modality);
        read(w, "pred_modality", c.train.weights.pred_modality);
      }
    }
    if (j.contains("instances")) {
      const json& i = j["instances"];
      read(i, "center_threshold", c.instances.center_threshold);
      read(i, "nms_radius", c.instances.nms_radius);
      read(i, "min_track_iou", c.instances.min_track_iou);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad field type: ") + e.what());
  }
  c.validate();
  return c;
}

Config Config::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string Config::to_json() const {
  json j;
  j["world"] = {{"grid_cells", world.grid_cells},
                {"cell_size", world.cell_size},
                {"n_agents_min", world.n_agents_min},
                {"n_agents_max", world.n_agents_max},
                {"agent_length", world.agent_length},
                {"agent_width", world.agent_width},
                {"speed_min", world.speed_min},
                {"speed_max", world.speed_max},
                {"p_turn", world.p_turn},
                {"p_speed_change", world.p_speed_change},
                {"episode_len", world.episode_len},
                {"conditioning_len", world.conditioning_len},
                {"seed", world.seed},
                {"center_sigma", world.center_sigma},
                {"fork_mode", world.fork_mode}};
  j["rig"] = {{"n_cameras", rig.n_cameras},
              {"image_h", rig.image_h},
              {"image_w", rig.image_w},
              {"fov_deg", rig.fov_deg},
              {"camera_height", rig.camera_height}};
  j["frustum"] = {{"d_min", frustum.d_min},
                  {"d_max", frustum.d_max},
                  {"d_size", frustum.d_size}};
  j["model"] = {{"bev_channels", model.bev_channels},
                {"enc_channels", model.enc_channels},
                {"latent_channels", model.latent_channels},
                {"z_channels", model.z_channels},
                {"img_width", model.img_width},
                {"enc_width", model.enc_width},
                {"dec_width", model.dec_width},
                {"net_width", model.net_width},
                {"gru_hidden", model.gru_hidden},
                {"head_width", model.head_width},
                {"label_width", model.label_width},
                {"obs_var", model.obs_var}};
  j["train"] = {{"mode", train.mode},
                {"variant", train.variant},
                {"lr", train.lr},
                {"lr_decay_factor", train.lr_decay_factor},
                {"plateau_patience", train.plateau_patience},
                {"max_epochs", train.max_epochs},
                {"batch_size", train.batch_size},
                {"seed", train.seed},
                {"finetune_lr_scale", train.finetune_lr_scale},
                {"weights",
                 {{"seg", train.weights.seg},
                  {"center", train.weights.center},
                  {"offset", train.weights.offset},
                  {"flow", train.weights.flow},
                  {"kl", train.weights.kl},
                  {"state_nll", train.weights.state_nll},
                  {"obs_modality", train.weights.obs_modality},
                  {"pred_modality", train.weights.pred_modality}}}};
  j["instances"] = {{"center_threshold", instances.center_threshold},
                    {"nms_radius", instances.nms_radius},
                    {"min_track_iou", instances.min_track_iou}};
  return j.dump(2);
}

uint64_t Config::hash() const {
  std::string s = to_json();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace stretchlab::engine
