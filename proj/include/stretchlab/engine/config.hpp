#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stretchlab/liftsplat.hpp"
#include "stretchlab/world.hpp"

namespace stretchlab::engine {

struct ModelConfig {
  int bev_channels = 24;     // C
  int enc_channels = 24;     // c_e
  int latent_channels = 16;  // c_y
  int z_channels = 16;       // c_z
  int img_width = 32;
  int enc_width = 32;
  int dec_width = 32;
  int net_width = 32;
  int gru_hidden = 32;
  int head_width = 24;
  int label_width = 16;
  double obs_var = 1.0;  // constant diagonal observation variance

  void validate() const;
};

struct RigConfig {
  int n_cameras = 4;
  int image_h = 32;
  int image_w = 64;
  double fov_deg = 90.0;
  double camera_height = 1.6;

  void validate() const;
};

struct InstancePostConfig {
  double center_threshold = 0.25;
  double nms_radius = 3.0;
  double min_track_iou = 0.1;

  void validate() const;
};

struct LossWeights {
  double seg = 1.0;
  double center = 10.0;
  double offset = 1.0;
  double flow = 1.0;
  double kl = 1.0;
  double state_nll = 1.0;
  // Modality supervision applies to decodes of both the encoded states and
  // the predicted states; these scale the two contributions.
  double obs_modality = 1.0;
  double pred_modality = 1.0;
};

struct TrainConfig {
  std::string mode = "joint";  // pretrain | joint | finetune
  std::string variant = "stretchbev-p";
  double lr = 3e-4;
  double lr_decay_factor = 0.5;
  int plateau_patience = 3;
  int max_epochs = 25;
  int batch_size = 8;
  uint64_t seed = 7;
  LossWeights weights;
  double finetune_lr_scale = 0.1;  // dynamics parameters during finetune

  void validate() const;
};

struct Config {
  world::WorldConfig world;
  RigConfig rig;
  liftsplat::FrustumConfig frustum;
  ModelConfig model;
  TrainConfig train;
  InstancePostConfig instances;

  void validate() const;

  static Config from_json_text(const std::string& text);
  static Config from_json_file(const std::string& path);
  std::string to_json() const;  // canonical: sorted keys, full echo
  uint64_t hash() const;

  world::CameraRig make_rig() const;
  liftsplat::GridSpec grid() const;
  int latent_cells() const { return world.grid_cells / 4; }
};

}  // namespace stretchlab::engine
