#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "stretchlab/core/rng.hpp"
#include "stretchlab/core/tensor.hpp"

namespace stretchlab::world {

struct WorldConfig {
  int grid_cells = 64;       // H = W
  double cell_size = 0.5;    // meters per cell
  int n_agents_min = 3;
  int n_agents_max = 8;
  double agent_length = 4.0;  // meters
  double agent_width = 2.0;
  double speed_min = 0.5;  // meters per step
  double speed_max = 2.0;
  double p_turn = 0.15;
  double p_speed_change = 0.1;
  int episode_len = 15;      // T
  int conditioning_len = 3;  // k
  uint64_t seed = 1;
  double center_sigma = 1.5;  // center heatmap stddev, cells
  // Fork scenario: one forced left/right turn (p = 0.5 each) at the first
  // future step, no other maneuver randomness.
  bool fork_mode = false;

  double extent() const { return grid_cells * cell_size; }
  void validate() const;  // throws ConfigError
};

struct Agent {
  int id = 0;
  double x = 0, y = 0;      // meters, ego at origin
  double heading = 0;       // radians
  double speed = 0;         // meters per step
  double turn_rate = 0;     // radians per step while a maneuver is active
  int turn_steps_left = 0;
  double length = 0, width = 0;
};

struct WorldState {
  std::vector<Agent> agents;
  int step_index = 0;

  bool operator==(const WorldState& o) const;
};

// Ground-truth maps for one timestep.
struct LabelsSlice {
  Tensor<int32_t> instance;    // [H,W], 0 = background
  Tensor<float> segmentation;  // [H,W], 0/1
  Tensor<float> centers;       // [H,W] in [0,1]
  Tensor<float> offsets;       // [2,H,W], (d_row, d_col) to instance centroid
  Tensor<float> flows;         // [2,H,W], centroid displacement t -> t+1
};

struct EpisodeLabels {
  Tensor<int32_t> instance;    // [T,H,W]
  Tensor<float> segmentation;  // [T,H,W]
  Tensor<float> centers;       // [T,H,W]
  Tensor<float> offsets;       // [T,2,H,W]
  Tensor<float> flows;         // [T,2,H,W]

  int steps() const { return instance.rank() ? instance.dim(0) : 0; }
  LabelsSlice slice(int t) const;
  static EpisodeLabels stack(const std::vector<LabelsSlice>& slices);
};

struct CameraSpec {
  Eigen::Matrix3d intrinsics;   // pixels
  Eigen::Matrix3d rotation;     // camera-to-vehicle
  Eigen::Vector3d translation;  // camera position, vehicle frame, meters
};

struct CameraRig {
  std::vector<CameraSpec> cameras;
  int image_h = 32;
  int image_w = 64;

  void validate() const;
  // n cameras at even yaw increments, shared pinhole intrinsics.
  static CameraRig surround(int n_cameras, int image_h, int image_w,
                            double fov_deg, double camera_height);
};

struct MultiCamFrame {
  Tensor<float> images;  // [n_cam, 3, h, w] in [0,1]
};

struct Episode {
  std::vector<MultiCamFrame> frames;  // length T
  EpisodeLabels labels;
  uint64_t seed = 0;
};

WorldState init_world(const WorldConfig& config);
WorldState step_world(const WorldState& state, const WorldConfig& config, Rng& rng);

// Labels for state_t; flows use centroids of state_t1 (pass state_t twice for
// the last frame, which makes flows exactly zero).
LabelsSlice rasterize_labels(const WorldState& state_t, const WorldState& state_t1,
                             const WorldConfig& config);

MultiCamFrame render_cameras(const WorldState& state, const CameraRig& rig);

Episode generate_episode(const WorldConfig& config, const CameraRig& rig);

// Episode container IO (self-describing arrays + JSON sidecar).
std::string episode_file_name(int index);
void save_episode(const std::string& dir, int index, const Episode& episode,
                  const std::string& config_json);
Episode load_episode(const std::string& dir, int index);
std::string load_episode_meta(const std::string& dir, int index);

}  // namespace stretchlab::world
