#include "stretchlab/world.hpp"

#include <algorithm>
#include <cmath>

#include "stretchlab/core/errors.hpp"

namespace stretchlab::world {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kTurnSteps = 4;                 // one maneuver = 90 degrees over 4 steps
constexpr double kTurnTotal = kPi / 2.0;
constexpr double kRespawnMargin = 1.0;        // meters beyond the grid edge
constexpr double kAgentHeight = 1.5;          // meters, for rendering
constexpr double kNearPlane = 0.1;            // meters, camera frustum cull

double circumradius(const Agent& a) {
  return 0.5 * std::hypot(a.length, a.width);
}

bool overlaps(const Agent& a, const Agent& b) {
  double d = std::hypot(a.x - b.x, a.y - b.y);
  return d < circumradius(a) + circumradius(b);
}

void respawn_at_boundary(Agent& a, const WorldConfig& cfg, Rng& rng) {
  double half = cfg.extent() / 2.0;
  double inset = 0.5 * a.length + 0.1;
  int edge = static_cast<int>(rng.below(4));
  double along = rng.uniform(-half + inset, half - inset);
  double inward;  // heading toward grid interior
  switch (edge) {
    case 0: a.x = -half + inset; a.y = along; inward = 0.0; break;
    case 1: a.x = half - inset; a.y = along; inward = kPi; break;
    case 2: a.x = along; a.y = -half + inset; inward = kPi / 2.0; break;
    default: a.x = along; a.y = half - inset; inward = -kPi / 2.0; break;
  }
  a.heading = inward + rng.uniform(-kPi / 4.0, kPi / 4.0);
  a.turn_rate = 0.0;
  a.turn_steps_left = 0;
}

struct InstanceStats {
  int32_t id;
  double row_sum = 0, col_sum = 0;
  int cells = 0;
  double row_centroid() const { return row_sum / cells; }
  double col_centroid() const { return col_sum / cells; }
};

// Oriented-rectangle raster with lower-id-wins overlap resolution.
// Returns per-instance cell statistics alongside the map.
std::vector<InstanceStats> raster_instances(const WorldState& state,
                                            const WorldConfig& cfg,
                                            Tensor<int32_t>& instance) {
  int n = cfg.grid_cells;
  double cs = cfg.cell_size;
  double xmin = -cfg.extent() / 2.0;

  std::vector<Agent> agents = state.agents;
  std::sort(agents.begin(), agents.end(),
            [](const Agent& a, const Agent& b) { return a.id < b.id; });

  std::vector<InstanceStats> stats;
  for (const Agent& a : agents) {
    double c = std::cos(a.heading), s = std::sin(a.heading);
    double r_bound = circumradius(a);
    int r0 = std::max(0, static_cast<int>(std::floor((a.x - r_bound - xmin) / cs)));
    int r1 = std::min(n - 1, static_cast<int>(std::floor((a.x + r_bound - xmin) / cs)));
    int c0 = std::max(0, static_cast<int>(std::floor((a.y - r_bound - xmin) / cs)));
    int c1 = std::min(n - 1, static_cast<int>(std::floor((a.y + r_bound - xmin) / cs)));
    InstanceStats st;
    st.id = a.id;
    for (int r = r0; r <= r1; ++r)
      for (int cc = c0; cc <= c1; ++cc) {
        if (instance.at(r, cc) != 0) continue;  // earlier (lower) id wins
        double px = xmin + (r + 0.5) * cs - a.x;
        double py = xmin + (cc + 0.5) * cs - a.y;
        double u = c * px + s * py;
        double v = -s * px + c * py;
        if (std::abs(u) <= a.length / 2.0 && std::abs(v) <= a.width / 2.0) {
          instance.at(r, cc) = a.id;
          st.row_sum += r;
          st.col_sum += cc;
          ++st.cells;
        }
      }
    if (st.cells > 0) stats.push_back(st);
  }
  return stats;
}

uint64_t color_hash(int id) {
  uint64_t s = 0x5EEDC0DEULL + static_cast<uint64_t>(id);
  return splitmix64(s);
}

}  // namespace

void WorldConfig::validate() const {
  if (grid_cells <= 0) throw ConfigError("world: grid_cells must be > 0");
  if (cell_size <= 0) throw ConfigError("world: cell_size must be > 0");
  if (n_agents_min < 0 || n_agents_max < n_agents_min)
    throw ConfigError("world: invalid n_agents range");
  if (agent_length <= 0 || agent_width <= 0)
    throw ConfigError("world: agent size must be positive");
  if (speed_min < 0 || speed_max < speed_min)
    throw ConfigError("world: invalid speed range");
  if (p_turn < 0 || p_turn > 1) throw ConfigError("world: p_turn outside [0,1]");
  if (p_speed_change < 0 || p_speed_change > 1)
    throw ConfigError("world: p_speed_change outside [0,1]");
  if (conditioning_len < 1) throw ConfigError("world: conditioning_len must be >= 1");
  if (episode_len <= conditioning_len)
    throw ConfigError("world: episode_len must exceed conditioning_len");
  if (center_sigma <= 0) throw ConfigError("world: center_sigma must be > 0");
}

bool WorldState::operator==(const WorldState& o) const {
  if (step_index != o.step_index || agents.size() != o.agents.size()) return false;
  for (size_t i = 0; i < agents.size(); ++i) {
    const Agent&a = agents[i], &b = o.agents[i];
    if (a.id != b.id || a.x != b.x || a.y != b.y || a.heading != b.heading ||
        a.speed != b.speed || a.turn_rate != b.turn_rate ||
        a.turn_steps_left != b.turn_steps_left || a.length != b.length ||
        a.width != b.width)
      return false;
  }
  return true;
}

WorldState init_world(const WorldConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 0x1417));
  int n_agents = config.n_agents_min;
  if (config.n_agents_max > config.n_agents_min)
    n_agents += static_cast<int>(
        rng.below(static_cast<uint64_t>(config.n_agents_max - config.n_agents_min + 1)));

  WorldState state;
  state.step_index = 0;
  double half = config.extent() / 2.0;
  double inset = 0.5 * std::hypot(config.agent_length, config.agent_width);
  int attempts_left = 200 * std::max(1, n_agents);
  for (int i = 0; i < n_agents; ++i) {
    Agent a;
    a.id = i + 1;
    a.length = config.agent_length;
    a.width = config.agent_width;
    bool placed = false;
    while (attempts_left-- > 0) {
      double lo = -half + inset, hi = half - inset;
      if (lo >= hi) break;  // agent larger than grid
      a.x = rng.uniform(lo, hi);
      a.y = rng.uniform(lo, hi);
      a.heading = rng.uniform(0.0, 2.0 * kPi);
      a.speed = rng.uniform(config.speed_min, config.speed_max);
      bool clash = false;
      for (const Agent& other : state.agents)
        if (overlaps(a, other)) {
          clash = true;
          break;
        }
      if (!clash) {
        placed = true;
        break;
      }
    }
    if (!placed) throw ConfigError("world too crowded");
    state.agents.push_back(a);
  }
  return state;
}

WorldState step_world(const WorldState& state, const WorldConfig& config, Rng& rng) {
  WorldState next = state;
  next.step_index = state.step_index + 1;
  double half = config.extent() / 2.0;

  for (Agent& a : next.agents) {
    if (config.fork_mode) {
      if (state.step_index == config.conditioning_len - 1) {
        double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        a.turn_rate = sign * kTurnTotal / kTurnSteps;
        a.turn_steps_left = kTurnSteps;
      }
    } else {
      if (a.turn_steps_left == 0 && rng.bernoulli(config.p_turn)) {
        double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        a.turn_rate = sign * kTurnTotal / kTurnSteps;
        a.turn_steps_left = kTurnSteps;
      }
      if (rng.bernoulli(config.p_speed_change))
        a.speed = rng.uniform(config.speed_min, config.speed_max);
    }

    if (a.turn_steps_left > 0) {
      a.heading += a.turn_rate;
      if (--a.turn_steps_left == 0) a.turn_rate = 0.0;
    }
    a.x += a.speed * std::cos(a.heading);
    a.y += a.speed * std::sin(a.heading);

    if (std::abs(a.x) > half + kRespawnMargin || std::abs(a.y) > half + kRespawnMargin)
      respawn_at_boundary(a, config, rng);
  }
  return next;
}

LabelsSlice rasterize_labels(const WorldState& state_t, const WorldState& state_t1,
                             const WorldConfig& config) {
  int n = config.grid_cells;
  LabelsSlice out;
  out.instance = Tensor<int32_t>({n, n});
  out.segmentation = Tensor<float>({n, n});
  out.centers = Tensor<float>({n, n});
  out.offsets = Tensor<float>({2, n, n});
  out.flows = Tensor<float>({2, n, n});

  std::vector<InstanceStats> now = raster_instances(state_t, config, out.instance);

  Tensor<int32_t> map_t1({n, n});
  std::vector<InstanceStats> later = raster_instances(state_t1, config, map_t1);

  double sigma = config.center_sigma;
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  for (const InstanceStats& st : now) {
    double rc = st.row_centroid(), cc = st.col_centroid();

    double flow_r = 0.0, flow_c = 0.0;
    for (const InstanceStats& st1 : later)
      if (st1.id == st.id) {
        double dr = st1.row_centroid() - rc;
        double dc = st1.col_centroid() - cc;
        // Respawns teleport; do not label them as motion.
        if (std::hypot(dr, dc) <= n / 2.0) {
          flow_r = dr;
          flow_c = dc;
        }
        break;
      }

    int r0 = std::max(0, static_cast<int>(std::floor(rc)) - radius);
    int r1 = std::min(n - 1, static_cast<int>(std::ceil(rc)) + radius);
    int c0 = std::max(0, static_cast<int>(std::floor(cc)) - radius);
    int c1 = std::min(n - 1, static_cast<int>(std::ceil(cc)) + radius);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        double d2 = (r - rc) * (r - rc) + (c - cc) * (c - cc);
        float v = static_cast<float>(std::exp(-d2 / (2.0 * sigma * sigma)));
        out.centers.at(r, c) = std::max(out.centers.at(r, c), v);
      }

    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (out.instance.at(r, c) == st.id) {
          out.segmentation.at(r, c) = 1.0f;
          out.offsets.at(0, r, c) = static_cast<float>(rc - r);
          out.offsets.at(1, r, c) = static_cast<float>(cc - c);
          out.flows.at(0, r, c) = static_cast<float>(flow_r);
          out.flows.at(1, r, c) = static_cast<float>(flow_c);
        }
  }
  return out;
}

void CameraRig::validate() const {
  if (cameras.empty()) throw ConfigError("rig: no cameras");
  if (image_h <= 0 || image_w <= 0) throw ConfigError("rig: invalid image size");
  for (const CameraSpec& cam : cameras) {
    if (std::abs(cam.intrinsics.determinant()) < 1e-12)
      throw ConfigError("rig: intrinsics not invertible");
    Eigen::Matrix3d rrt = cam.rotation * cam.rotation.transpose();
    if ((rrt - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
      throw ConfigError("rig: rotation not orthonormal");
  }
}

CameraRig CameraRig::surround(int n_cameras, int image_h, int image_w,
                              double fov_deg, double camera_height) {
  CameraRig rig;
  rig.image_h = image_h;
  rig.image_w = image_w;
  double f = (image_w / 2.0) / std::tan(fov_deg * kPi / 180.0 / 2.0);
  Eigen::Matrix3d intr;
  intr << f, 0, image_w / 2.0, 0, f, image_h / 2.0, 0, 0, 1;

  // Optical axis forward, image right = -y (vehicle: x fwd, y left, z up).
  Eigen::Matrix3d base;
  base << 0, 0, 1, -1, 0, 0, 0, -1, 0;

  for (int i = 0; i < n_cameras; ++i) {
    double yaw = 2.0 * kPi * i / n_cameras;
    Eigen::Matrix3d rz;
    rz << std::cos(yaw), -std::sin(yaw), 0, std::sin(yaw), std::cos(yaw), 0, 0, 0, 1;
    CameraSpec cam;
    cam.intrinsics = intr;
    cam.rotation = rz * base;
    cam.translation = Eigen::Vector3d(0, 0, camera_height);
    rig.cameras.push_back(cam);
  }
  return rig;
}

MultiCamFrame render_cameras(const WorldState& state, const CameraRig& rig) {
  rig.validate();
  int n_cam = static_cast<int>(rig.cameras.size());
  int h = rig.image_h, w = rig.image_w;
  MultiCamFrame frame;
  frame.images = Tensor<float>({n_cam, 3, h, w});

  const float ground[3] = {0.35f, 0.33f, 0.30f};
  const float sky[3] = {0.65f, 0.80f, 0.95f};

  for (int ci = 0; ci < n_cam; ++ci) {
    const CameraSpec& cam = rig.cameras[ci];
    Eigen::Matrix3d kinv = cam.intrinsics.inverse();
    int64_t base = static_cast<int64_t>(ci) * 3 * h * w;
    float* img = frame.images.data.data() + base;
    auto px = [&](int ch, int y, int x) -> float& {
      return img[(static_cast<int64_t>(ch) * h + y) * w + x];
    };

    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        Eigen::Vector3d d_cam = kinv * Eigen::Vector3d(x + 0.5, y + 0.5, 1.0);
        Eigen::Vector3d d = cam.rotation * d_cam;
        bool hits_ground = d.z() < -1e-9;
        const float* col = hits_ground ? ground : sky;
        for (int ch = 0; ch < 3; ++ch) px(ch, y, x) = col[ch];
      }

    std::vector<Agent> agents = state.agents;
    Eigen::Vector3d cam_pos = cam.translation;
    std::sort(agents.begin(), agents.end(), [&](const Agent& a, const Agent& b) {
      double da = std::hypot(a.x - cam_pos.x(), a.y - cam_pos.y());
      double db = std::hypot(b.x - cam_pos.x(), b.y - cam_pos.y());
      if (da != db) return da > db;  // painter's order: far first
      return a.id < b.id;
    });

    for (const Agent& a : agents) {
      double c = std::cos(a.heading), s = std::sin(a.heading);
      std::vector<Eigen::Vector2d> pts;
      bool behind = false;
      for (int corner = 0; corner < 8 && !behind; ++corner) {
        double lu = (corner & 1) ? a.length / 2.0 : -a.length / 2.0;
        double lv = (corner & 2) ? a.width / 2.0 : -a.width / 2.0;
        double z = (corner & 4) ? kAgentHeight : 0.0;
        Eigen::Vector3d p(a.x + c * lu - s * lv, a.y + s * lu + c * lv, z);
        Eigen::Vector3d p_cam = cam.rotation.transpose() * (p - cam.translation);
        if (p_cam.z() < kNearPlane) {
          behind = true;
          break;
        }
        Eigen::Vector3d uvw = cam.intrinsics * p_cam;
        pts.emplace_back(uvw.x() / uvw.z(), uvw.y() / uvw.z());
      }
      if (behind) continue;

      // Convex hull (monotone chain) of the projected corners.
      std::sort(pts.begin(), pts.end(), [](const auto& p, const auto& q) {
        return p.x() != q.x() ? p.x() < q.x() : p.y() < q.y();
      });
      auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& p,
                      const Eigen::Vector2d& q) {
        return (p.x() - o.x()) * (q.y() - o.y()) - (p.y() - o.y()) * (q.x() - o.x());
      };
      std::vector<Eigen::Vector2d> hull;
      for (int pass = 0; pass < 2; ++pass) {
        size_t start = hull.size();
        for (const auto& p : pts) {
          while (hull.size() >= start + 2 &&
                 cross(hull[hull.size() - 2], hull.back(), p) <= 0)
            hull.pop_back();
          hull.push_back(p);
        }
        hull.pop_back();
        std::reverse(pts.begin(), pts.end());
      }
      if (hull.size() < 3) continue;

      uint64_t hash = color_hash(a.id);
      float rgb[3];
      for (int ch = 0; ch < 3; ++ch)
        rgb[ch] = 0.2f + 0.75f * static_cast<float>((hash >> (ch * 8)) & 0xFF) / 255.0f;

      double minx = hull[0].x(), maxx = hull[0].x();
      double miny = hull[0].y(), maxy = hull[0].y();
      for (const auto& p : hull) {
        minx = std::min(minx, p.x());
        maxx = std::max(maxx, p.x());
        miny = std::min(miny, p.y());
        maxy = std::max(maxy, p.y());
      }
      int x0 = std::max(0, static_cast<int>(std::floor(minx)));
      int x1 = std::min(w - 1, static_cast<int>(std::ceil(maxx)));
      int y0 = std::max(0, static_cast<int>(std::floor(miny)));
      int y1 = std::min(h - 1, static_cast<int>(std::ceil(maxy)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          Eigen::Vector2d p(x + 0.5, y + 0.5);
          bool inside = true;
          for (size_t i = 0; i < hull.size() && inside; ++i) {
            const auto& u = hull[i];
            const auto& v = hull[(i + 1) % hull.size()];
            if (cross(u, v, p) < 0) inside = false;
          }
          if (inside)
            for (int ch = 0; ch < 3; ++ch) px(ch, y, x) = rgb[ch];
        }
    }
  }
  return frame;
}

LabelsSlice EpisodeLabels::slice(int t) const {
  int n = instance.dim(1);
  LabelsSlice s;
  s.instance = Tensor<int32_t>({n, n});
  s.segmentation = Tensor<float>({n, n});
  s.centers = Tensor<float>({n, n});
  s.offsets = Tensor<float>({2, n, n});
  s.flows = Tensor<float>({2, n, n});
  int64_t hw = static_cast<int64_t>(n) * n;
  std::copy_n(instance.data.begin() + t * hw, hw, s.instance.data.begin());
  std::copy_n(segmentation.data.begin() + t * hw, hw, s.segmentation.data.begin());
  std::copy_n(centers.data.begin() + t * hw, hw, s.centers.data.begin());
  std::copy_n(offsets.data.begin() + t * 2 * hw, 2 * hw, s.offsets.data.begin());
  std::copy_n(flows.data.begin() + t * 2 * hw, 2 * hw, s.flows.data.begin());
  return s;
}

EpisodeLabels EpisodeLabels::stack(const std::vector<LabelsSlice>& slices) {
  int t_len = static_cast<int>(slices.size());
  int n = slices.at(0).instance.dim(0);
  int64_t hw = static_cast<int64_t>(n) * n;
  EpisodeLabels out;
  out.instance = Tensor<int32_t>({t_len, n, n});
  out.segmentation = Tensor<float>({t_len, n, n});
  out.centers = Tensor<float>({t_len, n, n});
  out.offsets = Tensor<float>({t_len, 2, n, n});
  out.flows = Tensor<float>({t_len, 2, n, n});
  for (int t = 0; t < t_len; ++t) {
    const LabelsSlice& s = slices[t];
    std::copy_n(s.instance.data.begin(), hw, out.instance.data.begin() + t * hw);
    std::copy_n(s.segmentation.data.begin(), hw,
                out.segmentation.data.begin() + t * hw);
    std::copy_n(s.centers.data.begin(), hw, out.centers.data.begin() + t * hw);
    std::copy_n(s.offsets.data.begin(), 2 * hw, out.offsets.data.begin() + t * 2 * hw);
    std::copy_n(s.flows.data.begin(), 2 * hw, out.flows.data.begin() + t * 2 * hw);
  }
  return out;
}

Episode generate_episode(const WorldConfig& config, const CameraRig& rig) {
  config.validate();
  rig.validate();
  Rng step_rng(mix_seed(config.seed, 0x57E9));

  std::vector<WorldState> states;
  states.push_back(init_world(config));
  for (int t = 1; t < config.episode_len; ++t)
    states.push_back(step_world(states.back(), config, step_rng));

  Episode ep;
  ep.seed = config.seed;
  std::vector<LabelsSlice> slices;
  for (int t = 0; t < config.episode_len; ++t) {
    ep.frames.push_back(render_cameras(states[t], rig));
    const WorldState& next = (t + 1 < config.episode_len) ? states[t + 1] : states[t];
    slices.push_back(rasterize_labels(states[t], next, config));
  }
  ep.labels = EpisodeLabels::stack(slices);
  return ep;
}

}  // namespace stretchlab::world
