#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "stretchlab/core/errors.hpp"
#include "stretchlab/world.hpp"

using namespace stretchlab;
using namespace stretchlab::world;

namespace {

WorldConfig small_config() {
  WorldConfig c;
  c.grid_cells = 32;
  c.cell_size = 0.5;
  c.n_agents_min = c.n_agents_max = 3;
  c.episode_len = 6;
  c.conditioning_len = 3;
  c.seed = 11;
  return c;
}

CameraRig small_rig() { return CameraRig::surround(4, 16, 32, 90.0, 1.6); }

// Brute-force oriented-rectangle raster used as the oracle.
std::set<std::pair<int, int>> rect_cells_oracle(const Agent& a, const WorldConfig& c) {
  std::set<std::pair<int, int>> cells;
  double xmin = -c.extent() / 2.0;
  for (int r = 0; r < c.grid_cells; ++r)
    for (int cc = 0; cc < c.grid_cells; ++cc) {
      double px = xmin + (r + 0.5) * c.cell_size - a.x;
      double py = xmin + (cc + 0.5) * c.cell_size - a.y;
      double u = std::cos(a.heading) * px + std::sin(a.heading) * py;
      double v = -std::sin(a.heading) * px + std::cos(a.heading) * py;
      if (std::abs(u) <= a.length / 2 && std::abs(v) <= a.width / 2)
        cells.insert({r, cc});
    }
  return cells;
}

}  // namespace

TEST_CASE("config invariants") {
  WorldConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.p_turn = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.episode_len = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.grid_cells = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("init_world: empty, deterministic, crowded") {
  WorldConfig c = small_config();
  c.n_agents_min = c.n_agents_max = 0;
  CHECK(init_world(c).agents.empty());

  c = small_config();
  WorldState a = init_world(c);
  WorldState b = init_world(c);
  CHECK(a == b);
  CHECK(a.agents.size() == 3);
  std::set<int> ids;
  for (const Agent& ag : a.agents) ids.insert(ag.id);
  CHECK(ids.size() == a.agents.size());

  // 30 agents of 4m x 2m cannot fit an 8x8-cell (4m x 4m) grid: the packing
  // oracle (total footprint vs grid area) already rules it out.
  WorldConfig crowded = small_config();
  crowded.grid_cells = 8;
  crowded.n_agents_min = crowded.n_agents_max = 30;
  double footprint = 30 * crowded.agent_length * crowded.agent_width;
  double area = crowded.extent() * crowded.extent();
  REQUIRE(footprint > area);
  CHECK_THROWS_WITH_AS(init_world(crowded), "world too crowded", ConfigError);
}

TEST_CASE("step_world kinematics") {
  WorldConfig c = small_config();
  c.p_turn = 0;
  c.p_speed_change = 0;
  WorldState s;
  Agent a;
  a.id = 1;
  a.x = -2.0;
  a.y = 1.0;
  a.heading = 0.0;
  a.speed = 1.0;
  a.length = 4;
  a.width = 2;
  s.agents.push_back(a);

  Rng rng(5);
  WorldState next = step_world(s, c, rng);
  CHECK(next.agents[0].x == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(next.agents[0].y == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(next.step_index == 1);
}

TEST_CASE("step_world: p_turn=1 starts a maneuver") {
  WorldConfig c = small_config();
  c.p_turn = 1.0;
  WorldState s = init_world(c);
  Rng rng(3);
  WorldState next = step_world(s, c, rng);
  for (const Agent& a : next.agents) CHECK(a.turn_rate != 0.0);
}

TEST_CASE("edge agents respawn inside the margin") {
  WorldConfig c = small_config();
  c.p_turn = 0;
  c.p_speed_change = 0;
  WorldState s;
  Agent a;
  a.id = 1;
  a.x = c.extent() / 2 - 0.2;  // at the +x edge heading outward
  a.y = 0;
  a.heading = 0.0;
  a.speed = 1.5;
  a.length = 4;
  a.width = 2;
  s.agents.push_back(a);

  Rng rng(17);
  double bound = c.extent() / 2 + 1.0 + 1e-9;
  for (int t = 0; t < 100; ++t) {
    s = step_world(s, c, rng);
    CHECK(std::abs(s.agents[0].x) <= bound);
    CHECK(std::abs(s.agents[0].y) <= bound);
  }
}

TEST_CASE("rasterize: static agent has zero flow") {
  WorldConfig c = small_config();
  WorldState s;
  Agent a;
  a.id = 1;
  a.x = 0.1;
  a.y = -0.4;
  a.heading = 0.7;
  a.length = 4;
  a.width = 2;
  s.agents.push_back(a);
  LabelsSlice lab = rasterize_labels(s, s, c);
  for (float v : lab.flows.data) CHECK(v == 0.0f);
  // segmentation == (instance > 0)
  for (int64_t i = 0; i < lab.instance.size(); ++i)
    CHECK((lab.instance[i] > 0) == (lab.segmentation[i] > 0.5f));
}

TEST_CASE("rasterize: rigid translation flow") {
  WorldConfig c = small_config();
  WorldState s0;
  Agent a;
  a.id = 1;
  a.x = -2.0;
  a.y = 0.0;
  a.heading = 0.0;
  a.length = 4;
  a.width = 2;
  s0.agents.push_back(a);
  WorldState s1 = s0;
  s1.agents[0].x += 1.0;  // +2 cells at 0.5 m per cell

  LabelsSlice lab = rasterize_labels(s0, s1, c);
  int fg = 0;
  for (int r = 0; r < c.grid_cells; ++r)
    for (int cc = 0; cc < c.grid_cells; ++cc)
      if (lab.instance.at(r, cc) > 0) {
        ++fg;
        CHECK(lab.flows.at(0, r, cc) == doctest::Approx(2.0));
        CHECK(lab.flows.at(1, r, cc) == doctest::Approx(0.0));
      }
  CHECK(fg > 0);
}

TEST_CASE("rasterize matches the point-in-rectangle oracle") {
  WorldConfig c = small_config();
  WorldState s;
  Agent a;
  a.id = 1;
  a.x = 0.0;
  a.y = 0.0;
  a.heading = 0.0;
  a.length = 4;
  a.width = 2;
  s.agents.push_back(a);

  LabelsSlice lab = rasterize_labels(s, s, c);
  auto oracle = rect_cells_oracle(a, c);
  CHECK(oracle.size() == 8 * 4);  // axis-aligned 8x4-cell block
  int marked = 0;
  for (int r = 0; r < c.grid_cells; ++r)
    for (int cc = 0; cc < c.grid_cells; ++cc)
      if (lab.instance.at(r, cc) == 1) {
        ++marked;
        CHECK(oracle.count({r, cc}) == 1);
      }
  CHECK(marked == static_cast<int>(oracle.size()));

  // offsets point exactly at the cell centroid of the instance
  double rc = 0, cc_sum = 0;
  for (auto [r, cc] : oracle) {
    rc += r;
    cc_sum += cc;
  }
  rc /= oracle.size();
  cc_sum /= oracle.size();
  for (auto [r, cc] : oracle) {
    CHECK(lab.offsets.at(0, r, cc) == doctest::Approx(rc - r));
    CHECK(lab.offsets.at(1, r, cc) == doctest::Approx(cc_sum - cc));
  }
  // heatmap peaks at the centroid cell
  int pr = static_cast<int>(std::lround(rc)), pc = static_cast<int>(std::lround(cc_sum));
  CHECK(lab.centers.at(pr, pc) > 0.8f);
}

TEST_CASE("overlap resolves to the lower id") {
  WorldConfig c = small_config();
  WorldState s;
  for (int i = 0; i < 2; ++i) {
    Agent a;
    a.id = 2 - i;  // insert higher id first
    a.x = 0.0;
    a.y = 0.1 * i;
    a.heading = 0.0;
    a.length = 4;
    a.width = 2;
    s.agents.push_back(a);
  }
  LabelsSlice lab = rasterize_labels(s, s, c);
  bool saw1 = false;
  for (int32_t v : lab.instance.data) {
    if (v == 1) saw1 = true;
    CHECK(v != 2);  // fully occluded by the overlapping lower id
  }
  CHECK(saw1);
}

TEST_CASE("flow warp reproduces the next instance map") {
  WorldConfig c = small_config();
  c.p_turn = 0.3;
  c.p_speed_change = 0.2;
  c.seed = 99;
  WorldState s = init_world(c);
  Rng rng(123);
  double half = c.extent() / 2;
  for (int trial = 0; trial < 8; ++trial) {
    WorldState s1 = step_world(s, c, rng);
    LabelsSlice lab0 = rasterize_labels(s, s1, c);
    LabelsSlice lab1 = rasterize_labels(s1, s1, c);
    int n = c.grid_cells;
    for (const Agent& a : s.agents) {
      // only agents fully inside in both frames
      const Agent* a1 = nullptr;
      for (const Agent& b : s1.agents)
        if (b.id == a.id) a1 = &b;
      double rad = 0.5 * std::hypot(a.length, a.width);
      if (!a1 || std::abs(a.x) + rad > half || std::abs(a.y) + rad > half ||
          std::abs(a1->x) + rad > half || std::abs(a1->y) + rad > half)
        continue;
      std::set<std::pair<int, int>> warped, target;
      for (int r = 0; r < n; ++r)
        for (int cc = 0; cc < n; ++cc) {
          if (lab0.instance.at(r, cc) == a.id) {
            int wr = r + static_cast<int>(std::lround(lab0.flows.at(0, r, cc)));
            int wc = cc + static_cast<int>(std::lround(lab0.flows.at(1, r, cc)));
            if (wr >= 0 && wr < n && wc >= 0 && wc < n) warped.insert({wr, wc});
          }
          if (lab1.instance.at(r, cc) == a.id) target.insert({r, cc});
        }
      if (target.empty()) continue;
      int inter = 0;
      for (auto& cell : warped) inter += target.count(cell);
      int uni = static_cast<int>(warped.size() + target.size()) - inter;
      CHECK(static_cast<double>(inter) / uni >= 0.7);
    }
    s = s1;
  }
}

TEST_CASE("render: empty world is pure background") {
  WorldConfig c = small_config();
  WorldState empty;
  MultiCamFrame f = render_cameras(empty, small_rig());
  CHECK(f.images.dim(0) == 4);
  // every pixel is one of the two background colors
  int h = 16, w = 32;
  for (int cam = 0; cam < 4; ++cam)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float r = f.images[((cam * 3 + 0) * h + y) * w + x];
        bool ground = std::abs(r - 0.35f) < 1e-6;
        bool sky = std::abs(r - 0.65f) < 1e-6;
        CHECK((ground || sky));
      }
}

TEST_CASE("render: forward agent centered on the principal column") {
  CameraRig rig = small_rig();
  WorldState s;
  Agent a;
  a.id = 1;
  a.x = 5.0;
  a.y = 0.0;
  a.heading = 0.0;
  a.length = 4;
  a.width = 2;
  s.agents.push_back(a);
  MultiCamFrame f = render_cameras(s, rig);

  MultiCamFrame bg = render_cameras(WorldState{}, rig);
  int h = 16, w = 32;
  double col_sum = 0;
  int count = 0;
  int min_col = w, max_col = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool differs = false;
      for (int ch = 0; ch < 3; ++ch)
        if (f.images[(ch * h + y) * w + x] != bg.images[(ch * h + y) * w + x])
          differs = true;
      if (differs) {
        col_sum += x + 0.5;
        ++count;
        min_col = std::min(min_col, x);
        max_col = std::max(max_col, x);
      }
    }
  REQUIRE(count > 0);
  double cx = rig.cameras[0].intrinsics(0, 2);
  CHECK(std::abs(col_sum / count - cx) < 0.75);

  // oracle: project the box corners by hand and compare the drawn span
  double zs[2] = {0.0, 1.5};
  double min_u = 1e9, max_u = -1e9;
  for (double sx : {3.0, 7.0})
    for (double sy : {-1.0, 1.0})
      for (double z : zs) {
        Eigen::Vector3d p_cam =
            rig.cameras[0].rotation.transpose() *
            (Eigen::Vector3d(sx, sy, z) - rig.cameras[0].translation);
        Eigen::Vector3d uvw = rig.cameras[0].intrinsics * p_cam;
        min_u = std::min(min_u, uvw.x() / uvw.z());
        max_u = std::max(max_u, uvw.x() / uvw.z());
      }
  CHECK(min_col >= static_cast<int>(std::floor(min_u)) - 1);
  CHECK(max_col <= static_cast<int>(std::ceil(max_u)) + 1);
}

TEST_CASE("render: agent behind the camera is skipped") {
  CameraRig rig = small_rig();
  WorldState s;
  Agent a;
  a.id = 1;
  a.x = -1.0;  // one meter behind the forward camera
  a.y = 0.0;
  a.heading = 0.0;
  a.length = 4;
  a.width = 2;
  s.agents.push_back(a);
  MultiCamFrame f = render_cameras(s, rig);
  MultiCamFrame bg = render_cameras(WorldState{}, rig);
  int h = 16, w = 32;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        CHECK(f.images[(ch * h + y) * w + x] == bg.images[(ch * h + y) * w + x]);
}

TEST_CASE("generate_episode: paper horizons and determinism") {
  WorldConfig c = small_config();
  CameraRig rig = small_rig();

  c.episode_len = 13;  // 12 future frames from k=3
  Episode lng = generate_episode(c, rig);
  CHECK(lng.frames.size() == 13);
  CHECK(lng.labels.steps() == 13);

  c.episode_len = 7;  // 4 future frames from k=3
  Episode shrt = generate_episode(c, rig);
  CHECK(shrt.frames.size() == 7);

  Episode again = generate_episode(c, rig);
  CHECK(shrt.labels.instance.data == again.labels.instance.data);
  CHECK(shrt.labels.flows.data == again.labels.flows.data);
  for (size_t t = 0; t < shrt.frames.size(); ++t)
    CHECK(shrt.frames[t].images.data == again.frames[t].images.data);
}

TEST_CASE("maneuver noise drives divergence") {
  WorldConfig c = small_config();
  c.p_turn = 0.5;
  c.p_speed_change = 0.3;
  WorldState s = init_world(c);
  Rng r1(1000), r2(2000);
  WorldState a = s, b = s;
  for (int t = 0; t < 8; ++t) {
    a = step_world(a, c, r1);
    b = step_world(b, c, r2);
  }
  LabelsSlice la = rasterize_labels(a, a, c);
  LabelsSlice lb = rasterize_labels(b, b, c);
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < la.segmentation.size(); ++i) {
    bool pa = la.segmentation[i] > 0.5f, pb = lb.segmentation[i] > 0.5f;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  REQUIRE(uni > 0);
  CHECK(static_cast<double>(inter) / uni < 1.0);
}

TEST_CASE("episode container round trip") {
  WorldConfig c = small_config();
  CameraRig rig = small_rig();
  Episode ep = generate_episode(c, rig);

  std::string dir =
      (std::filesystem::temp_directory_path() / "stretchlab_ep_io").string();
  std::filesystem::create_directories(dir);
  save_episode(dir, 0, ep, "{\"world\":{}}");
  Episode back = load_episode(dir, 0);

  CHECK(back.frames.size() == ep.frames.size());
  CHECK(back.labels.instance.data == ep.labels.instance.data);
  CHECK(back.labels.offsets.data == ep.labels.offsets.data);
  CHECK(back.seed == ep.seed);
  for (size_t t = 0; t < ep.frames.size(); ++t)
    for (int64_t i = 0; i < ep.frames[t].images.size(); ++i) {
      float orig = ep.frames[t].images[i];
      float q = std::round(std::clamp(orig, 0.0f, 1.0f) * 255.0f) / 255.0f;
      CHECK(back.frames[t].images[i] == doctest::Approx(q).epsilon(1e-6));
    }
  std::filesystem::remove_all(dir);
}
