#include "stretchlab/instances.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "stretchlab/core/errors.hpp"

namespace stretchlab::instances {

std::vector<Center> extract_centers(const Tensor<float>& heatmap, float threshold,
                                    double nms_radius) {
  const Tensor<float>& hm = heatmap;
  int h = hm.rank() == 3 ? hm.dim(1) : hm.dim(0);
  int w = hm.rank() == 3 ? hm.dim(2) : hm.dim(1);
  int r_cells = static_cast<int>(std::floor(nms_radius));
  double r2 = nms_radius * nms_radius;

  std::vector<Center> out;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      float v = hm[static_cast<int64_t>(r) * w + c];
      if (v < threshold) continue;
      bool suppressed = false;
      for (int dr = -r_cells; dr <= r_cells && !suppressed; ++dr) {
        int rr = r + dr;
        if (rr < 0 || rr >= h) continue;
        for (int dc = -r_cells; dc <= r_cells; ++dc) {
          int cc = c + dc;
          if (cc < 0 || cc >= w || (dr == 0 && dc == 0)) continue;
          if (dr * dr + dc * dc > r2) continue;
          float u = hm[static_cast<int64_t>(rr) * w + cc];
          if (u > v || (u == v && (rr < r || (rr == r && cc < c)))) {
            suppressed = true;
            break;
          }
        }
      }
      if (!suppressed) out.push_back({r, c, v});
    }

  std::sort(out.begin(), out.end(), [](const Center& a, const Center& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  return out;
}

Grouping group_pixels(const Tensor<float>& seg_mask, const Tensor<float>& offset,
                      const std::vector<Center>& centers) {
  int h = seg_mask.dim(0), w = seg_mask.dim(1);
  int64_t hw = static_cast<int64_t>(h) * w;
  Grouping g;
  g.map = Tensor<int32_t>({h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int64_t i = static_cast<int64_t>(r) * w + c;
      if (seg_mask[i] <= 0.5f) continue;
      if (centers.empty()) {
        ++g.orphan_cells;
        continue;
      }
      double tr = r + offset[i];
      double tc = c + offset[hw + i];
      int best = 0;
      double best_d = 1e300;
      for (size_t ci = 0; ci < centers.size(); ++ci) {
        double dr = tr - centers[ci].row;
        double dc = tc - centers[ci].col;
        double d = dr * dr + dc * dc;
        if (d < best_d) {  // strict: ties keep the lower center index
          best_d = d;
          best = static_cast<int>(ci);
        }
      }
      g.map[i] = best + 1;
    }
  return g;
}

namespace {

using CellSet = std::vector<int64_t>;  // sorted flat indices

double overlap_iou(const CellSet& a, const CellSet& b) {
  if (a.empty() && b.empty()) return 0.0;
  size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::map<int32_t, CellSet> cells_by_id(const Tensor<int32_t>& map) {
  std::map<int32_t, CellSet> out;
  for (int64_t i = 0; i < map.size(); ++i)
    if (map[i] > 0) out[map[i]].push_back(i);
  return out;
}

}  // namespace

Tensor<int32_t> track_instances(const std::vector<Tensor<int32_t>>& frame_maps,
                                const Tensor<float>& flows, double min_track_iou) {
  int t_len = static_cast<int>(frame_maps.size());
  if (t_len == 0) return Tensor<int32_t>({0, 0, 0});
  int h = frame_maps[0].dim(0), w = frame_maps[0].dim(1);
  if (flows.dim(0) < t_len - 1)
    throw NumericError("track_instances: not enough flow frames");
  int64_t hw = static_cast<int64_t>(h) * w;

  Tensor<int32_t> out({t_len, h, w});
  std::copy(frame_maps[0].data.begin(), frame_maps[0].data.end(), out.data.begin());

  int32_t next_id = 1;
  for (int64_t i = 0; i < hw; ++i) next_id = std::max(next_id, out[i] + 1);

  for (int t = 0; t + 1 < t_len; ++t) {
    // Warp current global instances forward by the predicted flow.
    std::map<int32_t, CellSet> warped;
    const float* flow = flows.data.data() + static_cast<int64_t>(t) * 2 * hw;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        int64_t i = static_cast<int64_t>(r) * w + c;
        int32_t id = out[t * hw + i];
        if (id == 0) continue;
        int wr = r + static_cast<int>(std::lround(flow[i]));
        int wc = c + static_cast<int>(std::lround(flow[hw + i]));
        if (wr < 0 || wr >= h || wc < 0 || wc >= w) continue;
        warped[id].push_back(static_cast<int64_t>(wr) * w + wc);
      }
    for (auto& [id, cells] : warped) {
      std::sort(cells.begin(), cells.end());
      cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    }

    std::map<int32_t, CellSet> next_local = cells_by_id(frame_maps[t + 1]);

    struct Pair {
      double iou;
      int32_t prev_id, local_id;
    };
    std::vector<Pair> pairs;
    for (const auto& [pid, pcells] : warped)
      for (const auto& [lid, lcells] : next_local) {
        double v = overlap_iou(pcells, lcells);
        if (v >= min_track_iou) pairs.push_back({v, pid, lid});
      }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.iou != b.iou) return a.iou > b.iou;
      if (a.prev_id != b.prev_id) return a.prev_id < b.prev_id;
      return a.local_id < b.local_id;
    });

    std::map<int32_t, int32_t> local_to_global;
    std::set<int32_t> used_prev;
    for (const Pair& p : pairs) {
      if (used_prev.count(p.prev_id) || local_to_global.count(p.local_id)) continue;
      used_prev.insert(p.prev_id);
      local_to_global[p.local_id] = p.prev_id;
    }
    for (const auto& [lid, cells] : next_local)
      if (!local_to_global.count(lid)) local_to_global[lid] = next_id++;

    for (int64_t i = 0; i < hw; ++i) {
      int32_t lid = frame_maps[t + 1][i];
      out[(t + 1) * hw + i] = lid == 0 ? 0 : local_to_global[lid];
    }
  }
  return out;
}

}  // namespace stretchlab::instances
