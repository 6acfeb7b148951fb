#pragma once

#include <vector>

#include "stretchlab/core/tensor.hpp"

namespace stretchlab::instances {

struct Center {
  int row = 0, col = 0;
  float score = 0;
};

// Cells >= threshold that have no better-scoring cell within nms_radius
// (Euclidean; equal scores break toward the earlier row-major cell).
// Sorted by descending score, then row-major.
std::vector<Center> extract_centers(const Tensor<float>& heatmap, float threshold,
                                    double nms_radius);

struct Grouping {
  Tensor<int32_t> map;   // [H,W], frame-local ids 1..n_centers
  int orphan_cells = 0;  // foreground cells with no center to attach to
};

// Assign each foreground cell to the center nearest to cell + offset
// (ties to the lower center index).
Grouping group_pixels(const Tensor<float>& seg_mask, const Tensor<float>& offset,
                      const std::vector<Center>& centers);

// Flow-warped greedy IoU association across frames; below-threshold overlaps
// start fresh ids. flows: [T,2,H,W]; flows[t] maps frame t into frame t+1.
Tensor<int32_t> track_instances(const std::vector<Tensor<int32_t>>& frame_maps,
                                const Tensor<float>& flows, double min_track_iou);

}  // namespace stretchlab::instances
