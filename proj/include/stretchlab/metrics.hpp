#pragma once

#include <string>
#include <vector>

#include "stretchlab/core/tensor.hpp"

namespace stretchlab::metrics {

enum class Region { kNear, kFar };

struct EvalSetting {
  std::string name;  // "short" | "mid" | "long"
  int horizon = 4;   // future steps
  Region region = Region::kFar;
};

inline int horizon_of(const std::string& name) {
  if (name == "short") return 4;
  if (name == "mid") return 8;
  return 12;
}

// Foreground IoU pooled over all frames of binary [T,H,W] masks.
// Both empty -> 1.0.
double iou(const Tensor<uint8_t>& pred_seg, const Tensor<uint8_t>& gt_seg);

// Video panoptic quality over [T,H,W] instance id maps: per-frame matches at
// IoU > iou_thresh must agree with the correspondence fixed at each predicted
// id's first matched frame. Pooled TP-IoU / (TP + FP/2 + FN/2); empty
// sequences score 1.0.
double vpq(const Tensor<int32_t>& pred, const Tensor<int32_t>& gt,
           double iou_thresh = 0.5);

// Generalized energy distance from precomputed pairwise distances:
// d_sy[i][j] sample-vs-reference, d_ss[i][i'] sample-vs-sample,
// d_yy[j][j'] reference-vs-reference (single reference -> zero term).
// Returns sqrt(max(D^2, 0)), unscaled.
double ged(const std::vector<std::vector<double>>& d_sy,
           const std::vector<std::vector<double>>& d_ss,
           const std::vector<std::vector<double>>& d_yy);

// Truncate a future-frame sequence to the first `horizon` frames and apply
// the spatial region (near: centered crop of ceil(30m / cell_size) cells,
// far: full grid).
template <typename T>
Tensor<T> apply_setting(const Tensor<T>& seq, const EvalSetting& setting,
                        double cell_size);

}  // namespace stretchlab::metrics
