#include "stretchlab/metrics.hpp"

#include <cmath>
#include <map>

#include "stretchlab/core/errors.hpp"

namespace stretchlab::metrics {

double iou(const Tensor<uint8_t>& pred_seg, const Tensor<uint8_t>& gt_seg) {
  if (!pred_seg.same_shape(gt_seg)) throw NumericError("iou: shape mismatch");
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < pred_seg.size(); ++i) {
    bool p = pred_seg[i] != 0, g = gt_seg[i] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double vpq(const Tensor<int32_t>& pred, const Tensor<int32_t>& gt,
           double iou_thresh) {
  if (!pred.same_shape(gt)) throw NumericError("vpq: shape mismatch");
  int t_len = pred.dim(0);
  int64_t hw = static_cast<int64_t>(pred.dim(1)) * pred.dim(2);

  double tp_iou = 0.0;
  int64_t n_tp = 0, n_fp = 0, n_fn = 0;
  std::map<int32_t, int32_t> correspondence;  // pred id -> gt id at first match

  for (int t = 0; t < t_len; ++t) {
    const int32_t* pm = pred.data.data() + t * hw;
    const int32_t* gm = gt.data.data() + t * hw;

    std::map<int32_t, int64_t> pred_size, gt_size;
    std::map<std::pair<int32_t, int32_t>, int64_t> inter;
    for (int64_t i = 0; i < hw; ++i) {
      if (pm[i] > 0) ++pred_size[pm[i]];
      if (gm[i] > 0) ++gt_size[gm[i]];
      if (pm[i] > 0 && gm[i] > 0) ++inter[{pm[i], gm[i]}];
    }

    // IoU > 0.5 pairs are one-to-one by the usual panoptic argument.
    std::map<int32_t, std::pair<int32_t, double>> frame_match;  // pred -> (gt, iou)
    for (const auto& [pg, cells] : inter) {
      auto [p, g] = pg;
      double uni = static_cast<double>(pred_size[p] + gt_size[g] - cells);
      double v = cells / uni;
      if (v > iou_thresh) frame_match[p] = {g, v};
    }

    int64_t frame_tp = 0;
    for (const auto& [p, m] : frame_match) {
      auto it = correspondence.find(p);
      if (it == correspondence.end()) {
        correspondence[p] = m.first;  // established at the first matched frame
        it = correspondence.find(p);
      }
      if (it->second == m.first) {
        tp_iou += m.second;
        ++frame_tp;
      }
    }
    n_tp += frame_tp;
    n_fp += static_cast<int64_t>(pred_size.size()) - frame_tp;
    n_fn += static_cast<int64_t>(gt_size.size()) - frame_tp;
  }

  double denom = static_cast<double>(n_tp) + 0.5 * n_fp + 0.5 * n_fn;
  return denom == 0.0 ? 1.0 : tp_iou / denom;
}

double ged(const std::vector<std::vector<double>>& d_sy,
           const std::vector<std::vector<double>>& d_ss,
           const std::vector<std::vector<double>>& d_yy) {
  size_t n = d_sy.size();
  if (n < 2) throw ConfigError("ged: need at least 2 prediction samples");
  size_t m = d_sy[0].size();
  if (m < 1) throw ConfigError("ged: need at least 1 reference");
  if (d_ss.size() != n) throw ConfigError("ged: bad sample distance matrix");

  double cross = 0.0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) cross += d_sy[i][j];
  cross /= static_cast<double>(n * m);

  double self_s = 0.0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j)
      if (i != j) self_s += d_ss[i][j];
  self_s /= static_cast<double>(n * (n - 1));

  double self_y = 0.0;
  if (m >= 2) {
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < m; ++j)
        if (i != j) self_y += d_yy[i][j];
    self_y /= static_cast<double>(m * (m - 1));
  }

  double d2 = 2.0 * cross - self_s - self_y;
  return std::sqrt(std::max(d2, 0.0));
}

template <typename T>
Tensor<T> apply_setting(const Tensor<T>& seq, const EvalSetting& setting,
                        double cell_size) {
  int t_len = seq.dim(0);
  int h = seq.dim(1), w = seq.dim(2);
  if (setting.horizon > t_len)
    throw ConfigError("apply_setting: horizon " + std::to_string(setting.horizon) +
                      " exceeds available future frames " + std::to_string(t_len));
  int crop_h = h, crop_w = w, off_h = 0, off_w = 0;
  if (setting.region == Region::kNear) {
    int crop = static_cast<int>(std::ceil(30.0 / cell_size));
    if (crop > h || crop > w)
      throw ConfigError("apply_setting: near crop larger than the grid");
    crop_h = crop_w = crop;
    off_h = (h - crop) / 2;
    off_w = (w - crop) / 2;
  }
  Tensor<T> out({setting.horizon, crop_h, crop_w});
  for (int t = 0; t < setting.horizon; ++t)
    for (int r = 0; r < crop_h; ++r)
      for (int c = 0; c < crop_w; ++c)
        out[(static_cast<int64_t>(t) * crop_h + r) * crop_w + c] =
            seq[(static_cast<int64_t>(t) * h + off_h + r) * w + off_w + c];
  return out;
}

template Tensor<int32_t> apply_setting<int32_t>(const Tensor<int32_t>&,
                                                const EvalSetting&, double);
template Tensor<uint8_t> apply_setting<uint8_t>(const Tensor<uint8_t>&,
                                                const EvalSetting&, double);
template Tensor<float> apply_setting<float>(const Tensor<float>&,
                                            const EvalSetting&, double);

}  // namespace stretchlab::metrics
