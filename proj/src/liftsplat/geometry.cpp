#include <cmath>

#include "stretchlab/liftsplat.hpp"

namespace stretchlab::liftsplat {

void FrustumConfig::validate() const {
  if (d_min <= 0 || d_min >= d_max) throw ConfigError("frustum: need 0 < d_min < d_max");
  if (d_size <= 0) throw ConfigError("frustum: d_size must be > 0");
  double bins = (d_max - d_min) / d_size;
  if (std::abs(bins - std::lround(bins)) > 1e-9)
    throw ConfigError("frustum: depth range must be an integer number of slices");
}

void GridSpec::validate() const {
  if (cells <= 0) throw ConfigError("grid: cells must be > 0");
  if (cell_size <= 0) throw ConfigError("grid: cell_size must be > 0");
  if (cells % 4 != 0) throw ConfigError("grid: cells must be divisible by 4");
}

void validate_bev_config(const GridSpec& grid, int channels) {
  grid.validate();
  if (channels <= 0) throw ConfigError("bev: channels must be > 0");
}

Eigen::Vector3d backproject(const world::CameraSpec& cam, double u, double v,
                            double depth) {
  Eigen::Vector3d ray = cam.intrinsics.inverse() * Eigen::Vector3d(u, v, 1.0);
  Eigen::Vector3d p_cam = ray * depth;  // z-depth convention: p_cam.z() == depth
  return cam.rotation * p_cam + cam.translation;
}

Eigen::Vector3d project(const world::CameraSpec& cam, const Eigen::Vector3d& p) {
  Eigen::Vector3d p_cam = cam.rotation.transpose() * (p - cam.translation);
  Eigen::Vector3d uvw = cam.intrinsics * p_cam;
  if (std::abs(p_cam.z()) < 1e-12) return Eigen::Vector3d(0, 0, p_cam.z());
  return Eigen::Vector3d(uvw.x() / uvw.z(), uvw.y() / uvw.z(), p_cam.z());
}

LiftGeometry make_lift_geometry(const world::CameraSpec& cam, int image_h,
                                int image_w, int downsample,
                                const FrustumConfig& frustum, const GridSpec& grid) {
  frustum.validate();
  grid.validate();
  if (image_h % downsample != 0 || image_w % downsample != 0)
    throw ConfigError("lift: image size must be divisible by the downsample factor");

  LiftGeometry g;
  g.feat_h = image_h / downsample;
  g.feat_w = image_w / downsample;
  g.n_depth = frustum.n_depth();

  auto cells = std::make_shared<std::vector<int32_t>>(
      static_cast<size_t>(g.n_depth) * g.feat_h * g.feat_w);
  int64_t pix = static_cast<int64_t>(g.feat_h) * g.feat_w;
  for (int d = 0; d < g.n_depth; ++d) {
    double depth = frustum.d_min + (d + 0.5) * frustum.d_size;  // bin center
    for (int y = 0; y < g.feat_h; ++y)
      for (int x = 0; x < g.feat_w; ++x) {
        double u = (x + 0.5) * downsample;
        double v = (y + 0.5) * downsample;
        Eigen::Vector3d p = backproject(cam, u, v, depth);
        (*cells)[d * pix + y * g.feat_w + x] = grid.cell_index(p.x(), p.y());
      }
  }
  g.cell_of = std::move(cells);
  return g;
}

std::vector<LiftedPoint> lift(const Tensor<float>& features,
                              const Tensor<float>& depth_logits,
                              const FrustumConfig& frustum,
                              const world::CameraSpec& cam, int image_h,
                              int image_w, int downsample) {
  frustum.validate();
  if (std::abs(cam.intrinsics.determinant()) < 1e-12)
    throw ConfigError("lift: intrinsics not invertible");
  int c = features.dim(0), fh = features.dim(1), fw = features.dim(2);
  int n_depth = depth_logits.dim(0);
  if (n_depth != frustum.n_depth())
    throw ConfigError("lift: depth logit count does not match frustum");
  if (depth_logits.dim(1) != fh || depth_logits.dim(2) != fw)
    throw ConfigError("lift: feature / depth resolution mismatch");
  if (image_h / downsample != fh || image_w / downsample != fw)
    throw ConfigError("lift: feature resolution does not match image");

  std::vector<LiftedPoint> out;
  out.reserve(static_cast<size_t>(n_depth) * fh * fw);
  for (int y = 0; y < fh; ++y)
    for (int x = 0; x < fw; ++x) {
      // softmax over the depth axis for this pixel
      float mx = depth_logits.at(0, y, x);
      for (int d = 1; d < n_depth; ++d) mx = std::max(mx, depth_logits.at(d, y, x));
      double z = 0;
      for (int d = 0; d < n_depth; ++d) z += std::exp(depth_logits.at(d, y, x) - mx);
      double u = (x + 0.5) * downsample;
      double v = (y + 0.5) * downsample;
      for (int d = 0; d < n_depth; ++d) {
        double prob = std::exp(depth_logits.at(d, y, x) - mx) / z;
        double depth = frustum.d_min + (d + 0.5) * frustum.d_size;
        LiftedPoint pt;
        pt.p = backproject(cam, u, v, depth);
        pt.feature.resize(c);
        for (int ci = 0; ci < c; ++ci)
          pt.feature[ci] = features.at(ci, y, x) * static_cast<float>(prob);
        out.push_back(std::move(pt));
      }
    }
  return out;
}

Tensor<float> splat(const std::vector<LiftedPoint>& points, const GridSpec& grid,
                    int channels) {
  Tensor<float> out({channels, grid.cells, grid.cells});
  for (const LiftedPoint& pt : points) {
    int32_t cell = grid.cell_index(pt.p.x(), pt.p.y());
    if (cell < 0) continue;
    for (int c = 0; c < channels; ++c)
      out[static_cast<int64_t>(c) * grid.cells * grid.cells + cell] += pt.feature[c];
  }
  return out;
}

}  // namespace stretchlab::liftsplat
