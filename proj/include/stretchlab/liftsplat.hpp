#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "stretchlab/core/errors.hpp"
#include "stretchlab/core/nn.hpp"
#include "stretchlab/world.hpp"

namespace stretchlab::liftsplat {

struct FrustumConfig {
  double d_min = 2.0;
  double d_max = 20.0;
  double d_size = 1.0;

  int n_depth() const {
    return static_cast<int>(std::lround((d_max - d_min) / d_size));
  }
  void validate() const;
};

struct GridSpec {
  int cells = 64;
  double cell_size = 0.5;

  double extent() const { return cells * cell_size; }
  double origin() const { return -extent() / 2.0; }

  // Half-open cell assignment; -1 when outside the extent.
  int32_t cell_index(double x, double y) const {
    int r = static_cast<int>(std::floor((x - origin()) / cell_size));
    int c = static_cast<int>(std::floor((y - origin()) / cell_size));
    if (r < 0 || r >= cells || c < 0 || c >= cells) return -1;
    return static_cast<int32_t>(r) * cells + c;
  }

  void validate() const;
};

void validate_bev_config(const GridSpec& grid, int channels);

// Per-timestep BEV feature grid (outside any autodiff pass).
template <typename T>
struct BEVState {
  Tensor<T> features;  // [C, H, W]
  GridSpec grid;
};

// ---- geometry (camera pixels <-> vehicle frame points) ----

// Point at pixel (u,v) with z-depth d, in vehicle frame.
Eigen::Vector3d backproject(const world::CameraSpec& cam, double u, double v,
                            double depth);
// Returns (u, v, depth); depth <= 0 means behind the camera.
Eigen::Vector3d project(const world::CameraSpec& cam, const Eigen::Vector3d& p);

// Precomputed BEV cell index for every (depth bin, feature pixel) of one
// camera. Feature pixels sit at the centers of downsample x downsample
// patches; depth bins sample at bin centers.
struct LiftGeometry {
  int feat_h = 0, feat_w = 0, n_depth = 0;
  std::shared_ptr<const std::vector<int32_t>> cell_of;  // [n_depth * feat_h * feat_w]
};

LiftGeometry make_lift_geometry(const world::CameraSpec& cam, int image_h,
                                int image_w, int downsample,
                                const FrustumConfig& frustum, const GridSpec& grid);

// Explicit lifted point set (reference path; the training path uses the fused
// splat_pool op, and tests cross-check the two).
struct LiftedPoint {
  Eigen::Vector3d p;           // vehicle frame
  std::vector<float> feature;  // already weighted by depth probability
};

std::vector<LiftedPoint> lift(const Tensor<float>& features,
                              const Tensor<float>& depth_logits,
                              const FrustumConfig& frustum,
                              const world::CameraSpec& cam, int image_h,
                              int image_w, int downsample);

Tensor<float> splat(const std::vector<LiftedPoint>& points, const GridSpec& grid,
                    int channels);

// ---- trainable image encoder ----

// Small strided extractor to 1/4 resolution with feature and depth heads.
// Normalized pixel coordinates ride along as two extra input channels: depth
// from the ground-contact row is a coordinate-dependent cue that plain
// translation-equivariant convolutions cannot express.
template <typename T>
struct ImageEncoder {
  Conv2d<T> c1, c2, c3, c4;
  Conv2d<T> feat_head, depth_head;
  int out_channels = 0, n_depth = 0;

  void init(int width, int out_channels_, int n_depth_, Rng& rng) {
    out_channels = out_channels_;
    n_depth = n_depth_;
    c1.init(5, width, 3, 2, rng);
    c2.init(width, width, 3, 2, rng);
    c3.init(width, width, 3, 1, rng);
    c4.init(width, width, 3, 1, rng);
    feat_head.init(width, out_channels_, 1, 1, rng);
    depth_head.init(width, n_depth_, 1, 1, rng);
  }

  // image [3,h,w] -> (features [C,h/4,w/4], depth_logits [D,h/4,w/4])
  std::pair<Var<T>, Var<T>> forward(Binder<T>& B, Var<T> image) const {
    Tape<T>& tp = B.tape();
    const Tensor<T>& img = tp.val(image);
    int h = img.dim(1), w = img.dim(2);
    Tensor<T> coords({2, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        coords.at(0, y, x) = T(2) * (y + T(0.5)) / h - T(1);
        coords.at(1, y, x) = T(2) * (x + T(0.5)) / w - T(1);
      }
    Var<T> in = tp.concat_ch({image, tp.constant(std::move(coords))});
    Var<T> x = tp.leaky_relu(c1(B, in));
    x = tp.leaky_relu(c2(B, x));
    x = tp.leaky_relu(c3(B, x));
    x = tp.leaky_relu(c4(B, x));
    return {feat_head(B, x), depth_head(B, x)};
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    c1.reg(r, p + ".c1");
    c2.reg(r, p + ".c2");
    c3.reg(r, p + ".c3");
    c4.reg(r, p + ".c4");
    feat_head.reg(r, p + ".feat");
    depth_head.reg(r, p + ".depth");
  }
};

// Encode, lift and splat every camera of a frame, summing per cell.
// images: [n_cam,3,h,w] constant tensor; geoms: one per camera.
template <typename T>
Var<T> fuse_frame(Binder<T>& B, const ImageEncoder<T>& encoder,
                  const Tensor<T>& images, const std::vector<LiftGeometry>& geoms,
                  const GridSpec& grid) {
  Tape<T>& tp = B.tape();
  int n_cam = images.dim(0);
  if (static_cast<int>(geoms.size()) != n_cam)
    throw ConfigError("fuse_frame: geometry count does not match cameras");
  int h = images.dim(2), w = images.dim(3);
  int64_t chw = static_cast<int64_t>(3) * h * w;

  Var<T> acc{};
  for (int ci = 0; ci < n_cam; ++ci) {
    Tensor<T> img({3, h, w});
    std::copy_n(images.data.begin() + ci * chw, chw, img.data.begin());
    auto [feat, dlog] = encoder.forward(B, tp.constant(std::move(img)));
    Var<T> probs = tp.softmax_ch(dlog);
    const LiftGeometry& g = geoms[ci];
    int64_t pix = static_cast<int64_t>(g.feat_h) * g.feat_w;
    Var<T> f2 = tp.reshape(feat, {encoder.out_channels, static_cast<int>(pix)});
    Var<T> p2 = tp.reshape(probs, {g.n_depth, static_cast<int>(pix)});
    Var<T> bev = tp.splat_pool(f2, p2, g.cell_of, grid.cells * grid.cells);
    acc = acc.valid() ? tp.add(acc, bev) : bev;
  }
  return tp.reshape(acc, {encoder.out_channels, grid.cells, grid.cells});
}

}  // namespace stretchlab::liftsplat
