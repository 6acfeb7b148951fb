#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "stretchlab/liftsplat.hpp"
#include "test_util.hpp"

using namespace stretchlab;
using namespace stretchlab::liftsplat;

namespace {

world::CameraSpec random_camera(Rng& rng) {
  world::CameraSpec cam;
  double f = rng.uniform(10.0, 60.0);
  cam.intrinsics << f, 0, rng.uniform(8.0, 40.0), 0, f, rng.uniform(4.0, 20.0), 0, 0, 1;
  double yaw = rng.uniform(0.0, 6.28);
  Eigen::Matrix3d base;
  base << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  Eigen::Matrix3d rz;
  rz << std::cos(yaw), -std::sin(yaw), 0, std::sin(yaw), std::cos(yaw), 0, 0, 0, 1;
  cam.rotation = rz * base;
  cam.translation =
      Eigen::Vector3d(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 2.5));
  return cam;
}

}  // namespace

TEST_CASE("frustum validation") {
  FrustumConfig f;
  CHECK_NOTHROW(f.validate());
  CHECK(f.n_depth() == 18);
  f.d_size = 0.7;  // (20-2)/0.7 is not an integer
  CHECK_THROWS_AS(f.validate(), ConfigError);
  f = FrustumConfig{};
  f.d_min = 25;
  CHECK_THROWS_AS(f.validate(), ConfigError);
}

TEST_CASE("paper-scale BEV shape is accepted") {
  GridSpec grid{200, 0.5};
  CHECK_NOTHROW(validate_bev_config(grid, 64));
}

TEST_CASE("geometry round trip on random configurations") {
  Rng rng(71);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    world::CameraSpec cam = random_camera(rng);
    double u = rng.uniform(0.0, 64.0);
    double v = rng.uniform(0.0, 32.0);
    double d = rng.uniform(0.5, 50.0);
    Eigen::Vector3d p = backproject(cam, u, v, d);
    Eigen::Vector3d uvd = project(cam, p);
    worst = std::max({worst, std::abs(uvd.x() - u), std::abs(uvd.y() - v),
                      std::abs(uvd.z() - d)});
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("ray through the optical center") {
  world::CameraSpec cam;
  cam.intrinsics << 20, 0, 16, 0, 20, 8, 0, 0, 1;
  cam.rotation = Eigen::Matrix3d::Identity();
  cam.translation = Eigen::Vector3d::Zero();
  Eigen::Vector3d p = backproject(cam, 16.0, 8.0, 3.5);
  CHECK(p.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.y() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p.z() == doctest::Approx(3.5));
}

TEST_CASE("lift: per-pixel depth mass is normalized") {
  FrustumConfig fr{1.0, 5.0, 1.0};
  world::CameraSpec cam;
  cam.intrinsics << 8, 0, 8, 0, 8, 4, 0, 0, 1;
  Eigen::Matrix3d base;
  base << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  cam.rotation = base;
  cam.translation = Eigen::Vector3d(0, 0, 1.0);

  int fh = 2, fw = 4;
  Tensor<float> feats({3, fh, fw}, 1.0f);
  Rng rng(3);
  Tensor<float> logits = Tensor<float>::randn({fr.n_depth(), fh, fw}, rng);
  auto pts = lift(feats, logits, fr, cam, 8, 16, 4);
  REQUIRE(static_cast<int>(pts.size()) == fr.n_depth() * fh * fw);

  for (int pix = 0; pix < fh * fw; ++pix) {
    double mass = 0;
    for (int d = 0; d < fr.n_depth(); ++d)
      mass += pts[pix * fr.n_depth() + d].feature[0];
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("lift: one-hot depth concentrates at the bin center") {
  FrustumConfig fr{1.0, 5.0, 1.0};
  world::CameraSpec cam;
  cam.intrinsics << 8, 0, 8, 0, 8, 4, 0, 0, 1;
  Eigen::Matrix3d base;
  base << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  cam.rotation = base;
  cam.translation = Eigen::Vector3d::Zero();

  int j = 2;  // bin center 1.0 + 2.5 = 3.5
  Tensor<float> feats({1, 1, 1}, 2.0f);
  Tensor<float> logits({fr.n_depth(), 1, 1}, -40.0f);
  logits[j] = 40.0f;
  auto pts = lift(feats, logits, fr, cam, 4, 4, 4);
  double expected_depth = fr.d_min + (j + 0.5) * fr.d_size;
  for (int d = 0; d < fr.n_depth(); ++d) {
    Eigen::Vector3d p_cam = cam.rotation.transpose() * (pts[d].p - cam.translation);
    if (d == j) {
      CHECK(pts[d].feature[0] == doctest::Approx(2.0).epsilon(1e-6));
      CHECK(p_cam.z() == doctest::Approx(expected_depth));
    } else {
      CHECK(pts[d].feature[0] < 1e-6);
    }
  }
}

TEST_CASE("splat: empty, conservation, additivity") {
  GridSpec grid{8, 1.0};
  CHECK(splat({}, grid, 2).all_finite());
  Tensor<float> zero = splat({}, grid, 2);
  for (float v : zero.data) CHECK(v == 0.0f);

  Rng rng(5);
  std::vector<LiftedPoint> pts;
  double total_in = 0;
  for (int i = 0; i < 200; ++i) {
    LiftedPoint p;
    p.p = Eigen::Vector3d(rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(0, 3));
    p.feature = {static_cast<float>(rng.uniform(0, 1)),
                 static_cast<float>(rng.uniform(0, 1))};
    if (grid.cell_index(p.p.x(), p.p.y()) >= 0)
      total_in += p.feature[0] + p.feature[1];
    pts.push_back(p);
  }
  Tensor<float> bev = splat(pts, grid, 2);
  double total_bev = 0;
  for (float v : bev.data) total_bev += v;
  CHECK(total_bev == doctest::Approx(total_in).epsilon(1e-5));

  LiftedPoint p;
  p.p = Eigen::Vector3d(0.5, 0.5, 0);
  p.feature = {1.0f, 3.0f};
  Tensor<float> one = splat({p}, grid, 2);
  Tensor<float> two = splat({p, p}, grid, 2);
  for (int64_t i = 0; i < one.size(); ++i)
    CHECK(two[i] == doctest::Approx(2.0f * one[i]));
}

TEST_CASE("image encoder shapes and uniform depth at zero") {
  Rng rng(9);
  ImageEncoder<float> enc;
  enc.init(8, 6, 5, rng);

  Tape<float> tp;
  Binder<float> B(tp, false);
  Tensor<float> img({3, 32, 64});
  auto [feat, dlog] = enc.forward(B, tp.constant(img));
  CHECK(tp.val(feat).shape == std::vector<int>{6, 8, 16});
  CHECK(tp.val(dlog).shape == std::vector<int>{5, 8, 16});

  // zero-initialized depth head + zero input -> uniform depth distribution
  enc.depth_head.zero();
  Tape<float> tp2;
  Binder<float> B2(tp2, false);
  auto [f2, d2] = enc.forward(B2, tp2.constant(img));
  auto probs = tp2.softmax_ch(d2);
  for (float v : tp2.val(probs).data) CHECK(v == doctest::Approx(0.2).epsilon(1e-6));
}

TEST_CASE("image encoder gradient matches finite differences") {
  Rng rng(13);
  ImageEncoder<double> enc;
  enc.init(4, 3, 4, rng);
  Tensor<double> img = Tensor<double>::randn({3, 8, 16}, rng, 0.5);

  std::vector<Tensor<double>*> params;
  ParamRegistry<double> reg;
  enc.reg(reg, "enc");
  for (const auto& e : reg.entries()) params.push_back(e.value);

  auto eval = [&]() {
    Tape<double> tp;
    Binder<double> B(tp, false);
    auto [f, d] = enc.forward(B, tp.constant(img));
    auto out = tp.sum_all(tp.mul(f, f));
    auto out2 = tp.sum_all(tp.mul(tp.softmax_ch(d), tp.softmax_ch(d)));
    return tp.val(tp.lincomb({{1.0, out}, {2.0, out2}}))[0];
  };
  auto grads = [&]() {
    Tape<double> tp;
    Binder<double> B(tp, true);
    auto [f, d] = enc.forward(B, tp.constant(img));
    auto out = tp.sum_all(tp.mul(f, f));
    auto out2 = tp.sum_all(tp.mul(tp.softmax_ch(d), tp.softmax_ch(d)));
    tp.backward(tp.lincomb({{1.0, out}, {2.0, out2}}));
    std::vector<Tensor<double>> g;
    for (auto* p : params) g.push_back(tp.grad(B.lookup(*p)));
    return g;
  };
  auto res = testutil::finite_diff_check(params, eval, grads, 1e-5, 24);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("fuse_frame equals the explicit lift+splat path") {
  Rng rng(21);
  FrustumConfig fr{1.0, 7.0, 1.0};
  GridSpec grid{8, 1.0};
  world::CameraRig rig = world::CameraRig::surround(1, 8, 16, 90.0, 1.5);

  ImageEncoder<float> enc;
  enc.init(6, 4, fr.n_depth(), rng);
  Tensor<float> images = Tensor<float>::randn({1, 3, 8, 16}, rng, 0.3);

  std::vector<LiftGeometry> geoms = {
      make_lift_geometry(rig.cameras[0], 8, 16, 4, fr, grid)};
  Tape<float> tp;
  Binder<float> B(tp, false);
  Var<float> fused = fuse_frame(B, enc, images, geoms, grid);

  // reference: run the encoder, then the explicit point path
  Tensor<float> img({3, 8, 16});
  std::copy_n(images.data.begin(), img.size(), img.data.begin());
  Tape<float> tp2;
  Binder<float> B2(tp2, false);
  auto [feat, dlog] = enc.forward(B2, tp2.constant(img));
  auto pts = lift(tp2.val(feat), tp2.val(dlog), fr, rig.cameras[0], 8, 16, 4);
  Tensor<float> ref = splat(pts, grid, 4);

  REQUIRE(tp.val(fused).shape == ref.shape);
  for (int64_t i = 0; i < ref.size(); ++i)
    CHECK(tp.val(fused)[i] == doctest::Approx(ref[i]).epsilon(1e-4));
}

TEST_CASE("duplicated camera doubles its contribution") {
  Rng rng(31);
  FrustumConfig fr{1.0, 7.0, 1.0};
  GridSpec grid{8, 1.0};
  world::CameraRig one = world::CameraRig::surround(1, 8, 16, 90.0, 1.5);

  ImageEncoder<float> enc;
  enc.init(6, 4, fr.n_depth(), rng);
  Tensor<float> img1 = Tensor<float>::randn({1, 3, 8, 16}, rng, 0.3);
  Tensor<float> img2({2, 3, 8, 16});
  std::copy_n(img1.data.begin(), img1.size(), img2.data.begin());
  std::copy_n(img1.data.begin(), img1.size(), img2.data.begin() + img1.size());

  LiftGeometry g = make_lift_geometry(one.cameras[0], 8, 16, 4, fr, grid);
  Tape<float> tp;
  Binder<float> B(tp, false);
  Var<float> single = fuse_frame(B, enc, img1, {g}, grid);
  Var<float> doubled = fuse_frame(B, enc, img2, {g, g}, grid);
  for (int64_t i = 0; i < tp.val(single).size(); ++i)
    CHECK(tp.val(doubled)[i] == doctest::Approx(2.0f * tp.val(single)[i]).epsilon(1e-5));
}

TEST_CASE("splat equivariance under one-cell camera translation") {
  Rng rng(41);
  FrustumConfig fr{1.0, 7.0, 1.0};
  GridSpec grid{12, 1.0};
  world::CameraRig rig = world::CameraRig::surround(1, 8, 16, 90.0, 1.5);

  Tensor<float> feats = Tensor<float>::randn({2, 2, 4}, rng, 0.5);
  Tensor<float> logits = Tensor<float>::randn({fr.n_depth(), 2, 4}, rng, 0.5);

  world::CameraSpec cam0 = rig.cameras[0];
  world::CameraSpec cam1 = cam0;
  cam1.translation.x() += grid.cell_size;

  Tensor<float> g0 = splat(lift(feats, logits, fr, cam0, 8, 16, 4), grid, 2);
  Tensor<float> g1 = splat(lift(feats, logits, fr, cam1, 8, 16, 4), grid, 2);

  // interior cells: shifting the camera +x moves mass one row up in x
  for (int c = 0; c < 2; ++c)
    for (int r = 1; r < grid.cells - 1; ++r)
      for (int cc = 0; cc < grid.cells; ++cc)
        CHECK(g1.at(c, r, cc) == doctest::Approx(g0.at(c, r - 1, cc)).epsilon(1e-5));
}
