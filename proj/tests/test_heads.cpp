#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "stretchlab/dynamics.hpp"
#include "stretchlab/heads.hpp"
#include "test_util.hpp"

using namespace stretchlab;
using namespace stretchlab::heads;

namespace {

world::LabelsSlice make_slice(int n) {
  world::LabelsSlice s;
  s.instance = Tensor<int32_t>({n, n});
  s.segmentation = Tensor<float>({n, n});
  s.centers = Tensor<float>({n, n});
  s.offsets = Tensor<float>({2, n, n});
  s.flows = Tensor<float>({2, n, n});
  return s;
}

world::LabelsSlice random_slice(int n, uint64_t seed) {
  world::LabelsSlice s = make_slice(n);
  Rng rng(seed);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      if (rng.bernoulli(0.3)) {
        s.instance.at(r, c) = 1 + static_cast<int32_t>(rng.below(3));
        s.segmentation.at(r, c) = 1.0f;
      }
      s.centers.at(r, c) = static_cast<float>(rng.uniform(0, 1));
      for (int ch = 0; ch < 2; ++ch) {
        s.offsets.at(ch, r, c) = static_cast<float>(rng.uniform(-2, 2));
        s.flows.at(ch, r, c) = static_cast<float>(rng.uniform(-2, 2));
      }
    }
  return s;
}

}  // namespace

TEST_CASE("decoder: shapes, determinism, gradients") {
  Rng rng(41);
  ModalityDecoder<double> dec;
  dec.init(4, 6, rng);
  Tensor<double> s = Tensor<double>::randn({4, 8, 8}, rng);

  Tape<double> tp;
  Binder<double> B(tp, false);
  Modalities<double> m1 = dec.forward(B, tp.constant(s));
  CHECK(tp.val(m1.seg_logits).shape == std::vector<int>{2, 8, 8});
  CHECK(tp.val(m1.center).shape == std::vector<int>{1, 8, 8});
  CHECK(tp.val(m1.offset).shape == std::vector<int>{2, 8, 8});
  CHECK(tp.val(m1.flow).shape == std::vector<int>{2, 8, 8});
  for (double v : tp.val(m1.center).data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  Modalities<double> m2 = dec.forward(B, tp.constant(s));
  CHECK(tp.val(m1.seg_logits).data == tp.val(m2.seg_logits).data);

  // gradient of the full supervised loss against finite differences
  world::LabelsSlice gt_slice = random_slice(8, 42);
  LabelTargets<double> gt = to_targets<double>(gt_slice);
  ParamRegistry<double> reg;
  dec.reg(reg, "dec");
  std::vector<Tensor<double>*> params;
  for (const auto& e : reg.entries()) params.push_back(e.value);

  auto loss_of = [&](Tape<double>& t2, Binder<double>& B2) {
    Modalities<double> m = dec.forward(B2, t2.constant(s));
    ModalityLosses<double> l = modality_losses(B2, m, gt);
    return t2.lincomb({{1.0, l.seg}, {10.0, l.center}, {1.0, l.offset}, {1.0, l.flow}});
  };
  auto eval = [&]() {
    Tape<double> t2;
    Binder<double> B2(t2, false);
    return t2.val(loss_of(t2, B2))[0];
  };
  auto grads = [&]() {
    Tape<double> t2;
    Binder<double> B2(t2, true);
    t2.backward(loss_of(t2, B2));
    std::vector<Tensor<double>> g;
    for (auto* p : params) g.push_back(t2.grad(B2.lookup(*p)));
    return g;
  };
  auto res = testutil::finite_diff_check(params, eval, grads, 1e-5, 16);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("losses vanish at the perfect prediction") {
  int n = 8;
  world::LabelsSlice gt_slice = random_slice(n, 43);
  LabelTargets<float> gt = to_targets<float>(gt_slice);

  Tape<float> tp;
  Binder<float> B(tp, false);
  Tensor<float> seg_logits({2, n, n});
  for (int64_t i = 0; i < gt.seg_class.size(); ++i) {
    seg_logits[i] = gt.seg_class[i] == 0 ? 30.0f : -30.0f;
    seg_logits[gt.seg_class.size() + i] = gt.seg_class[i] == 1 ? 30.0f : -30.0f;
  }
  Tensor<float> center({1, n, n});
  std::copy(gt.centers.data.begin(), gt.centers.data.end(), center.data.begin());
  Modalities<float> perfect{tp.constant(seg_logits), tp.constant(center),
                            tp.constant(gt.offsets), tp.constant(gt.flows)};
  ModalityLosses<float> l = modality_losses(B, perfect, gt);
  CHECK(tp.val(l.seg)[0] < 1e-6);
  CHECK(tp.val(l.center)[0] < 1e-6);
  CHECK(tp.val(l.offset)[0] < 1e-6);
  CHECK(tp.val(l.flow)[0] < 1e-6);
}

TEST_CASE("empty foreground zeroes the masked losses") {
  int n = 6;
  world::LabelsSlice gt_slice = make_slice(n);  // all background
  LabelTargets<float> gt = to_targets<float>(gt_slice);

  Rng rng(44);
  Tape<float> tp;
  Binder<float> B(tp, false);
  Modalities<float> pred{tp.constant(Tensor<float>::randn({2, n, n}, rng)),
                         tp.constant(Tensor<float>({1, n, n}, 0.5f)),
                         tp.constant(Tensor<float>::randn({2, n, n}, rng)),
                         tp.constant(Tensor<float>::randn({2, n, n}, rng))};
  ModalityLosses<float> l = modality_losses(B, pred, gt);
  CHECK(tp.val(l.offset)[0] == 0.0f);
  CHECK(tp.val(l.flow)[0] == 0.0f);
}

TEST_CASE("hand-built offset loss: one cell, error (1,0)") {
  int n = 2;
  world::LabelsSlice gt_slice = make_slice(n);
  gt_slice.instance.at(0, 1) = 1;
  gt_slice.segmentation.at(0, 1) = 1.0f;
  gt_slice.offsets.at(0, 0, 1) = 0.5f;
  gt_slice.offsets.at(1, 0, 1) = -0.25f;
  LabelTargets<float> gt = to_targets<float>(gt_slice);

  Tensor<float> pred_offset({2, n, n});
  pred_offset.at(0, 0, 1) = gt_slice.offsets.at(0, 0, 1) + 1.0f;  // row error 1
  pred_offset.at(1, 0, 1) = gt_slice.offsets.at(1, 0, 1);         // col error 0

  Tape<float> tp;
  Binder<float> B(tp, false);
  Modalities<float> pred{tp.constant(Tensor<float>({2, n, n})),
                         tp.constant(Tensor<float>({1, n, n})),
                         tp.constant(pred_offset),
                         tp.constant(Tensor<float>({2, n, n}))};
  ModalityLosses<float> l = modality_losses(B, pred, gt);
  CHECK(tp.val(l.offset)[0] == doctest::Approx(1.0));
}

TEST_CASE("masked losses ignore background predictions") {
  int n = 8;
  world::LabelsSlice gt_slice = random_slice(n, 45);
  LabelTargets<float> gt = to_targets<float>(gt_slice);

  Rng rng(46);
  Tensor<float> off = Tensor<float>::randn({2, n, n}, rng);
  Tensor<float> off_mutated = off;
  for (int64_t i = 0; i < gt.mask.size(); ++i)
    if (gt.mask[i] < 0.5f) {
      off_mutated[i] += 37.0f;
      off_mutated[gt.mask.size() + i] -= 11.0f;
    }

  Tape<float> tp;
  Binder<float> B(tp, false);
  auto base = tp.val(tp.masked_l1(tp.constant(off), gt.offsets, gt.mask))[0];
  auto mutated =
      tp.val(tp.masked_l1(tp.constant(off_mutated), gt.offsets, gt.mask))[0];
  CHECK(base == mutated);
}

TEST_CASE("label encoder: shape, determinism, baseline fixtures") {
  Rng rng(2024);
  LabelEncoder<float> enc;
  enc.init(8, 4, rng);

  Tape<float> tp;
  Binder<float> B(tp, false);
  Var<float> zero_out = enc.forward(B, tp.constant(Tensor<float>({6, 16, 16})));
  CHECK(tp.val(zero_out).shape == std::vector<int>{4, 4, 4});
  // zero-bias initialization pins the zero-label baseline at exactly zero
  for (float v : tp.val(zero_out).data) CHECK(v == 0.0f);

  Var<float> again = enc.forward(B, tp.constant(Tensor<float>({6, 16, 16})));
  CHECK(tp.val(again).data == tp.val(zero_out).data);

  // recorded baseline for a constant nonzero input at this seed
  Var<float> ones_out = enc.forward(B, tp.constant(Tensor<float>({6, 16, 16}, 1.0f)));
  const Tensor<float>& v = tp.val(ones_out);
  double mean = 0;
  for (float x : v.data) mean += x;
  mean /= static_cast<double>(v.size());
  CHECK(mean == doctest::Approx(0.414602545).epsilon(1e-6));
  CHECK(v[0] == doctest::Approx(-0.102589138).epsilon(1e-6));
  CHECK(v[21] == doctest::Approx(0.609955072).epsilon(1e-6));
  CHECK(v[63] == doctest::Approx(0.930834591).epsilon(1e-6));
}

TEST_CASE("posterior with zeroed label encodings matches the recorded baseline") {
  using namespace stretchlab::dynamics;
  DynamicsSizes<float> sz;
  sz.state_channels = 4;
  sz.enc_channels = 4;
  sz.latent_channels = 3;
  sz.z_channels = 3;
  sz.enc_width = 6;
  sz.dec_width = 6;
  sz.net_width = 6;
  sz.gru_hidden = 6;
  sz.cond_len = 3;
  DynamicsModel<float> m;
  Rng mr(4321);
  m.init(sz, Variant::kStretchBevP, mr);

  Rng sr(777);
  Tape<float> tp;
  Binder<float> B(tp, false);
  std::vector<Var<float>> sv;
  for (int t = 0; t < 4; ++t)
    sv.push_back(tp.constant(Tensor<float>::randn({4, 8, 8}, sr, 0.5f)));
  std::vector<Var<float>> lv(4);
  for (int t = 1; t < 4; ++t) lv[t] = tp.constant(Tensor<float>({4, 2, 2}));
  Rng noise(555);
  ElboResult<float> e = elbo(B, m, sv, &lv, noise);
  CHECK(tp.val(e.state_loglik)[0] == doctest::Approx(-1933.62915).epsilon(1e-5));
  CHECK(tp.val(e.kl_first)[0] == doctest::Approx(0.00679862499).epsilon(1e-5));
  CHECK(tp.val(e.kl_z_sum)[0] == doctest::Approx(0.50298053).epsilon(1e-5));
}
