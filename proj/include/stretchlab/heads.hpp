#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "stretchlab/core/nn.hpp"
#include "stretchlab/world.hpp"

namespace stretchlab::heads {

template <typename T>
struct Modalities {
  Var<T> seg_logits;  // [2,H,W]
  Var<T> center;      // [1,H,W] in [0,1]
  Var<T> offset;      // [2,H,W]
  Var<T> flow;        // [2,H,W]
};

// Shared conv trunk with four 1x1 branches; strictly per-frame.
template <typename T>
struct ModalityDecoder {
  Conv2d<T> t1, t2;
  Conv2d<T> seg, center, offset, flow;

  void init(int in_channels, int width, Rng& rng) {
    t1.init(in_channels, width, 3, 1, rng);
    t2.init(width, width, 3, 1, rng);
    seg.init(width, 2, 1, 1, rng);
    center.init(width, 1, 1, 1, rng);
    offset.init(width, 2, 1, 1, rng);
    flow.init(width, 2, 1, 1, rng);
  }

  Modalities<T> forward(Binder<T>& B, Var<T> s) const {
    Tape<T>& tp = B.tape();
    Var<T> x = tp.leaky_relu(t1(B, s));
    x = tp.leaky_relu(t2(B, x));
    return {seg(B, x), tp.sigmoid(center(B, x)), offset(B, x), flow(B, x)};
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    t1.reg(r, p + ".t1");
    t2.reg(r, p + ".t2");
    seg.reg(r, p + ".seg");
    center.reg(r, p + ".center");
    offset.reg(r, p + ".offset");
    flow.reg(r, p + ".flow");
  }
};

// Ground-truth slice prepared for loss evaluation at scalar type T.
template <typename T>
struct LabelTargets {
  Tensor<int32_t> seg_class;  // [H,W] 0/1
  Tensor<T> centers;          // [H,W]
  Tensor<T> offsets;          // [2,H,W]
  Tensor<T> flows;            // [2,H,W]
  Tensor<T> mask;             // [H,W] foreground
};

template <typename T>
LabelTargets<T> to_targets(const world::LabelsSlice& gt) {
  LabelTargets<T> t;
  int h = gt.instance.dim(0), w = gt.instance.dim(1);
  t.seg_class = Tensor<int32_t>({h, w});
  for (int64_t i = 0; i < gt.instance.size(); ++i)
    t.seg_class[i] = gt.instance[i] > 0 ? 1 : 0;
  t.centers = gt.centers.template cast<T>();
  t.offsets = gt.offsets.template cast<T>();
  t.flows = gt.flows.template cast<T>();
  t.mask = gt.segmentation.template cast<T>();
  return t;
}

template <typename T>
struct ModalityLosses {
  Var<T> seg, center, offset, flow;
};

// seg: class-weighted cross entropy (foreground weight bg/fg clamped to
// [1,50]); center: MSE; offset/flow: L1 over foreground cells (0 when empty).
template <typename T>
ModalityLosses<T> modality_losses(Binder<T>& B, const Modalities<T>& pred,
                                  const LabelTargets<T>& gt) {
  Tape<T>& tp = B.tape();
  int64_t fg = 0;
  for (int64_t i = 0; i < gt.seg_class.size(); ++i) fg += gt.seg_class[i];
  int64_t bg = gt.seg_class.size() - fg;
  T w_fg = fg > 0 ? std::clamp(static_cast<T>(bg) / static_cast<T>(fg), T(1), T(50))
                  : T(1);

  ModalityLosses<T> out;
  out.seg = tp.weighted_ce(pred.seg_logits, gt.seg_class, {T(1), w_fg});
  int h = gt.seg_class.dim(0), w = gt.seg_class.dim(1);
  Var<T> center2d = tp.reshape(pred.center, {h, w});
  out.center = tp.mse(center2d, gt.centers);
  out.offset = tp.masked_l1(pred.offset, gt.offsets, gt.mask);
  out.flow = tp.masked_l1(pred.flow, gt.flows, gt.mask);
  return out;
}

// Stacked label maps [6,H,W]: segmentation, centers, offsets, flows.
template <typename T>
Tensor<T> label_input(const world::LabelsSlice& gt) {
  int h = gt.segmentation.dim(0), w = gt.segmentation.dim(1);
  Tensor<T> in({6, h, w});
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < hw; ++i) {
    in[i] = static_cast<T>(gt.segmentation[i]);
    in[hw + i] = static_cast<T>(gt.centers[i]);
    in[2 * hw + i] = static_cast<T>(gt.offsets[i]);
    in[3 * hw + i] = static_cast<T>(gt.offsets[hw + i]);
    in[4 * hw + i] = static_cast<T>(gt.flows[i]);
    in[5 * hw + i] = static_cast<T>(gt.flows[hw + i]);
  }
  return in;
}

// Strided encoder mapping label maps to the latent resolution, for the
// label-conditioned posterior.
template <typename T>
struct LabelEncoder {
  Conv2d<T> c1, c2;

  void init(int width, int out_channels, Rng& rng) {
    c1.init(6, width, 3, 2, rng);
    c2.init(width, out_channels, 3, 2, rng);
  }

  Var<T> forward(Binder<T>& B, Var<T> labels) const {
    Tape<T>& tp = B.tape();
    return tp.tanh(c2(B, tp.leaky_relu(c1(B, labels))));
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    c1.reg(r, p + ".c1");
    c2.reg(r, p + ".c2");
  }
};

}  // namespace stretchlab::heads
