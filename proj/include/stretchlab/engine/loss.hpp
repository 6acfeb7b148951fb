#pragma once

#include <vector>

#include "stretchlab/engine/model.hpp"

namespace stretchlab::engine {

enum class LossMode {
  kSupervisedFrames,  // pre-training stage 0: per-frame decoding of encoded states
  kStateElbo,         // pre-training stage 1: state ELBO against frozen states
  kJoint,             // ELBO plus modality supervision
};

// One episode's inputs at scalar type T.
template <typename T>
struct EpisodeTensors {
  std::vector<Tensor<T>> images;          // per t: [n_cam,3,h,w]
  std::vector<world::LabelsSlice> labels; // per t
  // Stage-1 replacement for the image path: frozen extracted states.
  std::vector<Tensor<T>> states;
};

template <typename T>
struct LossBreakdown {
  Var<T> total;
  T state_loglik = 0, kl_first = 0, kl_z = 0;  // raw (unweighted) values
  T seg = 0, center = 0, offset = 0, flow = 0; // weighted, normalized per frame
  T elbo_term = 0;                             // weighted contribution to total
};

// Builds the optimized objective on the tape. The ELBO keeps its internal
// sum structure and is rescaled by the total state element count so it is
// commensurate with the per-frame modality means.
template <typename T>
LossBreakdown<T> episode_loss(Binder<T>& B, const PredictionModel<T>& model,
                              const Config& cfg, const EpisodeTensors<T>& ep,
                              LossMode mode,
                              const std::vector<liftsplat::LiftGeometry>& geoms,
                              Rng& noise_rng) {
  Tape<T>& tp = B.tape();
  const LossWeights& w = cfg.train.weights;
  liftsplat::GridSpec grid = cfg.grid();
  int t_len = static_cast<int>(ep.labels.size());
  bool with_labels = model.variant == dynamics::Variant::kStretchBevP;

  std::vector<Var<T>> states(t_len);
  if (mode == LossMode::kStateElbo) {
    for (int t = 0; t < t_len; ++t) states[t] = tp.constant(ep.states[t]);
  } else {
    for (int t = 0; t < t_len; ++t)
      states[t] = liftsplat::fuse_frame(B, model.image_encoder, ep.images[t], geoms, grid);
  }

  LossBreakdown<T> out;
  std::vector<std::pair<T, Var<T>>> total_terms;

  auto add_modality = [&](const heads::Modalities<T>& pred,
                          const heads::LabelTargets<T>& gt, T coeff) {
    heads::ModalityLosses<T> l = heads::modality_losses(B, pred, gt);
    T per_frame = coeff / static_cast<T>(t_len);
    total_terms.push_back({static_cast<T>(w.seg) * per_frame, l.seg});
    total_terms.push_back({static_cast<T>(w.center) * per_frame, l.center});
    total_terms.push_back({static_cast<T>(w.offset) * per_frame, l.offset});
    total_terms.push_back({static_cast<T>(w.flow) * per_frame, l.flow});
    out.seg += static_cast<T>(w.seg) * per_frame * tp.val(l.seg)[0];
    out.center += static_cast<T>(w.center) * per_frame * tp.val(l.center)[0];
    out.offset += static_cast<T>(w.offset) * per_frame * tp.val(l.offset)[0];
    out.flow += static_cast<T>(w.flow) * per_frame * tp.val(l.flow)[0];
  };

  if (mode != LossMode::kSupervisedFrames) {
    std::vector<Var<T>> label_enc;
    if (with_labels && mode == LossMode::kJoint) {
      label_enc.resize(t_len);
      for (int t = 1; t < t_len; ++t)
        label_enc[t] = model.label_encoder.forward(
            B, tp.constant(heads::label_input<T>(ep.labels[t])));
    }
    dynamics::ElboResult<T> e =
        dynamics::elbo(B, model.dyn, states,
                       (with_labels && mode == LossMode::kJoint) ? &label_enc : nullptr,
                       noise_rng);

    int64_t n_state = static_cast<int64_t>(t_len) * tp.val(states[0]).size();
    T inv_n = T(1) / static_cast<T>(n_state);
    total_terms.push_back({-static_cast<T>(w.state_nll) * inv_n, e.state_loglik});
    total_terms.push_back({static_cast<T>(w.kl) * inv_n, e.kl_first});
    total_terms.push_back({static_cast<T>(w.kl) * inv_n, e.kl_z_sum});
    out.state_loglik = tp.val(e.state_loglik)[0];
    out.kl_first = tp.val(e.kl_first)[0];
    out.kl_z = tp.val(e.kl_z_sum)[0];
    out.elbo_term = -static_cast<T>(w.state_nll) * inv_n * out.state_loglik +
                    static_cast<T>(w.kl) * inv_n * (out.kl_first + out.kl_z);

    if (mode == LossMode::kJoint) {
      for (int t = 0; t < t_len; ++t) {
        heads::LabelTargets<T> gt = heads::to_targets<T>(ep.labels[t]);
        if (w.obs_modality > 0)
          add_modality(model.decoder.forward(B, states[t]), gt,
                       static_cast<T>(w.obs_modality));
        if (w.pred_modality > 0)
          add_modality(model.decoder.forward(B, e.decoded_states[t]), gt,
                       static_cast<T>(w.pred_modality));
      }
    }
  } else {
    for (int t = 0; t < t_len; ++t) {
      heads::LabelTargets<T> gt = heads::to_targets<T>(ep.labels[t]);
      add_modality(model.decoder.forward(B, states[t]), gt, T(1));
    }
  }

  out.total = tp.lincomb(total_terms);
  return out;
}

}  // namespace stretchlab::engine
