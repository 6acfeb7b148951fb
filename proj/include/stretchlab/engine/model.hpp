#pragma once

#include <memory>
#include <string>

#include "stretchlab/dynamics.hpp"
#include "stretchlab/engine/config.hpp"
#include "stretchlab/heads.hpp"
#include "stretchlab/liftsplat.hpp"

namespace stretchlab::engine {

// The full pipeline: lift-splat image encoder, stochastic residual dynamics,
// modality decoder, label encoder for the label-conditioned posterior.
// Non-copyable (the registry points into the module tensors).
template <typename T>
struct PredictionModel {
  liftsplat::ImageEncoder<T> image_encoder;
  dynamics::DynamicsModel<T> dyn;
  heads::ModalityDecoder<T> decoder;
  heads::LabelEncoder<T> label_encoder;
  ParamRegistry<T> registry;
  dynamics::Variant variant = dynamics::Variant::kStretchBev;

  PredictionModel() = default;
  PredictionModel(const PredictionModel&) = delete;
  PredictionModel& operator=(const PredictionModel&) = delete;

  void init(const Config& cfg, dynamics::Variant v, uint64_t seed) {
    variant = v;
    const ModelConfig& m = cfg.model;

    // Independent streams per module keep initialization stable when one
    // module's parameter count changes.
    Rng r_img(mix_seed(seed, 1));
    Rng r_dyn(mix_seed(seed, 2));
    Rng r_dec(mix_seed(seed, 3));
    Rng r_lab(mix_seed(seed, 4));

    image_encoder.init(m.img_width, m.bev_channels, cfg.frustum.n_depth(), r_img);

    dynamics::DynamicsSizes<T> sz;
    sz.state_channels = m.bev_channels;
    sz.enc_channels = m.enc_channels;
    sz.latent_channels = m.latent_channels;
    sz.z_channels = m.z_channels;
    sz.enc_width = m.enc_width;
    sz.dec_width = m.dec_width;
    sz.net_width = m.net_width;
    sz.gru_hidden = m.gru_hidden;
    sz.cond_len = cfg.world.conditioning_len;
    dyn.init(sz, v, r_dyn);
    dyn.obs_var = static_cast<T>(m.obs_var);

    decoder.init(m.bev_channels, m.head_width, r_dec);
    label_encoder.init(m.label_width, m.enc_channels, r_lab);

    registry = ParamRegistry<T>{};
    image_encoder.reg(registry, "img");
    dyn.reg(registry, "dyn");
    decoder.reg(registry, "heads");
    label_encoder.reg(registry, "labelenc");
  }

  std::vector<Tensor<T>> snapshot() const {
    std::vector<Tensor<T>> out;
    out.reserve(registry.size());
    for (const auto& e : registry.entries()) out.push_back(*e.value);
    return out;
  }

  void restore(const std::vector<Tensor<T>>& snap) {
    for (size_t i = 0; i < registry.size(); ++i) *registry.entries()[i].value = snap[i];
  }
};

inline dynamics::Variant parse_variant(const std::string& name) {
  if (name == "stretchbev") return dynamics::Variant::kStretchBev;
  if (name == "stretchbev-p") return dynamics::Variant::kStretchBevP;
  throw ConfigError("unknown variant: " + name);
}

}  // namespace stretchlab::engine
