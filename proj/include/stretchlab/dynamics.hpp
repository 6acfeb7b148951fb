#pragma once

#include <string>
#include <type_traits>
#include <vector>

#include "stretchlab/core/nn.hpp"

namespace stretchlab::dynamics {

enum class Variant { kStretchBev, kStretchBevP };

inline std::string variant_name(Variant v) {
  return v == Variant::kStretchBev ? "stretchbev" : "stretchbev-p";
}

template <typename T>
struct GaussianParams {
  Var<T> mean, log_var;
};

// h_phi: [C,H,W] -> [c_e,H/4,W/4], bounded final activation.
template <typename T>
struct StateEncoder {
  Conv2d<T> c1, c2, c3;

  void init(int in_channels, int width, int out_channels, Rng& rng) {
    c1.init(in_channels, width, 3, 2, rng);
    c2.init(width, width, 3, 1, rng);
    c3.init(width, out_channels, 3, 2, rng);
  }

  Var<T> forward(Binder<T>& B, Var<T> s) const {
    Tape<T>& tp = B.tape();
    Var<T> x = tp.leaky_relu(c1(B, s));
    x = tp.leaky_relu(c2(B, x));
    return tp.tanh(c3(B, x));
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    c1.reg(r, p + ".c1");
    c2.reg(r, p + ".c2");
    c3.reg(r, p + ".c3");
  }
};

// g_theta: [c_y,h_l,w_l] -> [C,H,W] via nearest upsampling.
template <typename T>
struct StateDecoder {
  Conv2d<T> c1, c2, c3;

  void init(int in_channels, int width, int out_channels, Rng& rng) {
    c1.init(in_channels, width, 3, 1, rng);
    c2.init(width, width, 3, 1, rng);
    c3.init(width, out_channels, 3, 1, rng);
  }

  Var<T> forward(Binder<T>& B, Var<T> y) const {
    Tape<T>& tp = B.tape();
    Var<T> x = tp.leaky_relu(c1(B, y));
    x = tp.upsample_nearest2(x);
    x = tp.leaky_relu(c2(B, x));
    x = tp.upsample_nearest2(x);
    return c3(B, x);
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    c1.reg(r, p + ".c1");
    c2.reg(r, p + ".c2");
    c3.reg(r, p + ".c3");
  }
};

// Shared shape for the small conv stacks that emit Gaussian parameters.
template <typename T>
struct GaussianHead {
  Conv2d<T> c1, c2, head;
  int out_channels = 0;

  void init(int in_channels, int width, int out_channels_, Rng& rng) {
    out_channels = out_channels_;
    c1.init(in_channels, width, 3, 1, rng);
    c2.init(width, width, 3, 1, rng);
    // modest head gain keeps untrained variances near 1
    head.init(width, 2 * out_channels_, 1, 1, rng, T(0.3));
  }

  GaussianParams<T> forward(Binder<T>& B, Var<T> x) const {
    Tape<T>& tp = B.tape();
    Var<T> h = tp.leaky_relu(c1(B, x));
    h = tp.leaky_relu(c2(B, h));
    Var<T> out = head(B, h);
    return {tp.slice_ch(out, 0, out_channels),
            tp.slice_ch(out, out_channels, 2 * out_channels)};
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    c1.reg(r, p + ".c1");
    c2.reg(r, p + ".c2");
    head.reg(r, p + ".head");
  }
};

// q(y_1 | s_{1:k}): conv net over the k concatenated encoded states.
template <typename T>
using FirstLatentNet = GaussianHead<T>;

// p(z_t | y_{t-1}): learned transition prior, a function of y_{t-1} alone.
template <typename T>
using PriorNet = GaussianHead<T>;

// Causal recurrent posterior over encoded states (and encoded labels for the
// label-conditioned variant). Two ConvGRUs followed by a Gaussian conv head.
template <typename T>
struct PosteriorNet {
  ConvGru<T> g1, g2;
  GaussianHead<T> head;

  void init(int in_channels, int hidden, int width, int z_channels, Rng& rng) {
    g1.init(in_channels, hidden, rng);
    g2.init(hidden, hidden, rng);
    head.init(hidden, width, z_channels, rng);
  }

  struct State {
    Var<T> h1, h2;
  };

  State initial(Tape<T>& tp, int h_l, int w_l) const {
    return {tp.constant(Tensor<T>({g1.hidden, h_l, w_l})),
            tp.constant(Tensor<T>({g2.hidden, h_l, w_l}))};
  }

  // Consume one encoded input, advance the recurrence.
  State step(Binder<T>& B, const State& st, Var<T> x) const {
    Var<T> h1 = g1.step(B, x, st.h1);
    Var<T> h2 = g2.step(B, h1, st.h2);
    return {h1, h2};
  }

  GaussianParams<T> params(Binder<T>& B, const State& st) const {
    return head.forward(B, st.h2);
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    g1.reg(r, p + ".g1");
    g2.reg(r, p + ".g2");
    head.reg(r, p + ".head");
  }
};

// f_theta: residual update from concat(y, z).
template <typename T>
struct ResidualNet {
  Conv2d<T> c1, c2, head;

  void init(int y_channels, int z_channels, int width, Rng& rng) {
    c1.init(y_channels + z_channels, width, 3, 1, rng);
    c2.init(width, width, 3, 1, rng);
    // small initial updates keep long untrained rollouts bounded
    head.init(width, y_channels, 1, 1, rng, T(0.1));
  }

  // Test mode: forces f == 0 so the update reduces to the identity.
  void zero_final_layer() { head.zero(); }

  Var<T> forward(Binder<T>& B, Var<T> y, Var<T> z) const {
    Tape<T>& tp = B.tape();
    Var<T> x = tp.leaky_relu(c1(B, tp.concat_ch({y, z})));
    x = tp.leaky_relu(c2(B, x));
    return head(B, x);
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    c1.reg(r, p + ".c1");
    c2.reg(r, p + ".c2");
    head.reg(r, p + ".head");
  }
};

template <typename T>
struct DynamicsSizes {
  int state_channels = 24;  // C
  int enc_channels = 24;    // c_e
  int latent_channels = 16; // c_y
  int z_channels = 16;      // c_z
  int enc_width = 32;
  int dec_width = 32;
  int net_width = 32;
  int gru_hidden = 32;
  int cond_len = 3;  // k
};

template <typename T>
struct DynamicsModel {
  DynamicsSizes<T> sizes;
  Variant variant = Variant::kStretchBev;
  T obs_var = T(1);

  StateEncoder<T> encoder;
  FirstLatentNet<T> first;
  PriorNet<T> prior;
  PosteriorNet<T> posterior;
  ResidualNet<T> residual;
  StateDecoder<T> decoder;

  void init(const DynamicsSizes<T>& sz, Variant v, Rng& rng) {
    sizes = sz;
    variant = v;
    encoder.init(sz.state_channels, sz.enc_width, sz.enc_channels, rng);
    first.init(sz.cond_len * sz.enc_channels, sz.net_width, sz.latent_channels, rng);
    prior.init(sz.latent_channels, sz.net_width, sz.z_channels, rng);
    int post_in = sz.enc_channels * (v == Variant::kStretchBevP ? 2 : 1);
    posterior.init(post_in, sz.gru_hidden, sz.net_width, sz.z_channels, rng);
    residual.init(sz.latent_channels, sz.z_channels, sz.net_width, rng);
    decoder.init(sz.latent_channels, sz.dec_width, sz.state_channels, rng);
  }

  void reg(ParamRegistry<T>& r, const std::string& p = "dyn") {
    encoder.reg(r, p + ".enc");
    first.reg(r, p + ".first");
    prior.reg(r, p + ".prior");
    posterior.reg(r, p + ".post");
    residual.reg(r, p + ".res");
    decoder.reg(r, p + ".dec");
  }
};

template <typename T>
Var<T> encode_state(Binder<T>& B, const DynamicsModel<T>& m, Var<T> s) {
  return m.encoder.forward(B, s);
}

template <typename T>
GaussianParams<T> infer_first_latent(Binder<T>& B, const DynamicsModel<T>& m,
                                     const std::vector<Var<T>>& encoded_cond) {
  if (static_cast<int>(encoded_cond.size()) != m.sizes.cond_len)
    throw ConfigError("infer_first_latent: expected exactly " +
                      std::to_string(m.sizes.cond_len) + " encoded states");
  return m.first.forward(B, B.tape().concat_ch(encoded_cond));
}

template <typename T>
GaussianParams<T> prior_z(Binder<T>& B, const DynamicsModel<T>& m, Var<T> y_prev) {
  return m.prior.forward(B, y_prev);
}

template <typename T>
Var<T> sample_gaussian(Tape<T>& tp, const GaussianParams<T>& p,
                       const Tensor<T>& noise) {
  return tp.sample_gaussian(p.mean, p.log_var, noise);
}

template <typename T>
Var<T> residual_step(Binder<T>& B, const DynamicsModel<T>& m, Var<T> y, Var<T> z) {
  return B.tape().add(y, m.residual.forward(B, y, z));
}

template <typename T>
Var<T> decode_state(Binder<T>& B, const DynamicsModel<T>& m, Var<T> y) {
  return m.decoder.forward(B, y);
}

template <typename T>
Var<T> kl_diag_gauss(Tape<T>& tp, const GaussianParams<T>& q,
                     const GaussianParams<T>& p) {
  return tp.kl_diag(q.mean, q.log_var, p.mean, p.log_var);
}

template <typename T>
Var<T> kl_to_standard_normal(Tape<T>& tp, const GaussianParams<T>& q) {
  Tensor<T> zeros(tp.val(q.mean).shape);
  GaussianParams<T> std_normal{tp.constant(zeros), tp.constant(zeros)};
  return tp.kl_diag(q.mean, q.log_var, std_normal.mean, std_normal.log_var);
}

template <typename T>
struct ElboResult {
  Var<T> state_loglik;  // sum_t log p(s_t | y_t)
  Var<T> kl_first;      // KL(q(y_1|s_{1:k}) || N(0,I))
  Var<T> kl_z_sum;      // sum_{t>=2} KL(q(z_t|.) || p(z_t|y_{t-1}))
  Var<T> total;         // state_loglik - kl_first - kl_z_sum
  std::vector<Var<T>> decoded_states;  // posterior-rollout predictions, per t
  std::vector<Var<T>> latents;         // y_t, per t
  GaussianParams<T> q_first;           // posterior over y_1
  std::vector<GaussianParams<T>> q_z, p_z;  // per-step z distributions (t >= 2)
};

// One posterior rollout with reparametrized samples. The states act as the
// reconstruction targets; when they come from a trainable extractor the
// whole path stays differentiable end to end. label_enc is required for the
// label-conditioned variant (entry 0 unused) and must be absent otherwise.
template <typename T>
ElboResult<T> elbo(Binder<T>& B, const DynamicsModel<T>& m,
                   const std::vector<Var<T>>& states,
                   const std::type_identity_t<std::vector<Var<T>>>* label_enc, Rng& noise_rng) {
  Tape<T>& tp = B.tape();
  int t_len = static_cast<int>(states.size());
  int k = m.sizes.cond_len;
  if (t_len <= k) throw ConfigError("elbo: need more steps than conditioning frames");
  bool with_labels = m.variant == Variant::kStretchBevP;
  if (with_labels && (!label_enc || static_cast<int>(label_enc->size()) != t_len))
    throw ConfigError("elbo: label encodings required for this variant");
  if (!with_labels && label_enc)
    throw ConfigError("elbo: label encodings rejected for this variant");

  std::vector<Var<T>> enc(t_len);
  for (int t = 0; t < t_len; ++t) enc[t] = m.encoder.forward(B, states[t]);

  std::vector<int> zshape = tp.val(enc[0]).shape;
  int h_l = zshape[1], w_l = zshape[2];

  auto noise_like = [&](const std::vector<int>& shape) {
    Tensor<T> n(shape);
    for (auto& v : n.data) v = static_cast<T>(noise_rng.normal());
    return n;
  };

  GaussianParams<T> q1 =
      infer_first_latent(B, m, {enc.begin(), enc.begin() + k});
  Var<T> y = sample_gaussian(tp, q1, noise_like(tp.val(q1.mean).shape));

  ElboResult<T> res;
  res.q_first = q1;
  res.kl_first = kl_to_standard_normal(tp, q1);

  auto post_in = [&](int t) {
    if (!with_labels) return enc[t];
    Var<T> o = (t == 0) ? tp.constant(Tensor<T>({m.sizes.enc_channels, h_l, w_l}))
                        : (*label_enc)[t];
    return tp.concat_ch({enc[t], o});
  };

  typename PosteriorNet<T>::State ps = m.posterior.initial(tp, h_l, w_l);
  ps = m.posterior.step(B, ps, post_in(0));

  std::vector<std::pair<T, Var<T>>> kl_terms;
  std::vector<std::pair<T, Var<T>>> ll_terms;

  res.latents.push_back(y);
  Var<T> s_hat = decode_state(B, m, y);
  res.decoded_states.push_back(s_hat);
  ll_terms.push_back({T(-1), tp.gaussian_nll(s_hat, states[0], m.obs_var)});

  for (int t = 1; t < t_len; ++t) {
    GaussianParams<T> pz = prior_z(B, m, y);
    ps = m.posterior.step(B, ps, post_in(t));
    GaussianParams<T> qz = m.posterior.params(B, ps);
    res.p_z.push_back(pz);
    res.q_z.push_back(qz);
    kl_terms.push_back({T(1), kl_diag_gauss(tp, qz, pz)});
    Var<T> z = sample_gaussian(tp, qz, noise_like(tp.val(qz.mean).shape));
    y = residual_step(B, m, y, z);
    res.latents.push_back(y);
    s_hat = decode_state(B, m, y);
    res.decoded_states.push_back(s_hat);
    ll_terms.push_back({T(-1), tp.gaussian_nll(s_hat, states[t], m.obs_var)});
  }

  res.state_loglik = tp.lincomb(ll_terms);
  res.kl_z_sum = tp.lincomb(kl_terms);
  res.total = tp.lincomb({{T(1), res.state_loglik},
                          {T(-1), res.kl_first},
                          {T(-1), res.kl_z_sum}});
  return res;
}

// Sampled futures. Conditioning steps draw z from the posterior, later steps
// from the learned transition prior; every decoded state depends on its own
// latent only. Returns [n_samples][horizon] decoded future states.
template <typename T>
std::vector<std::vector<Tensor<T>>> rollout(
    const DynamicsModel<T>& m, const std::vector<Tensor<T>>& cond_states,
    const std::type_identity_t<std::vector<Tensor<T>>>* cond_label_enc, int horizon, int n_samples,
    uint64_t seed, bool zero_noise = false) {
  int k = m.sizes.cond_len;
  if (static_cast<int>(cond_states.size()) != k)
    throw ConfigError("rollout: expected exactly k conditioning states");
  if (horizon < 1) throw ConfigError("rollout: horizon must be >= 1");
  bool with_labels = m.variant == Variant::kStretchBevP;
  if (with_labels && (!cond_label_enc ||
                      static_cast<int>(cond_label_enc->size()) != k))
    throw ConfigError("rollout: conditioning label encodings required");
  if (!with_labels && cond_label_enc)
    throw ConfigError("rollout: label encodings rejected for this variant");

  std::vector<std::vector<Tensor<T>>> out(n_samples);
  for (int si = 0; si < n_samples; ++si) {
    Rng rng(mix_seed(seed, 0xB011, static_cast<uint64_t>(si)));
    Tape<T> tp;
    Binder<T> B(tp, /*train=*/false);

    auto noise_like = [&](const std::vector<int>& shape) {
      Tensor<T> n(shape);
      if (!zero_noise)
        for (auto& v : n.data) v = static_cast<T>(rng.normal());
      return n;
    };

    std::vector<Var<T>> enc(k);
    for (int t = 0; t < k; ++t)
      enc[t] = m.encoder.forward(B, tp.constant(cond_states[t]));
    int h_l = tp.val(enc[0]).dim(1), w_l = tp.val(enc[0]).dim(2);

    GaussianParams<T> q1 = infer_first_latent(B, m, enc);
    Var<T> y = sample_gaussian(tp, q1, noise_like(tp.val(q1.mean).shape));

    auto post_in = [&](int t) {
      if (!with_labels) return enc[t];
      Var<T> o = (t == 0) ? tp.constant(Tensor<T>({m.sizes.enc_channels, h_l, w_l}))
                          : tp.constant((*cond_label_enc)[t]);
      return tp.concat_ch({enc[t], o});
    };

    typename PosteriorNet<T>::State ps = m.posterior.initial(tp, h_l, w_l);
    ps = m.posterior.step(B, ps, post_in(0));

    for (int t = 1; t < k + horizon; ++t) {
      GaussianParams<T> z_params;
      if (t < k) {
        ps = m.posterior.step(B, ps, post_in(t));
        z_params = m.posterior.params(B, ps);
      } else {
        z_params = prior_z(B, m, y);
      }
      Var<T> z = sample_gaussian(tp, z_params, noise_like(tp.val(z_params.mean).shape));
      y = residual_step(B, m, y, z);
      if (t >= k) out[si].push_back(tp.val(decode_state(B, m, y)));
    }
  }
  return out;
}

}  // namespace stretchlab::dynamics
