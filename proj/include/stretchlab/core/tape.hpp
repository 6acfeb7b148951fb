#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "stretchlab/core/errors.hpp"
#include "stretchlab/core/tensor.hpp"

namespace stretchlab {

template <typename T>
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over a per-forward-pass tape. Nodes own their value;
// gradients are allocated lazily so inference passes cost no extra memory.
// Convolution backward recomputes im2col instead of caching it.
template <typename T>
class Tape {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;

 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until first contribution
    std::function<void()> backward;
    bool needs_grad = false;
  };

  Var<T> leaf(Tensor<T> v, bool requires_grad) {
    nodes_.push_back(Node{std::move(v), {}, {}, requires_grad});
    return Var<T>{static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

  Var<T> detach(Var<T> a) { return constant(val(a)); }

  const Tensor<T>& val(Var<T> a) const { return nodes_[a.id].value; }

  // Zero tensor if the node never received a gradient.
  Tensor<T> grad(Var<T> a) const {
    const Node& n = nodes_[a.id];
    if (n.grad.empty() && n.value.size() > 0) return Tensor<T>(n.value.shape);
    return n.grad;
  }

  bool requires_grad(Var<T> a) const { return nodes_[a.id].needs_grad; }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void backward(Var<T> root) {
    Node& r = nodes_[root.id];
    if (r.value.size() != 1) throw NumericError("backward root must be scalar");
    accum(root.id).fill(T(1));
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.needs_grad && !n.grad.empty() && n.backward) n.backward();
    }
  }

  // ---- elementwise ----

  Var<T> add(Var<T> a, Var<T> b) {
    check_same(a, b, "add");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return unary_or_binary(std::move(out), a, b, [this](int id, Var<T> a, Var<T> b) {
      const Tensor<T>& g = nodes_[id].grad;
      if (nodes_[a.id].needs_grad) axpy(accum(a.id), g, T(1));
      if (nodes_[b.id].needs_grad) axpy(accum(b.id), g, T(1));
    });
  }

  Var<T> sub(Var<T> a, Var<T> b) {
    check_same(a, b, "sub");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return unary_or_binary(std::move(out), a, b, [this](int id, Var<T> a, Var<T> b) {
      const Tensor<T>& g = nodes_[id].grad;
      if (nodes_[a.id].needs_grad) axpy(accum(a.id), g, T(1));
      if (nodes_[b.id].needs_grad) axpy(accum(b.id), g, T(-1));
    });
  }

  Var<T> mul(Var<T> a, Var<T> b) {
    check_same(a, b, "mul");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return unary_or_binary(std::move(out), a, b, [this](int id, Var<T> a, Var<T> b) {
      const Tensor<T>& g = nodes_[id].grad;
      if (nodes_[a.id].needs_grad) {
        Tensor<T>& ga = accum(a.id);
        const Tensor<T>& vb2 = val(b);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb2[i];
      }
      if (nodes_[b.id].needs_grad) {
        Tensor<T>& gb = accum(b.id);
        const Tensor<T>& va2 = val(a);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va2[i];
      }
    });
  }

  Var<T> scale(Var<T> a, T c) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v *= c;
    return unary(std::move(out), a, [this, c](int id, Var<T> a) {
      axpy(accum(a.id), nodes_[id].grad, c);
    });
  }

  Var<T> exp(Var<T> a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = std::exp(v);
    return unary(std::move(out), a, [this](int id, Var<T> a) {
      const Tensor<T>& g = nodes_[id].grad;
      const Tensor<T>& y = nodes_[id].value;
      Tensor<T>& ga = accum(a.id);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
  }

  Var<T> tanh(Var<T> a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = std::tanh(v);
    return unary(std::move(out), a, [this](int id, Var<T> a) {
      const Tensor<T>& g = nodes_[id].grad;
      const Tensor<T>& y = nodes_[id].value;
      Tensor<T>& ga = accum(a.id);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
  }

  Var<T> sigmoid(Var<T> a) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return unary(std::move(out), a, [this](int id, Var<T> a) {
      const Tensor<T>& g = nodes_[id].grad;
      const Tensor<T>& y = nodes_[id].value;
      Tensor<T>& ga = accum(a.id);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }

  Var<T> leaky_relu(Var<T> a, T slope = T(0.1)) {
    Tensor<T> out = val(a);
    for (auto& v : out.data) v = v > T(0) ? v : slope * v;
    return unary(std::move(out), a, [this, slope, a](int id, Var<T>) {
      const Tensor<T>& g = nodes_[id].grad;
      const Tensor<T>& x = val(a);
      Tensor<T>& ga = accum(a.id);
      for (int64_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * (x[i] > T(0) ? T(1) : slope);
    });
  }

  // ---- shape ops ----

  Var<T> concat_ch(const std::vector<Var<T>>& parts) {
    int h = val(parts[0]).dim(1), w = val(parts[0]).dim(2);
    int ctot = 0;
    for (auto p : parts) ctot += val(p).dim(0);
    Tensor<T> out({ctot, h, w});
    int64_t off = 0;
    for (auto p : parts) {
      const Tensor<T>& v = val(p);
      std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
      off += v.size();
    }
    bool req = false;
    for (auto p : parts) req = req || nodes_[p.id].needs_grad;
    Var<T> r = leaf(std::move(out), req);
    if (req) {
      std::vector<Var<T>> ps = parts;
      nodes_[r.id].backward = [this, r, ps]() {
        const Tensor<T>& g = nodes_[r.id].grad;
        int64_t off2 = 0;
        for (auto p : ps) {
          int64_t n = val(p).size();
          if (nodes_[p.id].needs_grad) {
            Tensor<T>& gp = accum(p.id);
            for (int64_t i = 0; i < n; ++i) gp[i] += g[off2 + i];
          }
          off2 += n;
        }
      };
    }
    return r;
  }

  Var<T> slice_ch(Var<T> a, int c0, int c1) {
    const Tensor<T>& v = val(a);
    int h = v.dim(1), w = v.dim(2);
    Tensor<T> out({c1 - c0, h, w});
    int64_t hw = static_cast<int64_t>(h) * w;
    std::copy(v.data.begin() + c0 * hw, v.data.begin() + c1 * hw, out.data.begin());
    return unary(std::move(out), a, [this, c0, hw](int id, Var<T> a) {
      const Tensor<T>& g = nodes_[id].grad;
      Tensor<T>& ga = accum(a.id);
      for (int64_t i = 0; i < g.size(); ++i) ga[c0 * hw + i] += g[i];
    });
  }

  Var<T> reshape(Var<T> a, std::vector<int> shape) {
    const Tensor<T>& v = val(a);
    if (Tensor<T>::count(shape) != v.size())
      throw NumericError("reshape: element count mismatch");
    Tensor<T> out;
    out.shape = std::move(shape);
    out.data = v.data;
    return unary(std::move(out), a, [this](int id, Var<T> a) {
      const Tensor<T>& g = nodes_[id].grad;
      Tensor<T>& ga = accum(a.id);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  // ---- softmax over channel axis of [D,H,W] ----

  Var<T> softmax_ch(Var<T> a) {
    const Tensor<T>& x = val(a);
    int d = x.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    Tensor<T> out(x.shape);
    for (int64_t p = 0; p < hw; ++p) {
      T mx = x[p];
      for (int k = 1; k < d; ++k) mx = std::max(mx, x[k * hw + p]);
      T s = T(0);
      for (int k = 0; k < d; ++k) {
        T e = std::exp(x[k * hw + p] - mx);
        out[k * hw + p] = e;
        s += e;
      }
      for (int k = 0; k < d; ++k) out[k * hw + p] /= s;
    }
    return unary(std::move(out), a, [this, d, hw](int id, Var<T> a) {
      const Tensor<T>& g = nodes_[id].grad;
      const Tensor<T>& y = nodes_[id].value;
      Tensor<T>& ga = accum(a.id);
      for (int64_t p = 0; p < hw; ++p) {
        T dot = T(0);
        for (int k = 0; k < d; ++k) dot += g[k * hw + p] * y[k * hw + p];
        for (int k = 0; k < d; ++k)
          ga[k * hw + p] += y[k * hw + p] * (g[k * hw + p] - dot);
      }
    });
  }

  // ---- conv / pool / upsample ----

  // x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout]. Zero padding.
  Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != cin)
      throw NumericError("conv2d: channel mismatch " + std::to_string(wv.dim(1)) +
                         " vs " + std::to_string(cin));
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    int64_t khw = static_cast<int64_t>(cin) * kh * kw;
    int64_t ohw = static_cast<int64_t>(ho) * wo;

    std::vector<T> col(static_cast<size_t>(khw * ohw));
    im2col(xv.data.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, col.data());

    Tensor<T> out({cout, ho, wo});
    {
      CMapM W(wv.data.data(), cout, khw);
      CMapM C(col.data(), khw, ohw);
      MapM O(out.data.data(), cout, ohw);
      O.noalias() = W * C;
    }
    const Tensor<T>& bv = val(b);
    for (int co = 0; co < cout; ++co) {
      T bb = bv[co];
      for (int64_t i = 0; i < ohw; ++i) out[co * ohw + i] += bb;
    }

    bool req = nodes_[x.id].needs_grad || nodes_[w.id].needs_grad || nodes_[b.id].needs_grad;
    Var<T> r = leaf(std::move(out), req);
    if (req) {
      nodes_[r.id].backward = [this, r, x, w, b, stride, pad]() {
        conv2d_backward(r, x, w, b, stride, pad);
      };
    }
    return r;
  }

  Var<T> maxpool2(Var<T> a) {
    const Tensor<T>& x = val(a);
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int ho = h / 2, wo = w / 2;
    Tensor<T> out({c, ho, wo});
    auto argmax = std::make_shared<std::vector<int32_t>>(out.size());
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < ho; ++y)
        for (int xo = 0; xo < wo; ++xo) {
          int64_t best = -1;
          T bv = T(0);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              int64_t idx = (static_cast<int64_t>(ci) * h + 2 * y + dy) * w + 2 * xo + dx;
              if (best < 0 || x[idx] > bv) {
                best = idx;
                bv = x[idx];
              }
            }
          int64_t o = (static_cast<int64_t>(ci) * ho + y) * wo + xo;
          out[o] = bv;
          (*argmax)[o] = static_cast<int32_t>(best);
        }
    return unary(std::move(out), a, [this, argmax](int id, Var<T> a) {
      const Tensor<T>& g = nodes_[id].grad;
      Tensor<T>& ga = accum(a.id);
      for (int64_t i = 0; i < g.size(); ++i) ga[(*argmax)[i]] += g[i];
    });
  }

  Var<T> upsample_nearest2(Var<T> a) {
    const Tensor<T>& x = val(a);
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> out({c, 2 * h, 2 * w});
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < 2 * h; ++y)
        for (int xo = 0; xo < 2 * w; ++xo)
          out.at(ci, y, xo) = x.at(ci, y / 2, xo / 2);
    return unary(std::move(out), a, [this, c, h, w](int id, Var<T> a) {
      const Tensor<T>& g = nodes_[id].grad;
      Tensor<T>& ga = accum(a.id);
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < 2 * h; ++y)
          for (int xo = 0; xo < 2 * w; ++xo)
            ga[(static_cast<int64_t>(ci) * h + y / 2) * w + xo / 2] +=
                g[(static_cast<int64_t>(ci) * 2 * h + y) * 2 * w + xo];
    });
  }

  // ---- reductions / losses ----

  Var<T> sum_all(Var<T> a) {
    T s = T(0);
    for (const T& v : val(a).data) s += v;
    return unary(Tensor<T>::scalar(s), a, [this](int id, Var<T> a) {
      T g = nodes_[id].grad[0];
      Tensor<T>& ga = accum(a.id);
      for (auto& v : ga.data) v += g;
    });
  }

  Var<T> mean_all(Var<T> a) { return scale(sum_all(a), T(1) / T(val(a).size())); }

  // Scalar linear combination: sum_i coeff_i * term_i (terms are scalars).
  Var<T> lincomb(const std::vector<std::pair<T, Var<T>>>& terms) {
    T s = T(0);
    bool req = false;
    for (auto& [c, v] : terms) {
      s += c * val(v)[0];
      req = req || nodes_[v.id].needs_grad;
    }
    Var<T> r = leaf(Tensor<T>::scalar(s), req);
    if (req) {
      auto ts = terms;
      nodes_[r.id].backward = [this, r, ts]() {
        T g = nodes_[r.id].grad[0];
        for (auto& [c, v] : ts)
          if (nodes_[v.id].needs_grad) accum(v.id)[0] += g * c;
      };
    }
    return r;
  }

  // mean + exp(0.5*logvar) .* noise, with constant noise.
  Var<T> sample_gaussian(Var<T> mean, Var<T> logvar, const Tensor<T>& noise) {
    check_same(mean, logvar, "sample_gaussian");
    if (!val(mean).same_shape(noise))
      throw NumericError("sample_gaussian: noise shape mismatch");
    const Tensor<T>& m = val(mean);
    const Tensor<T>& lv = val(logvar);
    Tensor<T> out(m.shape);
    for (int64_t i = 0; i < out.size(); ++i)
      out[i] = m[i] + std::exp(T(0.5) * lv[i]) * noise[i];
    auto nz = std::make_shared<Tensor<T>>(noise);
    return unary_or_binary(std::move(out), mean, logvar,
                           [this, nz](int id, Var<T> mean, Var<T> logvar) {
      const Tensor<T>& g = nodes_[id].grad;
      if (nodes_[mean.id].needs_grad) axpy(accum(mean.id), g, T(1));
      if (nodes_[logvar.id].needs_grad) {
        const Tensor<T>& lv2 = val(logvar);
        Tensor<T>& gl = accum(logvar.id);
        for (int64_t i = 0; i < g.size(); ++i)
          gl[i] += g[i] * T(0.5) * std::exp(T(0.5) * lv2[i]) * (*nz)[i];
      }
    });
  }

  // KL(N(mq, e^lvq) || N(mp, e^lvp)) for diagonal Gaussians, summed.
  Var<T> kl_diag(Var<T> mq, Var<T> lvq, Var<T> mp, Var<T> lvp) {
    check_same(mq, lvq, "kl_diag");
    check_same(mq, mp, "kl_diag");
    check_same(mq, lvp, "kl_diag");
    const Tensor<T>&vmq = val(mq), &vlq = val(lvq), &vmp = val(mp), &vlp = val(lvp);
    T kl = T(0);
    for (int64_t i = 0; i < vmq.size(); ++i) {
      T dm = vmq[i] - vmp[i];
      kl += T(0.5) * (vlp[i] - vlq[i] +
                      (std::exp(vlq[i]) + dm * dm) * std::exp(-vlp[i]) - T(1));
    }
    bool req = nodes_[mq.id].needs_grad || nodes_[lvq.id].needs_grad ||
               nodes_[mp.id].needs_grad || nodes_[lvp.id].needs_grad;
    Var<T> r = leaf(Tensor<T>::scalar(kl), req);
    if (req) {
      nodes_[r.id].backward = [this, r, mq, lvq, mp, lvp]() {
        T g = nodes_[r.id].grad[0];
        const Tensor<T>&vmq = val(mq), &vlq = val(lvq), &vmp = val(mp), &vlp = val(lvp);
        for (int64_t i = 0; i < vmq.size(); ++i) {
          T dm = vmq[i] - vmp[i];
          T ivp = std::exp(-vlp[i]);
          if (nodes_[mq.id].needs_grad) accum(mq.id)[i] += g * dm * ivp;
          if (nodes_[mp.id].needs_grad) accum(mp.id)[i] -= g * dm * ivp;
          if (nodes_[lvq.id].needs_grad)
            accum(lvq.id)[i] += g * T(0.5) * (std::exp(vlq[i]) * ivp - T(1));
          if (nodes_[lvp.id].needs_grad)
            accum(lvp.id)[i] += g * T(0.5) * (T(1) - (std::exp(vlq[i]) + dm * dm) * ivp);
        }
      };
    }
    return r;
  }

  // -log N(target; pred, var I) with constant scalar variance, summed.
  // Both sides receive gradients when they require them.
  Var<T> gaussian_nll(Var<T> pred, Var<T> target, T var) {
    check_same(pred, target, "gaussian_nll");
    const Tensor<T>& p = val(pred);
    const Tensor<T>& t = val(target);
    T c = T(0.5) * std::log(T(2) * T(3.14159265358979323846) * var);
    T s = T(0);
    for (int64_t i = 0; i < p.size(); ++i) {
      T d = p[i] - t[i];
      s += T(0.5) * d * d / var + c;
    }
    return unary_or_binary(Tensor<T>::scalar(s), pred, target,
                           [this, var](int id, Var<T> pred, Var<T> target) {
      T g = nodes_[id].grad[0];
      const Tensor<T>& p2 = val(pred);
      const Tensor<T>& t2 = val(target);
      if (nodes_[pred.id].needs_grad) {
        Tensor<T>& gp = accum(pred.id);
        for (int64_t i = 0; i < p2.size(); ++i)
          gp[i] += g * (p2[i] - t2[i]) / var;
      }
      if (nodes_[target.id].needs_grad) {
        Tensor<T>& gt = accum(target.id);
        for (int64_t i = 0; i < p2.size(); ++i)
          gt[i] -= g * (p2[i] - t2[i]) / var;
      }
    });
  }

  Var<T> gaussian_nll(Var<T> pred, const Tensor<T>& target, T var) {
    const Tensor<T>& p = val(pred);
    if (!p.same_shape(target)) throw NumericError("gaussian_nll: shape mismatch");
    T c = T(0.5) * std::log(T(2) * T(3.14159265358979323846) * var);
    T s = T(0);
    for (int64_t i = 0; i < p.size(); ++i) {
      T d = p[i] - target[i];
      s += T(0.5) * d * d / var + c;
    }
    auto tgt = std::make_shared<Tensor<T>>(target);
    return unary(Tensor<T>::scalar(s), pred, [this, tgt, var](int id, Var<T> pred) {
      T g = nodes_[id].grad[0];
      const Tensor<T>& p2 = val(pred);
      Tensor<T>& gp = accum(pred.id);
      for (int64_t i = 0; i < p2.size(); ++i)
        gp[i] += g * (p2[i] - (*tgt)[i]) / var;
    });
  }

  Var<T> mse(Var<T> pred, const Tensor<T>& target) {
    const Tensor<T>& p = val(pred);
    if (!p.same_shape(target)) throw NumericError("mse: shape mismatch");
    T s = T(0);
    for (int64_t i = 0; i < p.size(); ++i) {
      T d = p[i] - target[i];
      s += d * d;
    }
    s /= T(p.size());
    auto tgt = std::make_shared<Tensor<T>>(target);
    return unary(Tensor<T>::scalar(s), pred, [this, tgt](int id, Var<T> pred) {
      T g = nodes_[id].grad[0];
      const Tensor<T>& p2 = val(pred);
      T inv = T(2) / T(p2.size());
      Tensor<T>& gp = accum(pred.id);
      for (int64_t i = 0; i < p2.size(); ++i)
        gp[i] += g * inv * (p2[i] - (*tgt)[i]);
    });
  }

  // Class-weighted cross entropy over [K,H,W] logits against int targets.
  // Normalized by the total class weight (so perfect prediction -> ~0).
  Var<T> weighted_ce(Var<T> logits, const Tensor<int32_t>& target,
                     const std::vector<T>& class_w) {
    const Tensor<T>& x = val(logits);
    int k = x.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    if (target.size() != hw) throw NumericError("weighted_ce: target shape mismatch");
    T wsum = T(0), loss = T(0);
    for (int64_t p = 0; p < hw; ++p) {
      int t = target[p];
      T mx = x[p];
      for (int c = 1; c < k; ++c) mx = std::max(mx, x[c * hw + p]);
      T z = T(0);
      for (int c = 0; c < k; ++c) z += std::exp(x[c * hw + p] - mx);
      T logp = x[t * hw + p] - mx - std::log(z);
      loss -= class_w[t] * logp;
      wsum += class_w[t];
    }
    if (wsum <= T(0)) wsum = T(1);
    loss /= wsum;
    auto tgt = std::make_shared<Tensor<int32_t>>(target);
    auto cw = std::make_shared<std::vector<T>>(class_w);
    return unary(Tensor<T>::scalar(loss), logits,
                 [this, tgt, cw, k, hw, wsum](int id, Var<T> logits) {
      T g = nodes_[id].grad[0] / wsum;
      const Tensor<T>& x2 = val(logits);
      Tensor<T>& gx = accum(logits.id);
      for (int64_t p = 0; p < hw; ++p) {
        int t = (*tgt)[p];
        T w = (*cw)[t];
        T mx = x2[p];
        for (int c = 1; c < k; ++c) mx = std::max(mx, x2[c * hw + p]);
        T z = T(0);
        for (int c = 0; c < k; ++c) z += std::exp(x2[c * hw + p] - mx);
        for (int c = 0; c < k; ++c) {
          T soft = std::exp(x2[c * hw + p] - mx) / z;
          gx[c * hw + p] += g * w * (soft - (c == t ? T(1) : T(0)));
        }
      }
    });
  }

  // Mean over masked cells of the per-cell L1 norm of a [2,H,W] field.
  // Empty mask -> exactly 0.
  Var<T> masked_l1(Var<T> pred, const Tensor<T>& target, const Tensor<T>& mask) {
    const Tensor<T>& p = val(pred);
    if (!p.same_shape(target)) throw NumericError("masked_l1: shape mismatch");
    int64_t hw = static_cast<int64_t>(p.dim(1)) * p.dim(2);
    if (mask.size() != hw) throw NumericError("masked_l1: mask shape mismatch");
    T cnt = T(0);
    for (int64_t i = 0; i < hw; ++i) cnt += (mask[i] > T(0.5)) ? T(1) : T(0);
    T denom = cnt > T(0) ? cnt : T(1);
    T s = T(0);
    for (int ch = 0; ch < p.dim(0); ++ch)
      for (int64_t i = 0; i < hw; ++i)
        if (mask[i] > T(0.5)) s += std::abs(p[ch * hw + i] - target[ch * hw + i]);
    s /= denom;
    auto tgt = std::make_shared<Tensor<T>>(target);
    auto msk = std::make_shared<Tensor<T>>(mask);
    return unary(Tensor<T>::scalar(s), pred,
                 [this, tgt, msk, hw, denom](int id, Var<T> pred) {
      T g = nodes_[id].grad[0] / denom;
      const Tensor<T>& p2 = val(pred);
      Tensor<T>& gp = accum(pred.id);
      for (int ch = 0; ch < p2.dim(0); ++ch)
        for (int64_t i = 0; i < hw; ++i)
          if ((*msk)[i] > T(0.5)) {
            T d = p2[ch * hw + i] - (*tgt)[ch * hw + i];
            gp[ch * hw + i] += g * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
          }
    });
  }

  // Depth-weighted scatter of image features onto the ground grid.
  // features: [C,P] (P image cells), probs: [D,P], cell_of: [D*P] flat BEV
  // index or -1 for out-of-extent. Output [C,HW] reshaped by the caller.
  Var<T> splat_pool(Var<T> features, Var<T> probs,
                    const std::shared_ptr<const std::vector<int32_t>>& cell_of,
                    int out_cells) {
    const Tensor<T>& f = val(features);
    const Tensor<T>& pr = val(probs);
    int c = f.dim(0);
    int64_t p = f.dim(1);
    int d = pr.dim(0);
    if (pr.dim(1) != p) throw NumericError("splat_pool: pixel count mismatch");
    Tensor<T> out({c, out_cells});
    for (int di = 0; di < d; ++di)
      for (int64_t pi = 0; pi < p; ++pi) {
        int32_t cell = (*cell_of)[di * p + pi];
        if (cell < 0) continue;
        T w = pr[di * p + pi];
        for (int ci = 0; ci < c; ++ci) out[ci * out_cells + cell] += w * f[ci * p + pi];
      }
    return unary_or_binary(std::move(out), features, probs,
                           [this, cell_of, c, p, d, out_cells](int id, Var<T> features,
                                                               Var<T> probs) {
      const Tensor<T>& g = nodes_[id].grad;
      const Tensor<T>& f2 = val(features);
      const Tensor<T>& pr2 = val(probs);
      bool need_f = nodes_[features.id].needs_grad;
      bool need_p = nodes_[probs.id].needs_grad;
      Tensor<T>* gf = need_f ? &accum(features.id) : nullptr;
      Tensor<T>* gp = need_p ? &accum(probs.id) : nullptr;
      for (int di = 0; di < d; ++di)
        for (int64_t pi = 0; pi < p; ++pi) {
          int32_t cell = (*cell_of)[di * p + pi];
          if (cell < 0) continue;
          if (need_f) {
            T w = pr2[di * p + pi];
            for (int ci = 0; ci < c; ++ci)
              (*gf)[ci * p + pi] += w * g[ci * out_cells + cell];
          }
          if (need_p) {
            T s = T(0);
            for (int ci = 0; ci < c; ++ci)
              s += f2[ci * p + pi] * g[ci * out_cells + cell];
            (*gp)[di * p + pi] += s;
          }
        }
    });
  }

 private:
  std::vector<Node> nodes_;

  Tensor<T>& accum(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }

  static void axpy(Tensor<T>& y, const Tensor<T>& x, T a) {
    for (int64_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
  }

  void check_same(Var<T> a, Var<T> b, const char* op) const {
    if (!val(a).same_shape(val(b)))
      throw NumericError(std::string(op) + ": shape mismatch " +
                         Tensor<T>::shape_str(val(a).shape) + " vs " +
                         Tensor<T>::shape_str(val(b).shape));
  }

  template <typename F>
  Var<T> unary(Tensor<T> out, Var<T> a, F fn) {
    bool req = nodes_[a.id].needs_grad;
    Var<T> r = leaf(std::move(out), req);
    if (req)
      nodes_[r.id].backward = [this, r, a, fn]() { fn(r.id, a); };
    return r;
  }

  template <typename F>
  Var<T> unary_or_binary(Tensor<T> out, Var<T> a, Var<T> b, F fn) {
    bool req = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
    Var<T> r = leaf(std::move(out), req);
    if (req)
      nodes_[r.id].backward = [this, r, a, b, fn]() { fn(r.id, a, b); };
    return r;
  }

  static void im2col(const T* x, int cin, int h, int w, int kh, int kw, int stride,
                     int pad, int ho, int wo, T* col) {
    int64_t ohw = static_cast<int64_t>(ho) * wo;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          T* dst = col + ((static_cast<int64_t>(ci) * kh + ky) * kw + kx) * ohw;
          for (int y = 0; y < ho; ++y) {
            int sy = y * stride - pad + ky;
            for (int xo = 0; xo < wo; ++xo) {
              int sx = xo * stride - pad + kx;
              dst[static_cast<int64_t>(y) * wo + xo] =
                  (sy >= 0 && sy < h && sx >= 0 && sx < w)
                      ? x[(static_cast<int64_t>(ci) * h + sy) * w + sx]
                      : T(0);
            }
          }
        }
  }

  static void col2im_add(const T* col, int cin, int h, int w, int kh, int kw,
                         int stride, int pad, int ho, int wo, T* x) {
    int64_t ohw = static_cast<int64_t>(ho) * wo;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const T* src = col + ((static_cast<int64_t>(ci) * kh + ky) * kw + kx) * ohw;
          for (int y = 0; y < ho; ++y) {
            int sy = y * stride - pad + ky;
            if (sy < 0 || sy >= h) continue;
            for (int xo = 0; xo < wo; ++xo) {
              int sx = xo * stride - pad + kx;
              if (sx < 0 || sx >= w) continue;
              x[(static_cast<int64_t>(ci) * h + sy) * w + sx] +=
                  src[static_cast<int64_t>(y) * wo + xo];
            }
          }
        }
  }

  void conv2d_backward(Var<T> r, Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
    const Tensor<T>& g = nodes_[r.id].grad;
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    int cin = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
    int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    int ho = g.dim(1), wo = g.dim(2);
    int64_t khw = static_cast<int64_t>(cin) * kh * kw;
    int64_t ohw = static_cast<int64_t>(ho) * wo;

    if (nodes_[b.id].needs_grad) {
      Tensor<T>& gb = accum(b.id);
      for (int co = 0; co < cout; ++co) {
        T s = T(0);
        for (int64_t i = 0; i < ohw; ++i) s += g[co * ohw + i];
        gb[co] += s;
      }
    }
    if (nodes_[w.id].needs_grad) {
      std::vector<T> col(static_cast<size_t>(khw * ohw));
      im2col(xv.data.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, col.data());
      CMapM G(g.data.data(), cout, ohw);
      CMapM C(col.data(), khw, ohw);
      MapM GW(accum(w.id).data.data(), cout, khw);
      GW.noalias() += G * C.transpose();
    }
    if (nodes_[x.id].needs_grad) {
      std::vector<T> gcol(static_cast<size_t>(khw * ohw));
      CMapM W(wv.data.data(), cout, khw);
      CMapM G(g.data.data(), cout, ohw);
      MapM GC(gcol.data(), khw, ohw);
      GC.noalias() = W.transpose() * G;
      col2im_add(gcol.data(), cin, h, wd, kh, kw, stride, pad, ho, wo,
                 accum(x.id).data.data());
    }
  }
};

}  // namespace stretchlab
