#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stretchlab/core/tape.hpp"

namespace stretchlab {

// Named view over the parameter tensors of a model. Non-owning; modules keep
// their tensors, the registry fixes a global order used by the optimizer,
// checkpoints and gradient checks.
template <typename T>
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor<T>* value;
  };

  void add(const std::string& name, Tensor<T>* value) {
    index_[name] = entries_.size();
    entries_.push_back({name, value});
  }

  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  Tensor<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : entries_[it->second].value;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// Pushes each parameter onto the tape once per forward pass and remembers the
// mapping so gradients can be read back after backward().
template <typename T>
class Binder {
 public:
  Binder(Tape<T>& tape, bool train,
         const std::unordered_set<const void*>* frozen = nullptr)
      : tape_(&tape), train_(train), frozen_(frozen) {}

  Var<T> operator()(const Tensor<T>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    bool req = train_ && !(frozen_ && frozen_->count(&p));
    Var<T> v = tape_->leaf(p, req);
    bound_.emplace(&p, v);
    return v;
  }

  // Invalid Var if the parameter was not used in this pass.
  Var<T> lookup(const Tensor<T>& p) const {
    auto it = bound_.find(&p);
    return it == bound_.end() ? Var<T>{} : it->second;
  }

  Tape<T>& tape() { return *tape_; }

 private:
  Tape<T>* tape_;
  bool train_;
  const std::unordered_set<const void*>* frozen_;
  std::unordered_map<const void*, Var<T>> bound_;
};

template <typename T>
struct Conv2d {
  Tensor<T> w, b;
  int stride = 1, pad = 0;

  void init(int cin, int cout, int k, int stride_, Rng& rng, T gain = T(1)) {
    stride = stride_;
    pad = k / 2;
    T std = gain * std::sqrt(T(2) / T(cin * k * k));
    w = Tensor<T>::randn({cout, cin, k, k}, rng, std);
    b = Tensor<T>({cout});
  }

  void zero() {
    w.fill(T(0));
    b.fill(T(0));
  }

  Var<T> operator()(Binder<T>& B, Var<T> x) const {
    return B.tape().conv2d(x, B(w), B(b), stride, pad);
  }

  void reg(ParamRegistry<T>& r, const std::string& name) {
    r.add(name + ".w", &w);
    r.add(name + ".b", &b);
  }
};

// Convolutional GRU cell over [C,H,W] maps; gates via 3x3 convolutions.
template <typename T>
struct ConvGru {
  Conv2d<T> gates;      // concat(x,h) -> 2*hidden (update, reset)
  Conv2d<T> candidate;  // concat(x, r.*h) -> hidden
  int hidden = 0;

  void init(int cin, int hidden_, Rng& rng) {
    hidden = hidden_;
    gates.init(cin + hidden_, 2 * hidden_, 3, 1, rng);
    candidate.init(cin + hidden_, hidden_, 3, 1, rng);
  }

  Var<T> step(Binder<T>& B, Var<T> x, Var<T> h) const {
    Tape<T>& tp = B.tape();
    Var<T> g = tp.sigmoid(gates(B, tp.concat_ch({x, h})));
    Var<T> z = tp.slice_ch(g, 0, hidden);
    Var<T> r = tp.slice_ch(g, hidden, 2 * hidden);
    Var<T> cand = tp.tanh(candidate(B, tp.concat_ch({x, tp.mul(r, h)})));
    // h' = h + z .* (cand - h)
    return tp.add(h, tp.mul(z, tp.sub(cand, h)));
  }

  void reg(ParamRegistry<T>& r, const std::string& name) {
    gates.reg(r, name + ".gates");
    candidate.reg(r, name + ".cand");
  }
};

// First-order adaptive-moment optimizer with bias correction.
template <typename T>
class Adam {
 public:
  Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(const ParamRegistry<T>& reg,
              const std::function<T(const std::string&)>& lr_mult = nullptr) {
    slots_.clear();
    for (const auto& e : reg.entries()) {
      Slot s;
      s.m = Tensor<T>(e.value->shape);
      s.v = Tensor<T>(e.value->shape);
      s.mult = lr_mult ? lr_mult(e.name) : T(1);
      slots_.push_back(std::move(s));
    }
    step_count_ = 0;
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }

  // grads aligned with the registry order used in attach().
  void step(const ParamRegistry<T>& reg, const std::vector<Tensor<T>>& grads) {
    ++step_count_;
    T bc1 = T(1) - std::pow(beta1_, T(step_count_));
    T bc2 = T(1) - std::pow(beta2_, T(step_count_));
    for (size_t i = 0; i < slots_.size(); ++i) {
      Tensor<T>& p = *reg.entries()[i].value;
      const Tensor<T>& g = grads[i];
      if (g.empty()) continue;
      Slot& s = slots_[i];
      T alpha = lr_ * s.mult;
      for (int64_t j = 0; j < p.size(); ++j) {
        s.m[j] = beta1_ * s.m[j] + (T(1) - beta1_) * g[j];
        s.v[j] = beta2_ * s.v[j] + (T(1) - beta2_) * g[j] * g[j];
        T mhat = s.m[j] / bc1;
        T vhat = s.v[j] / bc2;
        p[j] -= alpha * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  struct Slot {
    Tensor<T> m, v;
    T mult = T(1);
  };
  std::vector<Slot> slots_;
  T lr_, beta1_, beta2_, eps_;
  int64_t step_count_ = 0;
};

}  // namespace stretchlab
