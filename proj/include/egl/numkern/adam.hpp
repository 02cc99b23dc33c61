#pragma once

#include <cmath>
#include <vector>

#include "egl/numkern/tape.hpp"

namespace egl::nk {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  Mat m;
  Mat v;
};

struct AdamState {
  long long step = 0;
  std::vector<AdamSlot> slots;
};

// One bias-corrected Adam step over `params` using their accumulated grads.
inline void adam_update(std::vector<Parameter*>& params, AdamState& state, const AdamConfig& cfg) {
  if (state.slots.empty()) {
    state.slots.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.slots[i].m = Mat::Zero(params[i]->value.rows(), params[i]->value.cols());
      state.slots[i].v = state.slots[i].m;
    }
  }
  if (state.slots.size() != params.size()) throw Error("adam state does not match parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& s = state.slots[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() || s.m.rows() != p.value.rows() ||
        s.m.cols() != p.value.cols())
      throw Error("adam shape mismatch on parameter '" + p.name + "'");
    s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * p.grad;
    s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= cfg.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + cfg.eps);
  }
}

inline void zero_grads(std::vector<Parameter*>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace egl::nk
