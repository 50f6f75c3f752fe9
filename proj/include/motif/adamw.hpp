#pragma once

#include <cmath>

#include "motif/model.hpp"

namespace motif {

struct AdamWOptions {
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool nonneg_W = true;  // project W onto W >= 0 after every step
};

template <typename Scalar>
struct AdamState {
  ModelParams<Scalar> first;
  ModelParams<Scalar> second;
  long step = 0;

  static AdamState like(const ModelParams<Scalar>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// Decay applies only to tensors whose slot has weight_decay set.
template <typename Scalar>
void adamw_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, AdamState<Scalar>& state,
                const AdamWOptions& opt) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar lr = static_cast<Scalar>(opt.learning_rate);
  const Scalar b1 = static_cast<Scalar>(opt.beta1);
  const Scalar b2 = static_cast<Scalar>(opt.beta2);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(opt.beta1, t));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(opt.beta2, t));
  const Scalar eps = static_cast<Scalar>(opt.eps);
  const Scalar decay = static_cast<Scalar>(opt.learning_rate * opt.weight_decay);
  ModelParams<Scalar> g = grads;
  for_each_tensor(
      [&](const TensorSlot& slot, auto& p, auto& grad, auto& m, auto& v) {
        if (p.size() == 0) return;
        if (slot.weight_decay && opt.weight_decay != 0.0) p -= decay * p;
        m = b1 * m + (Scalar(1) - b1) * grad;
        v = b2 * v + (Scalar(1) - b2) * grad.cwiseAbs2();
        p.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
      },
      params, g, state.first, state.second);
  if (opt.nonneg_W) params.W = params.W.cwiseMax(Scalar(0));
}

}  // namespace motif
