#pragma once

#include <map>
#include <string>

#include "gdiff/tensor.hpp"

namespace gdiff {

// Named parameter collection. std::map keeps iteration order deterministic,
// which checkpointing and the optimizer rely on.
using ParamMap = std::map<std::string, Tensor>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first/second moment accumulators plus the shared step count.
// Accumulators are created lazily on the first update and must match their
// parameter's shape afterwards.
struct AdamState {
  AdamConfig hyper;
  long long step = 0;
  ParamMap m;
  ParamMap v;
};

// One bias-corrected Adam update over every named parameter. Deterministic:
// two calls with identical inputs produce bitwise-identical results.
void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state);

// Single-tensor update used by adam_step and directly by the attack trainer.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long long step,
                 const AdamConfig& hyper);

}  // namespace gdiff
