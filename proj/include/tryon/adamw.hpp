#pragma once

#include <map>
#include <span>

#include "tryon/tensor.hpp"

namespace tryon {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Decoupled weight decay with bias correction. Moments are kept per parameter
// name so parameters can join the trainable set at different times.
class AdamW {
 public:
  struct ParamState {
    Tensor m, v;
    int64_t step = 0;
  };

  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  // Applies one update to every given parameter; a missing grad counts as a
  // zero gradient (moment decay and weight decay still apply).
  void step(std::span<NamedParam> params);
  void zero_grad(std::span<NamedParam> params);

  std::map<std::string, ParamState>& state() { return state_; }
  const std::map<std::string, ParamState>& state() const { return state_; }

 private:
  AdamWConfig cfg_;
  std::map<std::string, ParamState> state_;
};

}  // namespace tryon
