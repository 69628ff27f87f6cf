#include "tryon/adamw.hpp"

#include <cmath>

namespace tryon {

void AdamW::step(std::span<NamedParam> params) {
  for (auto& p : params) {
    auto& im = p.tensor.impl();
    auto& st = state_[p.name];
    if (!st.m.defined()) {
      st.m = Tensor::zeros(im.shape, im.dtype);
      st.v = Tensor::zeros(im.shape, im.dtype);
    }
    if (st.m.shape() != im.shape)
      throw ContractError("adamw: state shape mismatch for " + p.name);
    Tensor g = p.tensor.grad();
    if (g.defined() && g.shape() != im.shape)
      throw ContractError("adamw: grad shape mismatch for " + p.name);

    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.step));

    auto& mi = st.m.impl();
    auto& vi = st.v.impl();
    const int64_t n = im.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = g.defined() ? g.impl().get(i) : 0.0;
      const double m = cfg_.beta1 * mi.get(i) + (1.0 - cfg_.beta1) * gi;
      const double v = cfg_.beta2 * vi.get(i) + (1.0 - cfg_.beta2) * gi * gi;
      mi.set(i, m);
      vi.set(i, v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      const double pv = im.get(i);
      im.set(i, pv - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * pv));
    }
  }
}

void AdamW::zero_grad(std::span<NamedParam> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace tryon
