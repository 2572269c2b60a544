#include "fefa/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fefa::nn {

Tensor ParameterSet::add(std::string name, Shape shape, bool trainable) {
  return add(std::move(name), Tensor::zeros(std::move(shape), trainable), trainable);
}

Tensor ParameterSet::add(std::string name, Tensor tensor, bool trainable) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  items_.push_back({std::move(name), tensor, trainable});
  return tensor;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParameterSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : items_)
    if (p.trainable) n += p.tensor.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_)
    if (p.trainable) p.tensor.zero_grad();
}

void Adam::step(const ParameterSet& params) {
  std::size_t slot = 0;
  for (const auto& p : params.items())
    if (p.trainable) ++slot;
  if (moments_.empty()) {
    for (const auto& p : params.items())
      if (p.trainable) moments_.push_back({std::vector<double>(p.tensor.size(), 0.0),
                                           std::vector<double>(p.tensor.size(), 0.0)});
  } else if (moments_.size() != slot) {
    throw std::invalid_argument("Adam state does not match parameter set");
  }

  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  slot = 0;
  for (const auto& p : params.items()) {
    if (!p.trainable) continue;
    Moments& st = moments_[slot++];
    Tensor t = p.tensor;
    auto w = t.mutable_data();
    const auto g = t.grad();
    if (g.empty()) continue;
    for (std::size_t i = 0; i < w.size(); ++i) {
      st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g[i];
      st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = st.m[i] / c1;
      const double vhat = st.v[i] / c2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::restore(std::uint64_t steps, std::vector<Moments> moments) {
  t_ = steps;
  moments_ = std::move(moments);
}

}  // namespace fefa::nn
