#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fefa/tensor.hpp"

namespace fefa::nn {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;  // false for buffers such as batch-norm running stats
};

/// Named parameters of one model, in registration order. Names are unique.
class ParameterSet {
 public:
  Tensor add(std::string name, Shape shape, bool trainable = true);
  Tensor add(std::string name, Tensor tensor, bool trainable = true);

  const std::vector<Parameter>& items() const { return items_; }
  const Parameter* find(const std::string& name) const;

  /// Sum of element counts over trainable parameters.
  std::size_t trainable_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> items_;
};

/// Adam with bias correction. Moments are kept per trainable parameter in
/// ParameterSet order.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParameterSet& params);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::uint64_t steps() const { return t_; }

  // Checkpoint access.
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  const std::vector<Moments>& moments() const { return moments_; }
  void restore(std::uint64_t steps, std::vector<Moments> moments);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Moments> moments_;
};

}  // namespace fefa::nn
