#pragma once

#include <cstdint>
#include <vector>

#include "enaet/networks.hpp"
#include "enaet/tensor.hpp"

// The two optimizers of the training recipe: adaptive moments for the
// backbone (encoder + classifier) and momentum stochastic gradient descent
// with weight decay for the transformation decoders. Both keep per-parameter
// state buffers in parameter-list order, so the same list must be passed to
// every step (and to the checkpoint code).

namespace enaet {

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(const AdamConfig& config) : config_(config) {}

  void step(const std::vector<ParamRef<T>>& params);
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }

  std::int64_t steps_taken() const { return t_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void restore_step_count(std::int64_t t) { t_ = t; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // A parameter whose gradient is identically zero is left untouched,
  // velocity included; a head that took part in no loss does not drift.
  bool skip_zero_grad = true;
};

template <typename T>
class Sgd {
 public:
  explicit Sgd(const SgdConfig& config) : config_(config) {}

  void step(const std::vector<ParamRef<T>>& params);
  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }

  std::vector<std::vector<T>>& velocities() { return v_; }

 private:
  SgdConfig config_;
  std::vector<std::vector<T>> v_;
};

}  // namespace enaet
