#include "enaet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace enaet {

namespace {

template <typename T>
void size_state(std::vector<std::vector<T>>& state, const std::vector<ParamRef<T>>& params) {
  if (state.empty()) {
    state.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      state[i].assign(params[i].value->numel(), T(0));
    return;
  }
  if (state.size() != params.size())
    throw std::invalid_argument("optimizer: parameter list changed size");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state[i].size() != params[i].value->numel())
      throw std::invalid_argument("optimizer: parameter shape changed: " + params[i].name);
}

template <typename T>
bool all_zero(const Tensor<T>& g) {
  for (std::size_t i = 0; i < g.numel(); ++i)
    if (g.data()[i] != T(0)) return false;
  return true;
}

}  // namespace

template <typename T>
void Adam<T>::step(const std::vector<ParamRef<T>>& params) {
  size_state(m_, params);
  size_state(v_, params);
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef<T>& p = params[i];
    if (!p.grad) continue;
    T* w = p.value->data();
    const T* g = p.grad->data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t j = 0; j < p.value->numel(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = config_.beta1 * static_cast<double>(m[j]) + (1.0 - config_.beta1) * gj;
      const double vj =
          config_.beta2 * static_cast<double>(v[j]) + (1.0 - config_.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update =
          config_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + config_.eps);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
  }
}

template <typename T>
void Sgd<T>::step(const std::vector<ParamRef<T>>& params) {
  size_state(v_, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef<T>& p = params[i];
    if (!p.grad) continue;
    if (config_.skip_zero_grad && all_zero(*p.grad)) continue;
    T* w = p.value->data();
    const T* g = p.grad->data();
    T* v = v_[i].data();
    for (std::size_t j = 0; j < p.value->numel(); ++j) {
      const double gj =
          static_cast<double>(g[j]) + config_.weight_decay * static_cast<double>(w[j]);
      const double vj = config_.momentum * static_cast<double>(v[j]) + gj;
      v[j] = static_cast<T>(vj);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - config_.lr * vj);
    }
  }
}

template class Adam<float>;
template class Adam<double>;
template class Sgd<float>;
template class Sgd<double>;

}  // namespace enaet
