#include "vedit/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vedit {

namespace {

template <typename State>
State& slot_state(std::vector<State>& v, std::size_t slot, const ad::Matrix& like) {
  if (v.size() <= slot) v.resize(slot + 1);
  if (v[slot].size() == 0) v[slot] = ad::Matrix::Zero(like.rows(), like.cols());
  if (v[slot].rows() != like.rows() || v[slot].cols() != like.cols()) {
    throw std::invalid_argument("optimizer slot changed shape");
  }
  return v[slot];
}

void check_lists(const std::vector<ad::Matrix*>& params, const std::vector<ad::Matrix>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("optimizer: params/grads length mismatch");
}

}  // namespace

ad::Matrix RmsProp::direction(std::size_t slot, const ad::Matrix& grad) {
  ad::Matrix& s = slot_state(sq_, slot, grad);
  s = cfg_.alpha * s + (1.0 - cfg_.alpha) * grad.cwiseProduct(grad);
  return cfg_.lr * grad.array() / (s.array().sqrt() + cfg_.eps);
}

void RmsProp::step(const std::vector<ad::Matrix*>& params, const std::vector<ad::Matrix>& grads) {
  check_lists(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] -= direction(i, grads[i]);
}

ad::Matrix Adam::direction(std::size_t slot, const ad::Matrix& grad) {
  ad::Matrix& m = slot_state(m_, slot, grad);
  ad::Matrix& v = slot_state(v_, slot, grad);
  if (t_.size() <= slot) t_.resize(slot + 1, 0);
  const long t = ++t_[slot];
  m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
  v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg_.beta1, double(t));
  const double c2 = 1.0 - std::pow(cfg_.beta2, double(t));
  return cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
}

void Adam::step(const std::vector<ad::Matrix*>& params, const std::vector<ad::Matrix>& grads,
                const std::vector<bool>& decay) {
  check_lists(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (cfg_.weight_decay > 0 && i < decay.size() && decay[i]) *params[i] *= 1.0 - cfg_.lr * cfg_.weight_decay;
    *params[i] -= direction(i, grads[i]);
  }
}

double global_norm(const std::vector<ad::Matrix>& grads) {
  double s = 0;
  for (const auto& g : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

double clip_global_norm(std::vector<ad::Matrix>& grads, double max_norm) {
  const double n = global_norm(grads);
  if (std::isfinite(n) && n > max_norm) {
    const double f = max_norm / n;
    for (auto& g : grads) g *= f;
  }
  return n;
}

}  // namespace vedit
