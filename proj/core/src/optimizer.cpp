#include "vqab/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace vqab {

Adam::Adam(const ParamStore& params, const AdamConfig& config) : config_(config) {
  if (config_.learning_rate <= 0) throw std::invalid_argument("Adam: learning_rate must be positive");
  if (config_.beta1 < 0 || config_.beta1 >= 1 || config_.beta2 < 0 || config_.beta2 >= 1)
    throw std::invalid_argument("Adam: betas must lie in [0,1)");
  for (const auto& [name, t] : params.entries()) {
    params_.push_back(t);
    Slot s;
    s.name = name;
    s.m.assign(static_cast<size_t>(t.numel()), 0.0);
    s.v.assign(static_cast<size_t>(t.numel()), 0.0);
    slots_.push_back(std::move(s));
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t p = 0; p < params_.size(); ++p) {
    TensorData& d = *params_[p].data();
    if (d.grad.empty()) continue;
    Slot& s = slots_[p];
    for (size_t i = 0; i < d.value.size(); ++i) {
      double g = d.grad[i];
      s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * g;
      s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * g * g;
      double mh = s.m[i] / bc1;
      double vh = s.v[i] / bc2;
      d.value[i] -= config_.learning_rate * mh / (std::sqrt(vh) + config_.eps);
    }
  }
}

void Adam::load_state(const std::vector<Slot>& slots, int64_t step_count) {
  if (slots.size() != slots_.size()) throw std::invalid_argument("Adam: state slot count mismatch");
  for (size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name != slots_[i].name || slots[i].m.size() != slots_[i].m.size() ||
        slots[i].v.size() != slots_[i].v.size())
      throw std::invalid_argument("Adam: state mismatch for parameter " + slots_[i].name);
  }
  slots_ = slots;
  t_ = step_count;
}

}  // namespace vqab
