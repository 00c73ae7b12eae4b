#pragma once

#include <string>
#include <vector>

#include "vqab/nn_blocks.hpp"
#include "vqab/tensor.hpp"

namespace vqab {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Adam with bias correction. Walks a ParamStore in registration order, so
/// the update is deterministic and the moment buffers serialize by name.
class Adam {
 public:
  explicit Adam(const ParamStore& params, const AdamConfig& config = {});

  void step();

  struct Slot {
    std::string name;
    std::vector<double> m, v;
  };
  int64_t step_count() const { return t_; }
  const std::vector<Slot>& slots() const { return slots_; }
  const AdamConfig& config() const { return config_; }

  /// Restores moment buffers and step count from a checkpoint.
  void load_state(const std::vector<Slot>& slots, int64_t step_count);

 private:
  AdamConfig config_;
  std::vector<Tensor> params_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace vqab
