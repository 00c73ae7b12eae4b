#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vqab/tensor.hpp"

namespace vqab::gradcheck {

struct CheckResult {
  std::string name;
  bool pass = false;
  double max_err = 0.0;  // worst |ad - fd| / (abs_tol + rel_tol * max(|ad|,|fd|))
  std::string detail;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Central finite-difference check of reverse-mode gradients for a scalar
/// function of the given leaf tensors. The numeric side never touches the
/// tape, so it is independent of every backward rule it validates.
CheckResult finite_difference_check(const std::string& name, const ScalarFn& f, std::vector<Tensor> inputs,
                                    double rel_tol = 1e-4, double abs_tol = 1e-7, double step = 1e-6);

/// The full gradient suite: every differentiable primitive, block, and loss,
/// each over randomized small shapes. `module_filter` selects by name prefix
/// ("tensor", "blocks", "pos", "losses"); empty runs everything.
std::vector<CheckResult> run_gradient_checks(const std::string& module_filter = "", int shapes_per_op = 20,
                                             uint64_t seed = 1234);

}  // namespace vqab::gradcheck
