#pragma once

#include <functional>
#include <vector>

#include "objvid/tensor.hpp"

namespace objvid {

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;  // scalar entries compared
};

// Compares reverse-mode gradients of the scalar f() against central finite
// differences over every entry of every listed parameter. Parameters are
// perturbed in place and restored. Relative error uses a 1e-6 floor in the
// denominator, so near-zero gradients are compared absolutely.
GradCheck grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                     double step = 1e-5);

}  // namespace objvid
