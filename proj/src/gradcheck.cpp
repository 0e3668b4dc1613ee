#include "objvid/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "objvid/errors.hpp"

namespace objvid {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  Tensor out = f();
  if (!out.defined() || out.size() != 1) {
    throw ContractError("grad_check: objective must produce a scalar");
  }
  return out.value();
}

}  // namespace

GradCheck grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                     double step) {
  Tensor out = f();
  if (!out.defined() || out.size() != 1) {
    throw ContractError("grad_check: objective must produce a scalar");
  }
  out.backward();

  // Snapshot analytic grads before perturbation runs disturb anything.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    if (p.has_grad()) {
      analytic.push_back(p.grad());
    } else {
      analytic.emplace_back(p.size(), 0.0);  // parameter unused by f
    }
  }

  GradCheck result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    auto& values = p.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      // Five-point stencil, truncation error O(h^4).
      const auto stencil = [&](double h) {
        values[i] = saved + h;
        const double f_p1 = eval_scalar(f);
        values[i] = saved - h;
        const double f_m1 = eval_scalar(f);
        values[i] = saved + 2.0 * h;
        const double f_p2 = eval_scalar(f);
        values[i] = saved - 2.0 * h;
        const double f_m2 = eval_scalar(f);
        values[i] = saved;
        return (8.0 * (f_p1 - f_m1) - (f_p2 - f_m2)) / (12.0 * h);
      };
      // Halve the step until consecutive estimates agree, so sharp local
      // curvature cannot masquerade as an analytic-gradient mismatch.
      double h = step;
      double fd = stencil(h);
      for (int r = 0; r < 4; ++r) {
        const double fd_half = stencil(0.5 * h);
        const bool settled =
            std::fabs(fd_half - fd) <= 1e-6 * std::max(1.0, std::fabs(fd_half));
        fd = fd_half;
        h *= 0.5;
        if (settled) break;
      }
      const double ad = analytic[pi][i];
      const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-6});
      const double rel = std::fabs(ad - fd) / denom;
      if (rel > 1e-3 && std::getenv("OBJVID_GRADCHECK_DEBUG")) {
        std::fprintf(stderr, "gc dbg: pi=%zu i=%zu ad=%.9e fd=%.9e h=%.3e\n", pi, i, ad, fd,
                     h);
      }
      if (rel > result.max_rel_err) result.max_rel_err = rel;
      ++result.checked;
    }
  }
  return result;
}

}  // namespace objvid
