#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "csta/tensor.hpp"

namespace csta {

// Central-difference gradient of a scalar-valued function w.r.t. x, used as
// the independent oracle for the taped backward pass. Perturbs x in place and
// restores it; evaluations run with recording off.
template <typename F>
std::vector<double> fd_grad(Tensor& x, F&& loss_fn, double h = 1e-4) {
  NoGradGuard ng;
  std::vector<double> g(static_cast<std::size_t>(x.numel()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double saved = x.values()[i];
    x.values()[i] = saved + h;
    const double up = loss_fn().item();
    x.values()[i] = saved - h;
    const double down = loss_fn().item();
    x.values()[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline bool grads_close(const std::vector<double>& got, const std::vector<double>& want,
                        double rtol = 1e-4, double atol = 1e-7) {
  if (got.size() != want.size()) return false;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double scale = std::max(std::abs(got[i]), std::abs(want[i]));
    if (std::abs(got[i] - want[i]) > atol + rtol * scale) return false;
  }
  return true;
}

}  // namespace csta
