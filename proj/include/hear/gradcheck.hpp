// Central finite-difference comparison against analytic gradients. Used
// by the gradcheck command and by the test suite as the numeric route of
// every gradient check.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>

#include "hear/tensor.hpp"

namespace hear {

struct FdReport {
  double max_rel = 0.0;
  std::size_t checked = 0;

  void merge(const FdReport& other) {
    max_rel = std::max(max_rel, other.max_rel);
    checked += other.checked;
  }
};

// Perturbs each element of theta by +/-h, re-evaluates loss_fn (which must
// read theta by reference and rebuild its computation), and compares the
// central difference against analytic[i]. The relative error uses an
// absolute floor so near-zero gradient pairs compare on absolute terms.
template <typename T, typename LossFn>
FdReport fd_check(LossFn&& loss_fn, Tensor<T>& theta,
                  const Tensor<T>& analytic, T h = T(1e-4),
                  double floor = 1e-3) {
  FdReport rep;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    T orig = theta[i];
    theta[i] = orig + h;
    double fp = static_cast<double>(loss_fn());
    theta[i] = orig - h;
    double fm = static_cast<double>(loss_fn());
    theta[i] = orig;
    double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
    double ana = static_cast<double>(analytic[i]);
    double denom = std::max(floor, std::abs(numeric) + std::abs(ana));
    rep.max_rel = std::max(rep.max_rel, std::abs(numeric - ana) / denom);
    ++rep.checked;
  }
  return rep;
}

}  // namespace hear
