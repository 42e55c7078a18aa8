#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ccr/graph.hpp"
#include "ccr/tensor.hpp"

namespace ccr {

using ScalarFn = std::function<Tensor(Graph&, const Tensor&)>;

// Max over coordinates of |analytic - central difference| /
// max(1, |analytic|, |numeric|). Throws std::domain_error naming the
// coordinate when an evaluation is non-finite.
double gradcheck(const ScalarFn& f, const Tensor& x, double step = 1e-5);

// Same check over several leaves at once; `f` closes over `params`, which are
// perturbed in place and restored.
double gradcheck_params(const std::function<Tensor(Graph&)>& f, std::vector<Tensor> params,
                        double step = 1e-5);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Coupled L2: added to the gradient before the moment updates.
  double weight_decay = 1e-4;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One Adam update over `params` (which must all hold gradients).
void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamOptions& opts);

}  // namespace ccr
