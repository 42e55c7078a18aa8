#include "ccr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ccr {

double gradcheck(const ScalarFn& f, const Tensor& x, double step) {
  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  return gradcheck_params([&](Graph& g) { return f(g, leaf); }, {leaf}, step);
}

double gradcheck_params(const std::function<Tensor(Graph&)>& f, std::vector<Tensor> params,
                        double step) {
  for (Tensor& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  {
    Graph g;
    Tensor y = f(g);
    if (!std::isfinite(y.item())) throw std::domain_error("gradcheck: non-finite value at base point");
    g.backward(y);
  }

  auto eval = [&](std::size_t which, std::size_t i) {
    Graph g(Graph::Mode::kNoGrad);
    const double v = f(g).item();
    if (!std::isfinite(v)) {
      throw std::domain_error("gradcheck: non-finite value perturbing tensor " +
                              std::to_string(which) + " coordinate " + std::to_string(i));
    }
    return v;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double orig = p.data()[i];
      p.mutable_data()[i] = orig + step;
      const double up = eval(k, i);
      p.mutable_data()[i] = orig - step;
      const double down = eval(k, i);
      p.mutable_data()[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

void adam_step(std::span<Tensor> params, AdamState& state, double lr, const AdamOptions& opts) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state tracks " +
                                std::to_string(state.m.size()) + " tensors, got " +
                                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::logic_error("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(opts.beta1, t);
  const double bc2 = 1.0 - std::pow(opts.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto p = params[i].mutable_data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = grad[j] + opts.weight_decay * p[j];
      m[j] = opts.beta1 * m[j] + (1.0 - opts.beta1) * gj;
      v[j] = opts.beta2 * v[j] + (1.0 - opts.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
  }
}

}  // namespace ccr
