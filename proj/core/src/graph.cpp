#include "ccr/graph.hpp"

#include <stdexcept>

namespace ccr {

bool Graph::needs_record(std::initializer_list<const Tensor*> inputs) const {
  if (!recording()) return false;
  for (const Tensor* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

bool Graph::needs_record(const std::vector<Tensor>& inputs) const {
  if (!recording()) return false;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

void Graph::record(std::string op, std::vector<Tensor> inputs, Tensor& output,
                   std::function<void()> backward_fn) {
  Entry e;
  e.op = std::move(op);
  e.versions.reserve(inputs.size());
  for (const Tensor& t : inputs) e.versions.push_back(t.version());
  e.inputs = std::move(inputs);
  output.set_requires_grad(true);
  e.output = output;
  e.backward_fn = std::move(backward_fn);
  entries_.push_back(std::move(e));
}

void Graph::backward(Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  for (Entry& e : entries_) e.output.clear_grad();
  loss.mutable_grad()[0] += 1.0;

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    for (std::size_t i = 0; i < it->inputs.size(); ++i) {
      if (it->inputs[i].version() != it->versions[i]) {
        throw std::logic_error("backward: input " + std::to_string(i) + " of op '" + it->op +
                               "' was modified after being recorded");
      }
    }
    it->backward_fn();
  }
}

}  // namespace ccr
