#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ccr/tensor.hpp"

namespace ccr {

// Tape of recorded operations. Built fresh for every forward pass and
// discarded after backward; never shared between threads.
class Graph {
 public:
  enum class Mode { kRecord, kNoGrad };

  explicit Graph(Mode mode = Mode::kRecord) : mode_(mode) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return mode_ == Mode::kRecord; }

  // True when an op over these inputs must be recorded.
  bool needs_record(std::initializer_list<const Tensor*> inputs) const;
  bool needs_record(const std::vector<Tensor>& inputs) const;

  // Appends an operation. `backward_fn` reads output.grad() and accumulates
  // into the inputs' mutable_grad(). The output is marked requires_grad.
  void record(std::string op, std::vector<Tensor> inputs, Tensor& output,
              std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss) = 1 and walks the tape once in reverse. Leaf
  // gradients accumulate across calls; intermediate gradients are reset.
  void backward(Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  const std::string& op_name(std::size_t i) const { return entries_.at(i).op; }

 private:
  struct Entry {
    std::string op;
    std::vector<Tensor> inputs;
    std::vector<std::uint64_t> versions;
    Tensor output;
    std::function<void()> backward_fn;
  };

  Mode mode_;
  std::vector<Entry> entries_;
};

}  // namespace ccr
