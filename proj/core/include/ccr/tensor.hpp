#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ccr {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Shared handle to a row-major float64 buffer with an optional gradient.
// Copies of a Tensor alias the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Write access bumps the version counter; the graph refuses to run
  // backward through an input whose version changed after recording.
  std::span<double> mutable_data();
  std::uint64_t version() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient buffer on first use.
  std::span<double> mutable_grad() const;
  void zero_grad() const;
  void clear_grad() const;

  Tensor clone() const;
  Tensor detach() const { return clone(); }
  bool same(const Tensor& other) const { return s_ == other.s_; }

 private:
  struct Storage;
  std::shared_ptr<Storage> s_;
};

}  // namespace ccr
