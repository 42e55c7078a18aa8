#include "ccr/tensor.hpp"

#include "aligned.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace ccr {

struct Tensor::Storage {
  Shape shape;
  AlignedBuffer data;
  AlignedBuffer grad;
  bool requires_grad = false;
  std::uint64_t version = 0;
};

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, bool requires_grad) : s_(std::make_shared<Storage>()) {
  s_->data.assign(ccr::numel(shape), 0.0);
  s_->shape = std::move(shape);
  s_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : s_(std::make_shared<Storage>()) {
  if (values.size() != ccr::numel(shape)) {
    throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                " values do not fill shape " + shape_str(shape));
  }
  s_->shape = std::move(shape);
  s_->data.assign(values.begin(), values.end());
  s_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.s_->data.begin(), t.s_->data.end(), value);
  return t;
}

const Shape& Tensor::shape() const {
  static const Shape kEmpty;
  return s_ ? s_->shape : kEmpty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw std::out_of_range("tensor: axis " + std::to_string(axis) + " out of range for " +
                            shape_str(shape()));
  }
  return s_->shape[axis];
}

std::size_t Tensor::numel() const { return s_ ? s_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!s_) return {};
  return s_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!s_) throw std::logic_error("tensor: write to undefined tensor");
  ++s_->version;
  return s_->data;
}

std::uint64_t Tensor::version() const { return s_ ? s_->version : 0; }

double Tensor::item() const {
  if (numel() != 1) {
    throw std::logic_error("tensor: item() on non-scalar " + shape_str(shape()));
  }
  return s_->data[0];
}

bool Tensor::requires_grad() const { return s_ && s_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!s_) throw std::logic_error("tensor: set_requires_grad on undefined tensor");
  s_->requires_grad = on;
}

bool Tensor::has_grad() const { return s_ && !s_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return s_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (!s_) throw std::logic_error("tensor: grad of undefined tensor");
  if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), 0.0);
  return s_->grad;
}

void Tensor::zero_grad() const {
  if (s_ && !s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

void Tensor::clear_grad() const {
  if (s_) {
    s_->grad.clear();
    s_->grad.shrink_to_fit();
  }
}

Tensor Tensor::clone() const {
  if (!s_) return {};
  return Tensor(s_->shape, std::vector<double>(s_->data.begin(), s_->data.end()), false);
}

}  // namespace ccr
