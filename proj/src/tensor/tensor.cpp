#include "dudo/tensor/tensor.hpp"

#include <sstream>

#include "dudo/tensor/tape.hpp"

namespace dudo {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

DimensionError::DimensionError(const std::string& op, const std::string& axis,
                               const std::string& detail)
    : std::invalid_argument(op + ": dimension mismatch on axis '" + axis +
                            "': " + detail),
      axis_(axis) {}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
  for (auto e : shape)
    if (e == 0) throw ContractError("tensor extents must be positive: " + shape_str(shape));
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
  for (auto e : shape)
    if (e == 0) throw ContractError("tensor extents must be positive: " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("Tensor", "numel",
                         "shape " + shape_str(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  set_requires_grad(requires_grad);
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on)
    node_->ensure_grad();
  else
    node_->grad.clear();
}

std::span<double> Tensor::grad() {
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return node_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::clone() const {
  Tensor out(node_->shape, node_->data, false);
  return out;
}

Tensor Tensor::detach() const { return clone(); }

Tensor make_result(Shape shape, bool track) {
  auto node = std::make_shared<TensorNode>();
  node->data.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = track;
  if (track) node->ensure_grad();
  return Tensor(std::move(node));
}

}  // namespace dudo
