#include "csta/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <utility>

namespace csta {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t dim : shape) n *= dim;
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

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (std::int64_t dim : shape) {
    if (dim <= 0) throw std::invalid_argument("tensor: nonpositive dim in " + shape_str(shape));
  }
  Tensor t;
  t.d = std::make_shared<TensorData>();
  t.d->shape = std::move(shape);
  t.d->values.assign(static_cast<std::size_t>(shape_numel(t.d->shape)), value);
  t.d->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.d = std::make_shared<TensorData>();
  t.d->shape = std::move(shape);
  t.d->values = std::move(values);
  t.d->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor: grad accessed before backward");
  return d->grad;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("tensor: item() on shape " + shape_str(shape()));
  return d->values[0];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.d = std::make_shared<TensorData>();
  t.d->shape = d->shape;
  t.d->values = d->values;
  t.d->requires_grad = false;
  return t;
}

void Tape::record(std::shared_ptr<TensorData> out, std::function<void()> backward_fn) {
  records_.push_back({std::move(out), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a defined scalar");
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss is not on the tape");
  }
  // Fresh gradients for everything an op produced; leaves keep theirs.
  for (Record& r : records_) r.out->grad.clear();
  loss.d->ensure_grad();
  loss.d->grad[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->out->grad.empty()) continue;  // not an ancestor of this loss
    it->backward_fn();
  }
}

void Tape::clear() { records_.clear(); }

namespace {
thread_local Tape g_tape;
thread_local bool g_grad_enabled = true;
}  // namespace

Tape& tape() { return g_tape; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) { g_tape.backward(loss); }

}  // namespace csta
