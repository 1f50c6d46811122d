#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace csta {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Storage node shared by Tensor handles. `grad` stays empty until a backward
// pass first accumulates into it; it always matches `values` in length after
// that. All math is double precision.
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// Value-semantics handle onto a TensorData node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return d != nullptr; }
  const Shape& shape() const { return d->shape; }
  std::int64_t numel() const { return d->numel(); }
  bool requires_grad() const { return d && d->requires_grad; }

  std::vector<double>& values() { return d->values; }
  const std::vector<double>& values() const { return d->values; }

  bool has_grad() const { return d && !d->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() { if (d) d->grad.clear(); }

  double item() const;
  double at(std::int64_t i) const { return d->values[static_cast<std::size_t>(i)]; }

  // Same values, cut loose from the tape. Deep-copies the buffer so later
  // in-place updates to the source (e.g. SGD steps) do not leak through.
  Tensor detach() const;

  std::shared_ptr<TensorData> d;
};

// Ordered op log. Records are pushed in execution order, so every node's
// inputs are recorded before the node itself; backward() walks the records in
// reverse and therefore visits each node exactly once with its output
// gradient fully accumulated.
class Tape {
 public:
  void record(std::shared_ptr<TensorData> out, std::function<void()> backward_fn);

  // Seeds d(loss)/d(loss) = 1 and replays the tape. Gradients of recorded
  // intermediates are reset per call; gradients of leaves (tensors not
  // produced by a recorded op) accumulate across calls until zero_grad().
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  void clear();

 private:
  struct Record {
    std::shared_ptr<TensorData> out;
    std::function<void()> backward_fn;
  };
  std::vector<Record> records_;
};

// Thread-local active tape; each worker thread owns a disjoint one.
Tape& tape();

bool grad_enabled();

// RAII scope that disables recording (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

void backward(const Tensor& loss);

}  // namespace csta
