#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace drformer {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major double tensor with an optional gradient buffer.
//
// Copies share storage (handle semantics). Values produced by an operation are
// never modified afterwards; only leaves (parameters) are written, by the
// optimizer, between tape lifetimes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }
  // Leading / trailing extents of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient buffer; reads as zeros when nothing has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Fresh storage with the same values and no gradient history.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of differentiable operations executed while the tape is
// active on the current thread. Execution order is a topological order, so a
// reverse sweep visits each node once after all of its consumers.
class Tape {
 public:
  using ImplPtr = std::shared_ptr<detail::TensorImpl>;
  // Receives the gradient of the node output and accumulates into inputs.
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  struct Node {
    std::string op;
    std::string scope;
    std::vector<ImplPtr> inputs;
    ImplPtr output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string_view op, std::vector<ImplPtr> inputs, ImplPtr output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Leaf gradients
  // accumulate into whatever the buffers already hold.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t count_scope(std::string_view scope) const;
  std::size_t count_op(std::string_view op) const;

  void push_scope(std::string scope);
  void pop_scope();

 private:
  std::vector<Node> nodes_;
  std::vector<std::string> scopes_;
};

// The tape operations record into on this thread, or nullptr.
Tape* active_tape() noexcept;

// Activates a tape for the current thread for the guard's lifetime.
class RecordingGuard {
 public:
  explicit RecordingGuard(Tape& tape) noexcept;
  ~RecordingGuard();
  RecordingGuard(const RecordingGuard&) = delete;
  RecordingGuard& operator=(const RecordingGuard&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording (inference / finite differences).
class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

// Labels every node recorded on the active tape while alive.
class TapeScope {
 public:
  explicit TapeScope(std::string label);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* tape_;
};

}  // namespace drformer
