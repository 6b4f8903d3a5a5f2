#include "drformer/tensor.hpp"

#include <numeric>
#include <sstream>

#include "drformer/errors.hpp"

namespace drformer {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
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

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape()));
  return impl_->shape[1];
}

double Tensor::at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

std::span<const double> Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(impl_->shape, impl_->data, requires_grad);
}

// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() noexcept { return g_active_tape; }

RecordingGuard::RecordingGuard(Tape& tape) noexcept : previous_(g_active_tape) { g_active_tape = &tape; }
RecordingGuard::~RecordingGuard() { g_active_tape = previous_; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = previous_; }

TapeScope::TapeScope(std::string label) : tape_(g_active_tape) {
  if (tape_) tape_->push_scope(std::move(label));
}
TapeScope::~TapeScope() {
  if (tape_) tape_->pop_scope();
}

void Tape::record(std::string_view op, std::vector<ImplPtr> inputs, ImplPtr output, BackwardFn fn) {
  std::string scope;
  for (const auto& s : scopes_) {
    if (!scope.empty()) scope += '/';
    scope += s;
  }
  output->requires_grad = true;
  nodes_.push_back(Node{std::string(op), std::move(scope), std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
  }
  const auto& root = loss.impl();
  bool produced_here = false;
  for (const auto& n : nodes_) {
    if (n.output == root) {
      produced_here = true;
      break;
    }
  }
  if (!produced_here && !root->requires_grad) {
    throw ContractError("backward(): loss is not reachable from this tape");
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not on any path to the loss
    it->backward(it->output->grad);
  }
}

std::size_t Tape::count_scope(std::string_view scope) const {
  std::size_t n = 0;
  for (const auto& node : nodes_) {
    std::string_view s = node.scope;
    while (!s.empty()) {
      const auto cut = s.find('/');
      if (s.substr(0, cut) == scope) {
        ++n;
        break;
      }
      if (cut == std::string_view::npos) break;
      s.remove_prefix(cut + 1);
    }
  }
  return n;
}

std::size_t Tape::count_op(std::string_view op) const {
  std::size_t n = 0;
  for (const auto& node : nodes_) n += node.op == op;
  return n;
}

void Tape::push_scope(std::string scope) { scopes_.push_back(std::move(scope)); }
void Tape::pop_scope() {
  if (!scopes_.empty()) scopes_.pop_back();
}

}  // namespace drformer
