#include "forensicflow/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "forensicflow/error.hpp"

namespace ff {

namespace {
thread_local Tape* t_current_tape = nullptr;
thread_local Precision t_precision = Precision::f32;
thread_local Tape* t_backward_tape = nullptr;

detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw UsageError("operation on an undefined tensor");
  return *impl;
}
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
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

Tensor::Tensor(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::of(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::data() const { return checked(impl_).data; }
std::span<double> Tensor::mutable_data() { return checked(impl_).data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  checked(impl_).requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }
std::span<const double> Tensor::grad() const { return checked(impl_).grad; }

void Tensor::clear_grad() {
  auto& g = checked(impl_).grad;
  g.clear();
  g.shrink_to_fit();
}

void Tensor::retain_grad() { checked(impl_).retain_grad = true; }

std::optional<std::size_t> Tensor::tape_id() const { return checked(impl_).tape_id; }

Tensor Tensor::detach() const { return Tensor(shape(), checked(impl_).data); }

// ---------------------------------------------------------------------------

Tape::Tape(Precision precision) : precision_(precision) {}

Tape::~Tape() { clear(); }

void Tape::clear() {
  for (auto& node : nodes_) {
    if (node.output && node.output->tape == this) {
      node.output->tape = nullptr;
      node.output->tape_id.reset();
    }
  }
  nodes_.clear();
}

bool Tape::tracks(const Tensor& t) const {
  const auto* impl = t.impl();
  return impl->requires_grad || (impl->tape == this && impl->tape_id.has_value());
}

void Tape::record(std::string op, const std::vector<Tensor>& inputs, Tensor& output, BackwardFn fn) {
  Node node;
  node.op = std::move(op);
  node.input_ids.reserve(inputs.size());
  for (const auto& in : inputs) {
    const auto* impl = in.impl();
    node.input_ids.push_back(impl->tape == this ? impl->tape_id : std::nullopt);
  }
  output.impl()->tape = this;
  output.impl()->tape_id = nodes_.size();
  node.output = output.impl_ptr();
  node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  auto* limpl = loss.impl();
  if (!limpl || limpl->tape != this || !limpl->tape_id) {
    throw UsageError("backward() on a tensor that was not recorded on this tape");
  }
  if (limpl->data.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(limpl->shape));
  }
  Tape* previous_backward = t_backward_tape;
  Precision previous_precision = t_precision;
  t_backward_tape = this;
  t_precision = precision_;

  limpl->grad.assign(1, 1.0);
  for (std::size_t i = *limpl->tape_id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    auto& out = *node.output;
    if (out.grad.empty()) continue;
    apply_precision(out.grad);
    node.backward(out.grad, out.data);
    if (!out.retain_grad && &out != limpl) {
      out.grad.clear();
      out.grad.shrink_to_fit();
    }
  }
  t_backward_tape = previous_backward;
  t_precision = previous_precision;
}

// ---------------------------------------------------------------------------

TapeScope::TapeScope(Tape& tape)
    : previous_tape_(t_current_tape), previous_precision_(t_precision), tape_(tape) {
  t_current_tape = &tape;
  t_precision = tape.precision();
  tape.active_ = true;
}

TapeScope::~TapeScope() {
  tape_.active_ = false;
  t_current_tape = previous_tape_;
  t_precision = previous_precision_;
}

PrecisionScope::PrecisionScope(Precision precision) : previous_(t_precision) { t_precision = precision; }
PrecisionScope::~PrecisionScope() { t_precision = previous_; }

Tape* current_tape() { return t_current_tape; }
Precision current_precision() { return t_precision; }

void apply_precision(std::span<double> values) {
  if (t_precision != Precision::f32) return;
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

double apply_precision(double value) {
  return t_precision == Precision::f32 ? static_cast<double>(static_cast<float>(value)) : value;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.impl()->tape || !loss.tape_id()) {
    throw UsageError("backward() on a tensor with no gradient tape");
  }
  loss.impl()->tape->backward(loss);
}

namespace detail {

double* grad_sink(const Tensor& t) {
  auto* impl = t.impl();
  const bool tracked = impl->requires_grad || (impl->tape != nullptr && impl->tape == t_backward_tape);
  if (!tracked) return nullptr;
  if (impl->grad.size() != impl->data.size()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad.data();
}

Tensor finish(std::string op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
              BackwardFn fn) {
  apply_precision(data);
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = t_current_tape;
  if (tape == nullptr) return out;
  const bool any_tracked = std::any_of(inputs.begin(), inputs.end(),
                                       [&](const Tensor& in) { return in.defined() && tape->tracks(in); });
  if (any_tracked) tape->record(std::move(op), inputs, out, std::move(fn));
  return out;
}

}  // namespace detail

}  // namespace ff
