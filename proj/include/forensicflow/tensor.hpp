#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// Values are held in double storage. Under Precision::f32 (the training mode)
// every op result, every propagated gradient and every optimizer update is
// rounded to binary32, so the arithmetic is that of a 32-bit engine. The f64
// reference mode skips the rounding and exists for finite-difference checks.
//
// A Tape is made current for the calling thread with a TapeScope. Ops record a
// node whenever the current tape is set and at least one input is tracked (a
// leaf with requires_grad, or an output of that same tape). Nodes are appended
// in execution order, so the node list is already topologically sorted and
// backward() is a single reverse sweep.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ff {

enum class Precision { f32, f64 };

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  bool retain_grad = false;
  Tape* tape = nullptr;
  std::optional<std::size_t> tape_id;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor of(Shape shape, std::initializer_list<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of axis `axis`; negative indices count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access. Reserved for parameter updates, gradient checks and
  /// tests; tensors produced on a tape must not be modified this way.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void clear_grad();
  /// Keep this intermediate's gradient after backward() instead of releasing it.
  void retain_grad();

  std::optional<std::size_t> tape_id() const;
  /// Copy of the values with no tape, no gradient and requires_grad off.
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Tape;
  friend struct TensorAccess;

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Receives the output gradient and the output values.
using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<const double> out)>;

class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<std::optional<std::size_t>> input_ids;  // nullopt for leaves and constants
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  explicit Tape(Precision precision = Precision::f32);
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Precision precision() const { return precision_; }
  bool active() const { return active_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }

  /// Reverse sweep from `loss` (a scalar recorded on this tape).
  void backward(const Tensor& loss);
  /// Drops every node and detaches their outputs from this tape.
  void clear();

  // Used by op implementations.
  bool tracks(const Tensor& t) const;
  void record(std::string op, const std::vector<Tensor>& inputs, Tensor& output, BackwardFn fn);

 private:
  friend class TapeScope;
  Precision precision_;
  bool active_ = false;
  std::vector<Node> nodes_;
};

/// Makes `tape` the calling thread's current tape for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_tape_;
  Precision previous_precision_;
  Tape& tape_;
};

/// Sets the arithmetic precision for tape-less evaluation (e.g. the perturbed
/// forwards of a finite-difference check).
class PrecisionScope {
 public:
  explicit PrecisionScope(Precision precision);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision previous_;
};

Tape* current_tape();
Precision current_precision();

/// Rounds to binary32 when the current precision is f32.
void apply_precision(std::span<double> values);
double apply_precision(double value);

/// Populates gradients of every tracked input of `loss`'s tape.
void backward(const Tensor& loss);

namespace detail {
/// Gradient buffer of `t` (zero-filled on first use) if `t` is tracked on the
/// current backward pass; nullptr otherwise.
double* grad_sink(const Tensor& t);

/// Wraps freshly computed values as an op result, applying precision and
/// recording `fn` on the current tape when any input is tracked.
Tensor finish(std::string op, Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
              BackwardFn fn);
}  // namespace detail

}  // namespace ff
