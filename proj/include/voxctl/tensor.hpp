#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace voxctl {

using Shape = std::vector<int64_t>;

namespace detail {
struct TensorImpl;
struct TapeState;
struct Access;
}  // namespace detail

/// Dense row-major tensor of 64-bit floats. Instances are immutable after
/// creation; every op returns a fresh tensor. When a tape is active on the
/// current thread and any input of an op is gradient-tracked, the op is
/// recorded so the tape can replay it in reverse.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  int64_t size() const;
  /// Rank-2 accessors.
  int64_t rows() const;
  int64_t cols() const;
  std::span<const double> data() const;
  /// Value of a single-element tensor.
  double value() const;
  double at(int64_t i) const;
  double at(int64_t r, int64_t c) const;
  bool requires_grad() const;
  /// Unique id; gradient maps are keyed by it.
  int64_t id() const;

  /// Flags this tensor as a gradient-tracked leaf (a trainable parameter).
  Tensor& mark_parameter();

 private:
  friend struct detail::Access;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Gradients keyed by leaf tensor id.
using GradMap = std::unordered_map<int64_t, Tensor>;

/// Ordered record of ops (a Wengert list). One forward recording supports
/// exactly one backward pass; running backward twice is an error.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf whose gradient backward() must report, zeros included
  /// when the loss never touched it.
  void watch(const Tensor& leaf);

  /// Gradient of a scalar loss with respect to every watched leaf.
  /// Consumes the tape.
  GradMap backward(const Tensor& loss);

  std::size_t op_count() const;

 private:
  friend class TapeScope;
  friend struct detail::Access;
  std::unique_ptr<detail::TapeState> state_;
};

/// RAII activation of a tape on the current thread. Recording is
/// single-threaded by design; parallelism happens across independent tapes.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// ---------------------------------------------------------------- ops ----

/// a(m,k) x b(k,n), or a(m,k) x b(n,k)^T when transpose_b is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// Elementwise addition. Also accepts a rank-1 (or 1 x c) right operand
/// broadcast over the rows of a rank-2 left operand (bias add).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product, shapes must match.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double factor);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t length);
/// Rows of a rank-2 tensor selected by index, repeats allowed; gradients
/// scatter-add back.
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& indices);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// axis 0/1 reduce that axis of a rank-2 tensor (result keeps rank 2);
/// axis -1 reduces everything to a single element.
Tensor sum(const Tensor& a, int axis = -1);
Tensor mean(const Tensor& a, int axis = -1);
/// Softmax along the last axis restricted to positions where mask == 1.
/// The row max over unmasked entries is subtracted before exponentiation.
/// Masked positions are exactly zero in the output; a row whose mask is all
/// zero comes out all zero. Gradients do not flow into the mask.
Tensor masked_softmax(const Tensor& scores, const Tensor& mask);

/// Same values, detached from gradient tracking.
Tensor detach(const Tensor& a);
Tensor constant_like(const Tensor& a, double value);

/// All min(rows, cols) singular values in descending order, computed by
/// cyclic Jacobi iteration on the Gram matrix of the smaller side. Throws
/// if the iteration has not converged after 50 sweeps.
std::vector<double> singular_values(const Tensor& m);

}  // namespace voxctl
