#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// Operations record onto the GradRecorder that is active on the calling
// thread (see RecordScope). Without an active recorder, or when no input
// requires a gradient, operations run eagerly and record nothing, which is
// the inference path.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace svi::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

/// Shared handle to a tensor. Copies alias the same storage, like a
/// framework tensor; use detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  // 2-D accessors; a 1-D tensor of length n reads as 1 x n.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered log of differentiable operations. backward() walks the log in
/// exact reverse order. Leaf gradients accumulate across backward calls
/// until zeroed; intermediate gradients are reset at the start of each call.
class GradRecorder {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  void record(const Tensor& out, std::vector<Tensor> inputs, BackwardFn fn);
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

  static GradRecorder* active();

 private:
  friend class RecordScope;
  struct Entry {
    std::shared_ptr<TensorImpl> out;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
};

/// Makes a recorder active on this thread for the lifetime of the scope.
class RecordScope {
 public:
  explicit RecordScope(GradRecorder& recorder);
  ~RecordScope();
  RecordScope(const RecordScope&) = delete;
  RecordScope& operator=(const RecordScope&) = delete;

 private:
  GradRecorder* previous_;
};

/// Runs backward on the active recorder.
void backward(const Tensor& loss);

/// Builds an op result and records `fn` when any input requires a gradient
/// and a recorder is active. `fn` receives the output gradient and must
/// accumulate into inputs through grad_sink().
Tensor record_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                 GradRecorder::BackwardFn fn);

/// Gradient buffer of `t` for accumulation, or an empty span when `t` does
/// not take gradients.
std::span<double> grad_sink(const Tensor& t);

// ---------------------------------------------------------------------------
// Elementwise operations

enum class OpKind {
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kSin,
  kCos,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kSilu,
  kRelu,
  kSquare,
  kSqrt,
};

bool is_binary(OpKind kind);

/// Binary kinds use trailing-dimension broadcasting; unary kinds ignore `b`.
Tensor elementwise(OpKind kind, const Tensor& a, const Tensor& b = Tensor());

Shape broadcast_shape(const Shape& a, const Shape& b);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(OpKind::kAdd, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(OpKind::kSub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(OpKind::kMul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(OpKind::kDiv, a, b); }
inline Tensor neg(const Tensor& a) { return elementwise(OpKind::kNeg, a); }
inline Tensor sin(const Tensor& a) { return elementwise(OpKind::kSin, a); }
inline Tensor cos(const Tensor& a) { return elementwise(OpKind::kCos, a); }
inline Tensor exp(const Tensor& a) { return elementwise(OpKind::kExp, a); }
inline Tensor log(const Tensor& a) { return elementwise(OpKind::kLog, a); }
inline Tensor tanh(const Tensor& a) { return elementwise(OpKind::kTanh, a); }
inline Tensor sigmoid(const Tensor& a) { return elementwise(OpKind::kSigmoid, a); }
inline Tensor silu(const Tensor& a) { return elementwise(OpKind::kSilu, a); }
inline Tensor relu(const Tensor& a) { return elementwise(OpKind::kRelu, a); }
inline Tensor square(const Tensor& a) { return elementwise(OpKind::kSquare, a); }
inline Tensor sqrt(const Tensor& a) { return elementwise(OpKind::kSqrt, a); }

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
/// Clamps values; the gradient passes only where the input is inside the range.
Tensor clamp(const Tensor& a, double lo, double hi);

// ---------------------------------------------------------------------------
// Linear algebra, reductions and reshaping (2-D unless stated)

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over rows of an m x n tensor, giving 1 x n.
Tensor sum_rows(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor select_cols(const Tensor& a, std::span<const std::size_t> columns);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);

// ---------------------------------------------------------------------------
// Feature transforms

/// Sinusoidal encoding with frequencies 2^k * pi, k = 0..width-1. The last
/// dimension grows by a factor 2*width; each scalar p expands in place to
/// (sin(pi p), cos(pi p), sin(2 pi p), cos(2 pi p), ...).
Tensor positional_encode(const Tensor& x, int width);

/// Raw kernel behind positional_encode; `out` must hold 2*width*x.size().
template <class Scalar>
void positional_encode(std::span<const Scalar> x, int width, std::span<Scalar> out);

struct MinMaxRecord {
  std::vector<double> min;
  std::vector<double> max;
};

/// Per-column affine map of an N x 3 point set to [0, 1]. A column whose
/// range is below 1e-9 maps to 0.5.
std::pair<Tensor, MinMaxRecord> minmax_normalize(const Tensor& points);
Tensor minmax_denormalize(const Tensor& normalized, const MinMaxRecord& record);

}  // namespace svi::ad
