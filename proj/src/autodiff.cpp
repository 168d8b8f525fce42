#include "svi/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "svi/errors.hpp"

namespace svi::ad {

namespace {

thread_local GradRecorder* g_active = nullptr;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " given " + std::to_string(values.size()) +
                     " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->data.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.size() == 2) return s[0];
  if (s.size() <= 1) return 1;
  throw ShapeError("rows(): tensor is " + shape_str(s));
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  if (s.empty()) return 1;
  throw ShapeError("cols(): tensor is " + shape_str(s));
}

std::span<const double> Tensor::values() const { return impl_->data; }
std::span<double> Tensor::mutable_values() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const { return impl_->data.at(i); }
double Tensor::at(std::size_t r, std::size_t c) const { return impl_->data.at(r * cols() + c); }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl_->requires_grad = flag; }
bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data, false); }

// ---------------------------------------------------------------------------
// Recorder

GradRecorder* GradRecorder::active() { return g_active; }

RecordScope::RecordScope(GradRecorder& recorder) : previous_(g_active) { g_active = &recorder; }
RecordScope::~RecordScope() { g_active = previous_; }

void GradRecorder::record(const Tensor& out, std::vector<Tensor> inputs, BackwardFn fn) {
  Entry e;
  e.out = out.impl();
  e.inputs.reserve(inputs.size());
  for (auto& t : inputs) e.inputs.push_back(t.impl());
  e.fn = std::move(fn);
  entries_.push_back(std::move(e));
}

void GradRecorder::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss");
  }
  for (auto& e : entries_) {
    e.out->grad.assign(e.out->data.size(), 0.0);
  }
  auto& root = *loss.impl();
  root.ensure_grad();
  if (root.is_leaf) {
    root.grad[0] += 1.0;
  } else {
    root.grad[0] = 1.0;
  }
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->fn(it->out->grad);
  }
}

void backward(const Tensor& loss) {
  GradRecorder* rec = GradRecorder::active();
  if (rec == nullptr) throw std::logic_error("backward(): no active GradRecorder");
  rec->backward(loss);
}

Tensor record_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                 GradRecorder::BackwardFn fn) {
  Tensor out(std::move(shape), std::move(values));
  GradRecorder* rec = GradRecorder::active();
  if (rec == nullptr) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  rec->record(out, std::move(inputs), std::move(fn));
  return out;
}

std::span<double> grad_sink(const Tensor& t) {
  if (!t.requires_grad()) return {};
  t.impl()->ensure_grad();
  return t.impl()->grad;
}

// ---------------------------------------------------------------------------
// Elementwise

bool is_binary(OpKind kind) {
  return kind == OpKind::kAdd || kind == OpKind::kSub || kind == OpKind::kMul || kind == OpKind::kDiv;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const std::size_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Flat source index for every output element of a broadcast.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(n);
  const std::size_t rank = out.size();
  const std::size_t offset = rank - src.size();
  std::vector<std::size_t> src_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = rank; i-- > offset;) {
    const std::size_t d = src[i - offset];
    src_stride[i] = d == 1 ? 0 : stride;
    stride *= d;
  }
  std::vector<std::size_t> counter(rank, 0);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    idx[k] = pos;
    for (std::size_t i = rank; i-- > 0;) {
      ++counter[i];
      pos += src_stride[i];
      if (counter[i] < out[i]) break;
      pos -= src_stride[i] * counter[i];
      counter[i] = 0;
    }
  }
  return idx;
}

Tensor unary(OpKind kind, const Tensor& a) {
  const auto x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    switch (kind) {
      case OpKind::kNeg: y[i] = -v; break;
      case OpKind::kSin: y[i] = std::sin(v); break;
      case OpKind::kCos: y[i] = std::cos(v); break;
      case OpKind::kExp: y[i] = std::exp(v); break;
      case OpKind::kLog:
        if (v < 0) throw DomainError("log of negative value");
        y[i] = std::log(v);
        break;
      case OpKind::kTanh: y[i] = std::tanh(v); break;
      case OpKind::kSigmoid: y[i] = sigmoid_scalar(v); break;
      case OpKind::kSilu: y[i] = v * sigmoid_scalar(v); break;
      case OpKind::kRelu: y[i] = v > 0 ? v : 0.0; break;
      case OpKind::kSquare: y[i] = v * v; break;
      case OpKind::kSqrt:
        if (v < 0) throw DomainError("sqrt of negative value");
        y[i] = std::sqrt(v);
        break;
      default: throw std::logic_error("unary(): binary op kind");
    }
  }
  std::vector<double> out_copy = y;
  return record_op(a.shape(), std::move(y), {a}, [kind, a, out = std::move(out_copy)](std::span<const double> g) {
    auto ga = grad_sink(a);
    if (ga.empty()) return;
    const auto x = a.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x[i];
      double d = 0.0;
      switch (kind) {
        case OpKind::kNeg: d = -1.0; break;
        case OpKind::kSin: d = std::cos(v); break;
        case OpKind::kCos: d = -std::sin(v); break;
        case OpKind::kExp: d = out[i]; break;
        case OpKind::kLog: d = 1.0 / v; break;
        case OpKind::kTanh: d = 1.0 - out[i] * out[i]; break;
        case OpKind::kSigmoid: d = out[i] * (1.0 - out[i]); break;
        case OpKind::kSilu: {
          const double s = sigmoid_scalar(v);
          d = s * (1.0 + v * (1.0 - s));
          break;
        }
        case OpKind::kRelu: d = v > 0 ? 1.0 : 0.0; break;
        case OpKind::kSquare: d = 2.0 * v; break;
        case OpKind::kSqrt: d = 0.5 / out[i]; break;
        default: break;
      }
      ga[i] += g[i] * d;
    }
  });
}

double apply_binary(OpKind kind, double x, double y) {
  switch (kind) {
    case OpKind::kAdd: return x + y;
    case OpKind::kSub: return x - y;
    case OpKind::kMul: return x * y;
    case OpKind::kDiv: return x / y;
    default: throw std::logic_error("binary op kind expected");
  }
}

Tensor binary(OpKind kind, const Tensor& a, const Tensor& b) {
  if (!b.defined()) throw ShapeError("binary elementwise op needs two operands");
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  const auto x = a.values();
  const auto z = b.values();
  std::vector<double> y(n);
  const bool same = a.shape() == b.shape();
  std::vector<std::size_t> ia, ib;
  if (same) {
    for (std::size_t i = 0; i < n; ++i) y[i] = apply_binary(kind, x[i], z[i]);
  } else {
    ia = a.shape() == out_shape ? std::vector<std::size_t>{} : broadcast_index(a.shape(), out_shape);
    ib = b.shape() == out_shape ? std::vector<std::size_t>{} : broadcast_index(b.shape(), out_shape);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pa = ia.empty() ? i : ia[i];
      const std::size_t pb = ib.empty() ? i : ib[i];
      y[i] = apply_binary(kind, x[pa], z[pb]);
    }
  }
  return record_op(std::move(out_shape), std::move(y), {a, b},
                   [kind, a, b, ia = std::move(ia), ib = std::move(ib)](std::span<const double> g) {
                     auto ga = grad_sink(a);
                     auto gb = grad_sink(b);
                     const auto x = a.values();
                     const auto z = b.values();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const std::size_t pa = ia.empty() ? i : ia[i];
                       const std::size_t pb = ib.empty() ? i : ib[i];
                       switch (kind) {
                         case OpKind::kAdd:
                           if (!ga.empty()) ga[pa] += g[i];
                           if (!gb.empty()) gb[pb] += g[i];
                           break;
                         case OpKind::kSub:
                           if (!ga.empty()) ga[pa] += g[i];
                           if (!gb.empty()) gb[pb] -= g[i];
                           break;
                         case OpKind::kMul:
                           if (!ga.empty()) ga[pa] += g[i] * z[pb];
                           if (!gb.empty()) gb[pb] += g[i] * x[pa];
                           break;
                         case OpKind::kDiv:
                           if (!ga.empty()) ga[pa] += g[i] / z[pb];
                           if (!gb.empty()) gb[pb] -= g[i] * x[pa] / (z[pb] * z[pb]);
                           break;
                         default: break;
                       }
                     }
                   });
}

}  // namespace

Tensor elementwise(OpKind kind, const Tensor& a, const Tensor& b) {
  return is_binary(kind) ? binary(kind, a, b) : unary(kind, a);
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> y(a.values().begin(), a.values().end());
  for (auto& v : y) v *= factor;
  return record_op(a.shape(), std::move(y), {a}, [a, factor](std::span<const double> g) {
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * g[i];
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> y(a.values().begin(), a.values().end());
  for (auto& v : y) v += value;
  return record_op(a.shape(), std::move(y), {a}, [a](std::span<const double> g) {
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  std::vector<double> y(a.values().begin(), a.values().end());
  for (auto& v : y) v = std::clamp(v, lo, hi);
  return record_op(a.shape(), std::move(y), {a}, [a, lo, hi](std::span<const double> g) {
    auto ga = grad_sink(a);
    const auto x = a.values();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra and reshaping

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  std::vector<double> y(m * n);
  MutMap(y.data(), m, n).noalias() = ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return record_op({m, n}, std::move(y), {a, b}, [a, b, m, k, n](std::span<const double> g) {
    ConstMap gm(g.data(), m, n);
    if (auto ga = grad_sink(a); !ga.empty()) {
      MutMap(ga.data(), m, k).noalias() += gm * ConstMap(b.values().data(), k, n).transpose();
    }
    if (auto gb = grad_sink(b); !gb.empty()) {
      MutMap(gb.data(), k, n).noalias() += ConstMap(a.values().data(), m, k).transpose() * gm;
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return record_op({}, {s}, {a}, [a](std::span<const double> g) {
    auto ga = grad_sink(a);
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean() of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_rows(const Tensor& a) {
  require_2d(a, "sum_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> y(n, 0.0);
  const auto x = a.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[c] += x[r * n + c];
  return record_op({1, n}, std::move(y), {a}, [a, m, n](std::span<const double> g) {
    auto ga = grad_sink(a);
    if (ga.empty()) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[c];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> y(a.values().begin(), a.values().end());
  return record_op(std::move(shape), std::move(y), {a}, [a](std::span<const double> g) {
    auto ga = grad_sink(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_rows");
  const std::size_t n = a.cols();
  if (begin > end || end > a.rows()) throw ShapeError("slice_rows out of range");
  const auto x = a.values();
  std::vector<double> y(x.begin() + static_cast<std::ptrdiff_t>(begin * n),
                        x.begin() + static_cast<std::ptrdiff_t>(end * n));
  return record_op({end - begin, n}, std::move(y), {a}, [a, begin, n](std::span<const double> g) {
    auto ga = grad_sink(a);
    if (ga.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw ShapeError("slice_cols out of range");
  std::vector<std::size_t> cols(end - begin);
  std::iota(cols.begin(), cols.end(), begin);
  return select_cols(a, cols);
}

Tensor select_cols(const Tensor& a, std::span<const std::size_t> columns) {
  require_2d(a, "select_cols");
  const std::size_t m = a.rows(), n = a.cols(), k = columns.size();
  for (auto c : columns)
    if (c >= n) throw ShapeError("select_cols index out of range");
  const auto x = a.values();
  std::vector<double> y(m * k);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < k; ++j) y[r * k + j] = x[r * n + columns[j]];
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  return record_op({m, k}, std::move(y), {a}, [a, m, n, k, cols = std::move(cols)](std::span<const double> g) {
    auto ga = grad_sink(a);
    if (ga.empty()) return;
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < k; ++j) ga[r * n + cols[j]] += g[r * k + j];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols row mismatch");
    total += p.cols();
  }
  std::vector<double> y(m * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t k = p.cols();
    const auto x = p.values();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * k), k,
                  y.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    offset += k;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record_op({m, total}, std::move(y), inputs, [inputs, m, total](std::span<const double> g) {
    std::size_t off = 0;
    for (const auto& p : inputs) {
      const std::size_t k = p.cols();
      auto gp = grad_sink(p);
      if (!gp.empty()) {
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < k; ++c) gp[r * k + c] += g[r * total + off + c];
      }
      off += k;
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  std::vector<double> y;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != n) throw ShapeError("concat_rows column mismatch");
    total += p.rows();
    y.insert(y.end(), p.values().begin(), p.values().end());
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record_op({total, n}, std::move(y), inputs, [inputs](std::span<const double> g) {
    std::size_t off = 0;
    for (const auto& p : inputs) {
      auto gp = grad_sink(p);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
      off += p.numel();
    }
  });
}

// ---------------------------------------------------------------------------
// Feature transforms

template <class Scalar>
void positional_encode(std::span<const Scalar> x, int width, std::span<Scalar> out) {
  if (width < 1) throw ConfigError("positional encoding width must be >= 1");
  const std::size_t w = static_cast<std::size_t>(width);
  if (out.size() != 2 * w * x.size()) throw ShapeError("positional_encode output size");
  for (std::size_t i = 0; i < x.size(); ++i) {
    double freq = std::numbers::pi;
    for (std::size_t k = 0; k < w; ++k) {
      const double arg = freq * static_cast<double>(x[i]);
      out[i * 2 * w + 2 * k] = static_cast<Scalar>(std::sin(arg));
      out[i * 2 * w + 2 * k + 1] = static_cast<Scalar>(std::cos(arg));
      freq *= 2.0;
    }
  }
}

template void positional_encode<double>(std::span<const double>, int, std::span<double>);
template void positional_encode<float>(std::span<const float>, int, std::span<float>);

Tensor positional_encode(const Tensor& x, int width) {
  if (width < 1) throw ConfigError("positional encoding width must be >= 1");
  Shape shape = x.shape();
  if (shape.empty()) shape = {1};
  shape.back() *= 2 * static_cast<std::size_t>(width);
  std::vector<double> y(x.numel() * 2 * static_cast<std::size_t>(width));
  positional_encode<double>(x.values(), width, y);
  return record_op(std::move(shape), std::move(y), {x}, [x, width](std::span<const double> g) {
    auto gx = grad_sink(x);
    if (gx.empty()) return;
    const auto v = x.values();
    const std::size_t w = static_cast<std::size_t>(width);
    for (std::size_t i = 0; i < v.size(); ++i) {
      double freq = std::numbers::pi;
      for (std::size_t k = 0; k < w; ++k) {
        const double arg = freq * v[i];
        gx[i] += g[i * 2 * w + 2 * k] * freq * std::cos(arg) - g[i * 2 * w + 2 * k + 1] * freq * std::sin(arg);
        freq *= 2.0;
      }
    }
  });
}

std::pair<Tensor, MinMaxRecord> minmax_normalize(const Tensor& points) {
  require_2d(points, "minmax_normalize");
  const std::size_t n = points.rows(), d = points.cols();
  if (n == 0) throw ShapeError("minmax_normalize needs at least one point");
  MinMaxRecord rec;
  rec.min.assign(d, 0.0);
  rec.max.assign(d, 0.0);
  const auto x = points.values();
  for (std::size_t c = 0; c < d; ++c) {
    double lo = x[c], hi = x[c];
    for (std::size_t r = 1; r < n; ++r) {
      lo = std::min(lo, x[r * d + c]);
      hi = std::max(hi, x[r * d + c]);
    }
    rec.min[c] = lo;
    rec.max[c] = hi;
  }
  std::vector<double> y(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double range = rec.max[c] - rec.min[c];
      y[r * d + c] = range < 1e-9 ? 0.5 : (x[r * d + c] - rec.min[c]) / range;
    }
  }
  return {Tensor({n, d}, std::move(y)), std::move(rec)};
}

Tensor minmax_denormalize(const Tensor& normalized, const MinMaxRecord& record) {
  require_2d(normalized, "minmax_denormalize");
  const std::size_t n = normalized.rows(), d = normalized.cols();
  if (record.min.size() != d) throw ShapeError("minmax record dimension mismatch");
  const auto x = normalized.values();
  std::vector<double> y(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double range = record.max[c] - record.min[c];
      y[r * d + c] = range < 1e-9 ? record.min[c] : record.min[c] + x[r * d + c] * range;
    }
  }
  return Tensor({n, d}, std::move(y));
}

}  // namespace svi::ad
