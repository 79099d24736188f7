#include "voxctl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace voxctl {
namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  int64_t id = 0;
  // tape that recorded the op producing this tensor, null for leaves
  const TapeState* origin = nullptr;
};

using GradStore = std::unordered_map<const TensorImpl*, std::vector<double>>;

struct TapeState {
  struct Entry {
    std::shared_ptr<TensorImpl> out;
    std::function<void(const std::vector<double>&, GradStore&)> back;
  };
  std::vector<Entry> entries;
  std::vector<std::shared_ptr<TensorImpl>> watched;
  bool consumed = false;
};

namespace {
std::atomic<int64_t> g_next_id{1};
thread_local Tape* g_active_tape = nullptr;
}  // namespace

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

inline std::vector<double>& grad_buf(GradStore& store, const TensorImpl* t) {
  auto& g = store[t];
  if (g.empty()) g.assign(t->values.size(), 0.0);
  return g;
}

struct Access {
  static std::shared_ptr<TensorImpl> impl(const Tensor& t) { return t.impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }
  static TapeState* state(Tape& t) { return t.state_.get(); }
};

}  // namespace detail

using detail::Access;
using detail::GradStore;
using detail::TensorImpl;

namespace {

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->id = detail::g_next_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string(op) + " produced a non-finite value");
    }
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

// Finishes an op: finite check, output construction and tape recording.
Tensor finish(const char* op, Shape shape, std::vector<double> values, bool track,
              std::function<void(const std::vector<double>&, GradStore&)> back) {
  check_finite(values, op);
  auto impl = make_impl(std::move(shape), std::move(values));
  if (track && detail::g_active_tape != nullptr) {
    auto* state = Access::state(*detail::g_active_tape);
    impl->requires_grad = true;
    impl->origin = state;
    state->entries.push_back({impl, std::move(back)});
  }
  return Access::wrap(impl);
}

bool tracked(const Tensor& t) {
  return detail::g_active_tape != nullptr && t.requires_grad();
}

}  // namespace

// ------------------------------------------------------------- Tensor ----

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: shape dims must be positive");
  }
  std::vector<double> v(static_cast<std::size_t>(detail::numel(shape)), value);
  check_finite(v, "Tensor::full");
  return Access::wrap(make_impl(std::move(shape), std::move(v)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: shape dims must be positive");
  }
  if (detail::numel(shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("Tensor: value count does not match shape " +
                                detail::shape_str(shape));
  }
  check_finite(values, "Tensor::from");
  return Access::wrap(make_impl(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return impl_->shape;
}

int64_t Tensor::size() const {
  require_defined(*this, "size");
  return static_cast<int64_t>(impl_->values.size());
}

int64_t Tensor::rows() const {
  if (shape().size() != 2) throw std::invalid_argument("rows: rank-2 tensor required");
  return impl_->shape[0];
}

int64_t Tensor::cols() const {
  if (shape().size() != 2) throw std::invalid_argument("cols: rank-2 tensor required");
  return impl_->shape[1];
}

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return {impl_->values.data(), impl_->values.size()};
}

double Tensor::value() const {
  require_defined(*this, "value");
  if (impl_->values.size() != 1) {
    throw std::invalid_argument("value: tensor has more than one element");
  }
  return impl_->values[0];
}

double Tensor::at(int64_t i) const {
  require_defined(*this, "at");
  if (i < 0 || i >= size()) throw std::out_of_range("at: index out of range");
  return impl_->values[static_cast<std::size_t>(i)];
}

double Tensor::at(int64_t r, int64_t c) const {
  if (shape().size() != 2) throw std::invalid_argument("at(r,c): rank-2 tensor required");
  if (r < 0 || r >= impl_->shape[0] || c < 0 || c >= impl_->shape[1]) {
    throw std::out_of_range("at(r,c): index out of range");
  }
  return impl_->values[static_cast<std::size_t>(r * impl_->shape[1] + c)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

int64_t Tensor::id() const {
  require_defined(*this, "id");
  return impl_->id;
}

Tensor& Tensor::mark_parameter() {
  require_defined(*this, "mark_parameter");
  impl_->requires_grad = true;
  return *this;
}

// --------------------------------------------------------------- Tape ----

Tape::Tape() : state_(std::make_unique<detail::TapeState>()) {}
Tape::~Tape() = default;

void Tape::watch(const Tensor& leaf) {
  require_defined(leaf, "Tape::watch");
  state_->watched.push_back(Access::impl(leaf));
}

std::size_t Tape::op_count() const { return state_->entries.size(); }

GradMap Tape::backward(const Tensor& loss) {
  require_defined(loss, "Tape::backward");
  if (state_->consumed) {
    throw std::runtime_error("Tape::backward: tape already consumed; re-record the forward pass");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("Tape::backward: loss must be a single-element tensor");
  }
  auto loss_impl = Access::impl(loss);
  if (loss_impl->origin != state_.get()) {
    throw std::runtime_error("Tape::backward: loss was not recorded on this tape");
  }
  state_->consumed = true;

  GradStore store;
  store[loss_impl.get()] = {1.0};
  for (auto it = state_->entries.rbegin(); it != state_->entries.rend(); ++it) {
    auto found = store.find(it->out.get());
    if (found == store.end()) continue;  // not on any path to the loss
    it->back(found->second, store);
  }

  GradMap grads;
  for (const auto& leaf : state_->watched) {
    auto found = store.find(leaf.get());
    std::vector<double> g = found != store.end() ? found->second
                                                 : std::vector<double>(leaf->values.size(), 0.0);
    grads[leaf->id] = Tensor::from(leaf->shape, std::move(g));
  }
  return grads;
}

TapeScope::TapeScope(Tape& tape) : previous_(detail::g_active_tape) {
  detail::g_active_tape = &tape;
}

TapeScope::~TapeScope() { detail::g_active_tape = previous_; }

// ----------------------------------------------------------------- ops ----

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw std::invalid_argument("matmul: rank-2 tensors required");
  }
  const int64_t m = a.rows(), k = a.cols();
  const int64_t bk = transpose_b ? b.cols() : b.rows();
  const int64_t n = transpose_b ? b.rows() : b.cols();
  if (k != bk) {
    throw std::invalid_argument("matmul: inner dims disagree, " + detail::shape_str(a.shape()) +
                                " x " + detail::shape_str(b.shape()) +
                                (transpose_b ? "^T" : ""));
  }
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  if (!transpose_b) {
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        if (aip == 0.0) continue;
        for (int64_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
      }
    }
  } else {
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int64_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
        out[i * n + j] = acc;
      }
    }
  }

  bool track = tracked(a) || tracked(b);
  auto ia = Access::impl(a);
  auto ib = Access::impl(b);
  return finish("matmul", {m, n}, std::move(out), track,
                [ia, ib, m, n, k, transpose_b](const std::vector<double>& g, GradStore& store) {
                  if (ia->requires_grad) {
                    auto& ga = detail::grad_buf(store, ia.get());
                    const auto& bv = ib->values;
                    if (!transpose_b) {
                      // dA = dC * B^T
                      for (int64_t i = 0; i < m; ++i)
                        for (int64_t p = 0; p < k; ++p) {
                          double acc = 0.0;
                          for (int64_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                          ga[i * k + p] += acc;
                        }
                    } else {
                      // C = A * B^T  =>  dA = dC * B
                      for (int64_t i = 0; i < m; ++i)
                        for (int64_t p = 0; p < k; ++p) {
                          double acc = 0.0;
                          for (int64_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[j * k + p];
                          ga[i * k + p] += acc;
                        }
                    }
                  }
                  if (ib->requires_grad) {
                    auto& gb = detail::grad_buf(store, ib.get());
                    const auto& av = ia->values;
                    if (!transpose_b) {
                      // dB = A^T * dC
                      for (int64_t p = 0; p < k; ++p)
                        for (int64_t j = 0; j < n; ++j) {
                          double acc = 0.0;
                          for (int64_t i = 0; i < m; ++i) acc += av[i * k + p] * g[i * n + j];
                          gb[p * n + j] += acc;
                        }
                    } else {
                      // dB = dC^T * A
                      for (int64_t j = 0; j < n; ++j)
                        for (int64_t p = 0; p < k; ++p) {
                          double acc = 0.0;
                          for (int64_t i = 0; i < m; ++i) acc += g[i * n + j] * av[i * k + p];
                          gb[j * k + p] += acc;
                        }
                    }
                  }
                });
}

namespace {

enum class AddMode { Same, RowBroadcast };

AddMode add_mode(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return AddMode::Same;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool bias = sa.size() == 2 && ((sb.size() == 1 && sb[0] == sa[1]) ||
                                 (sb.size() == 2 && sb[0] == 1 && sb[1] == sa[1]));
  if (!bias) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + detail::shape_str(sa) +
                                " vs " + detail::shape_str(sb));
  }
  return AddMode::RowBroadcast;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  AddMode mode = add_mode(a, b, "add");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  if (mode == AddMode::Same) {
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  } else {
    const int64_t r = a.rows(), c = a.cols();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) out[i * c + j] = av[i * c + j] + bv[j];
  }
  bool track = tracked(a) || tracked(b);
  auto ia = Access::impl(a);
  auto ib = Access::impl(b);
  return finish("add", a.shape(), std::move(out), track,
                [ia, ib, mode](const std::vector<double>& g, GradStore& store) {
                  if (ia->requires_grad) {
                    auto& ga = detail::grad_buf(store, ia.get());
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (ib->requires_grad) {
                    auto& gb = detail::grad_buf(store, ib.get());
                    if (mode == AddMode::Same) {
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    } else {
                      const std::size_t c = gb.size();
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
                    }
                  }
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("sub: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  bool track = tracked(a) || tracked(b);
  auto ia = Access::impl(a);
  auto ib = Access::impl(b);
  return finish("sub", a.shape(), std::move(out), track,
                [ia, ib](const std::vector<double>& g, GradStore& store) {
                  if (ia->requires_grad) {
                    auto& ga = detail::grad_buf(store, ia.get());
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (ib->requires_grad) {
                    auto& gb = detail::grad_buf(store, ib.get());
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  bool track = tracked(a) || tracked(b);
  auto ia = Access::impl(a);
  auto ib = Access::impl(b);
  return finish("mul", a.shape(), std::move(out), track,
                [ia, ib](const std::vector<double>& g, GradStore& store) {
                  if (ia->requires_grad) {
                    auto& ga = detail::grad_buf(store, ia.get());
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ib->values[i];
                  }
                  if (ib->requires_grad) {
                    auto& gb = detail::grad_buf(store, ib.get());
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ia->values[i];
                  }
                });
}

Tensor scalar_mul(const Tensor& a, double factor) {
  require_defined(a, "scalar_mul");
  if (!std::isfinite(factor)) throw std::invalid_argument("scalar_mul: non-finite factor");
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  auto ia = Access::impl(a);
  return finish("scalar_mul", a.shape(), std::move(out), tracked(a),
                [ia, factor](const std::vector<double>& g, GradStore& store) {
                  if (!ia->requires_grad) return;
                  auto& ga = detail::grad_buf(store, ia.get());
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const std::size_t rank = parts[0].shape().size();
  if (rank < 1 || rank > 2) throw std::invalid_argument("concat: rank-1 or rank-2 only");
  if (axis < 0 || axis >= static_cast<int>(rank)) {
    throw std::invalid_argument("concat: axis out of range");
  }
  for (const auto& p : parts) {
    if (p.shape().size() != rank) throw std::invalid_argument("concat: mixed ranks");
    for (std::size_t d = 0; d < rank; ++d) {
      if (static_cast<int>(d) != axis && p.shape()[d] != parts[0].shape()[d]) {
        throw std::invalid_argument("concat: dims disagree off the concat axis");
      }
    }
  }

  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) total += p.shape()[axis];
  out_shape[axis] = total;

  std::vector<double> out(static_cast<std::size_t>(detail::numel(out_shape)));
  std::vector<int64_t> offsets(parts.size());
  if (rank == 1 || axis == 0) {
    int64_t pos = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      offsets[i] = pos;
      const auto pv = parts[i].data();
      std::copy(pv.begin(), pv.end(), out.begin() + pos);
      pos += static_cast<int64_t>(pv.size());
    }
  } else {
    const int64_t r = out_shape[0], c = out_shape[1];
    int64_t col = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      offsets[i] = col;
      const int64_t pc = parts[i].shape()[1];
      const auto pv = parts[i].data();
      for (int64_t row = 0; row < r; ++row)
        for (int64_t j = 0; j < pc; ++j) out[row * c + col + j] = pv[row * pc + j];
      col += pc;
    }
  }

  bool track = false;
  std::vector<std::shared_ptr<TensorImpl>> impls;
  impls.reserve(parts.size());
  for (const auto& p : parts) {
    track = track || tracked(p);
    impls.push_back(Access::impl(p));
  }
  const int ax = rank == 1 ? 0 : axis;
  const int64_t out_cols = rank == 2 ? out_shape[1] : 0;
  return finish("concat", out_shape, std::move(out), track,
                [impls, offsets, ax, out_cols](const std::vector<double>& g, GradStore& store) {
                  for (std::size_t i = 0; i < impls.size(); ++i) {
                    if (!impls[i]->requires_grad) continue;
                    auto& gp = detail::grad_buf(store, impls[i].get());
                    if (ax == 0) {
                      const int64_t off = offsets[i];
                      for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += g[off + j];
                    } else {
                      const int64_t pc = impls[i]->shape[1];
                      const int64_t r = impls[i]->shape[0];
                      for (int64_t row = 0; row < r; ++row)
                        for (int64_t j = 0; j < pc; ++j)
                          gp[row * pc + j] += g[row * out_cols + offsets[i] + j];
                    }
                  }
                });
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t length) {
  require_defined(a, "slice");
  const std::size_t rank = a.shape().size();
  if (rank < 1 || rank > 2) throw std::invalid_argument("slice: rank-1 or rank-2 only");
  if (axis < 0 || axis >= static_cast<int>(rank)) throw std::invalid_argument("slice: bad axis");
  if (length <= 0 || start < 0 || start + length > a.shape()[axis]) {
    throw std::invalid_argument("slice: range out of bounds");
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  const auto av = a.data();
  std::vector<double> out(static_cast<std::size_t>(detail::numel(out_shape)));
  if (rank == 1 || axis == 0) {
    const int64_t row = rank == 2 ? a.shape()[1] : 1;
    std::copy(av.begin() + start * row, av.begin() + (start + length) * row, out.begin());
  } else {
    const int64_t r = a.shape()[0], c = a.shape()[1];
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < length; ++j) out[i * length + j] = av[i * c + start + j];
  }
  auto ia = Access::impl(a);
  const int ax = rank == 1 ? 0 : axis;
  return finish("slice", out_shape, std::move(out), tracked(a),
                [ia, ax, start, length](const std::vector<double>& g, GradStore& store) {
                  if (!ia->requires_grad) return;
                  auto& ga = detail::grad_buf(store, ia.get());
                  if (ax == 0) {
                    const int64_t row = ia->shape.size() == 2 ? ia->shape[1] : 1;
                    for (std::size_t j = 0; j < g.size(); ++j) ga[start * row + j] += g[j];
                  } else {
                    const int64_t r = ia->shape[0], c = ia->shape[1];
                    for (int64_t i = 0; i < r; ++i)
                      for (int64_t j = 0; j < length; ++j) ga[i * c + start + j] += g[i * length + j];
                  }
                });
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& indices) {
  require_defined(a, "gather_rows");
  if (a.shape().size() != 2) throw std::invalid_argument("gather_rows: rank-2 tensor required");
  if (indices.empty()) throw std::invalid_argument("gather_rows: empty index list");
  const int64_t r = a.rows(), c = a.cols();
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= r) throw std::out_of_range("gather_rows: row index out of range");
  }
  const auto av = a.data();
  std::vector<double> out(indices.size() * static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy(av.begin() + indices[i] * c, av.begin() + (indices[i] + 1) * c,
              out.begin() + static_cast<int64_t>(i) * c);
  }
  auto ia = Access::impl(a);
  return finish("gather_rows", {static_cast<int64_t>(indices.size()), c}, std::move(out),
                tracked(a), [ia, indices, c](const std::vector<double>& g, GradStore& store) {
                  if (!ia->requires_grad) return;
                  auto& ga = detail::grad_buf(store, ia.get());
                  for (std::size_t i = 0; i < indices.size(); ++i)
                    for (int64_t j = 0; j < c; ++j)
                      ga[indices[i] * c + j] += g[static_cast<int64_t>(i) * c + j];
                });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Bwd bwd_factory) {
  require_defined(a, name);
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  auto ia = Access::impl(a);
  return finish(name, a.shape(), std::move(out), tracked(a), bwd_factory(ia));
}

}  // namespace

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](std::shared_ptr<TensorImpl> ia) {
        return [ia](const std::vector<double>& g, GradStore& store) {
          if (!ia->requires_grad) return;
          auto& ga = detail::grad_buf(store, ia.get());
          for (std::size_t i = 0; i < g.size(); ++i)
            if (ia->values[i] > 0.0) ga[i] += g[i];
        };
      });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](std::shared_ptr<TensorImpl> ia) {
        return [ia](const std::vector<double>& g, GradStore& store) {
          if (!ia->requires_grad) return;
          auto& ga = detail::grad_buf(store, ia.get());
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = std::tanh(ia->values[i]);
            ga[i] += g[i] * (1.0 - y * y);
          }
        };
      });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](std::shared_ptr<TensorImpl> ia) {
        return [ia](const std::vector<double>& g, GradStore& store) {
          if (!ia->requires_grad) return;
          auto& ga = detail::grad_buf(store, ia.get());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * std::exp(ia->values[i]);
        };
      });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](std::shared_ptr<TensorImpl> ia) {
        return [ia](const std::vector<double>& g, GradStore& store) {
          if (!ia->requires_grad) return;
          auto& ga = detail::grad_buf(store, ia.get());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / ia->values[i];
        };
      });
}

namespace {

Tensor reduce(const char* name, const Tensor& a, int axis, bool take_mean) {
  require_defined(a, name);
  const std::size_t rank = a.shape().size();
  if (rank < 1 || rank > 2) throw std::invalid_argument(std::string(name) + ": rank-1 or rank-2 only");
  if (axis != -1 && (axis < 0 || axis >= static_cast<int>(rank))) {
    throw std::invalid_argument(std::string(name) + ": bad axis");
  }
  const auto av = a.data();

  Shape out_shape;
  std::vector<double> out;
  if (axis == -1 || rank == 1) {
    double acc = 0.0;
    for (double x : av) acc += x;
    if (take_mean) acc /= static_cast<double>(av.size());
    out_shape = {1};
    out = {acc};
  } else {
    const int64_t r = a.shape()[0], c = a.shape()[1];
    if (axis == 0) {
      out_shape = {1, c};
      out.assign(static_cast<std::size_t>(c), 0.0);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out[j] += av[i * c + j];
      if (take_mean)
        for (auto& x : out) x /= static_cast<double>(r);
    } else {
      out_shape = {r, 1};
      out.assign(static_cast<std::size_t>(r), 0.0);
      for (int64_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < c; ++j) acc += av[i * c + j];
        out[i] = take_mean ? acc / static_cast<double>(c) : acc;
      }
    }
  }

  auto ia = Access::impl(a);
  const int ax = (rank == 1) ? -1 : axis;
  return finish(name, out_shape, std::move(out), tracked(a),
                [ia, ax, take_mean](const std::vector<double>& g, GradStore& store) {
                  if (!ia->requires_grad) return;
                  auto& ga = detail::grad_buf(store, ia.get());
                  const std::size_t n = ga.size();
                  if (ax == -1) {
                    const double scale = take_mean ? 1.0 / static_cast<double>(n) : 1.0;
                    for (std::size_t i = 0; i < n; ++i) ga[i] += g[0] * scale;
                  } else {
                    const int64_t r = ia->shape[0], c = ia->shape[1];
                    if (ax == 0) {
                      const double scale = take_mean ? 1.0 / static_cast<double>(r) : 1.0;
                      for (int64_t i = 0; i < r; ++i)
                        for (int64_t j = 0; j < c; ++j) ga[i * c + j] += g[j] * scale;
                    } else {
                      const double scale = take_mean ? 1.0 / static_cast<double>(c) : 1.0;
                      for (int64_t i = 0; i < r; ++i)
                        for (int64_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * scale;
                    }
                  }
                });
}

}  // namespace

Tensor sum(const Tensor& a, int axis) { return reduce("sum", a, axis, false); }
Tensor mean(const Tensor& a, int axis) { return reduce("mean", a, axis, true); }

Tensor masked_softmax(const Tensor& scores, const Tensor& mask) {
  require_defined(scores, "masked_softmax");
  require_defined(mask, "masked_softmax");
  if (scores.shape() != mask.shape()) {
    throw std::invalid_argument("masked_softmax: score/mask shapes differ");
  }
  const std::size_t rank = scores.shape().size();
  if (rank < 1 || rank > 2) throw std::invalid_argument("masked_softmax: rank-1 or rank-2 only");
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("masked_softmax: mask entries must be 0 or 1");
  }

  const int64_t nrows = rank == 2 ? scores.shape()[0] : 1;
  const int64_t ncols = rank == 2 ? scores.shape()[1] : scores.shape()[0];
  const auto sv = scores.data();
  const auto mv = mask.data();
  std::vector<double> out(sv.size(), 0.0);
  for (int64_t i = 0; i < nrows; ++i) {
    const double* srow = sv.data() + i * ncols;
    const double* mrow = mv.data() + i * ncols;
    double* orow = out.data() + i * ncols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < ncols; ++j)
      if (mrow[j] == 1.0 && srow[j] > mx) mx = srow[j];
    if (!std::isfinite(mx)) continue;  // fully masked row stays zero
    double denom = 0.0;
    for (int64_t j = 0; j < ncols; ++j) {
      if (mrow[j] == 1.0) {
        orow[j] = std::exp(srow[j] - mx);
        denom += orow[j];
      }
    }
    for (int64_t j = 0; j < ncols; ++j) {
      if (mrow[j] == 1.0) orow[j] /= denom;
    }
  }

  auto is = Access::impl(scores);
  auto im = Access::impl(mask);
  auto iy = std::make_shared<std::vector<double>>(out);  // saved activations
  return finish("masked_softmax", scores.shape(), std::move(out), tracked(scores),
                [is, im, iy, nrows, ncols](const std::vector<double>& g, GradStore& store) {
                  if (!is->requires_grad) return;
                  auto& gs = detail::grad_buf(store, is.get());
                  const auto& y = *iy;
                  const auto& mrow = im->values;
                  for (int64_t i = 0; i < nrows; ++i) {
                    double dot = 0.0;
                    for (int64_t j = 0; j < ncols; ++j) dot += g[i * ncols + j] * y[i * ncols + j];
                    for (int64_t j = 0; j < ncols; ++j) {
                      if (mrow[i * ncols + j] == 1.0) {
                        gs[i * ncols + j] += y[i * ncols + j] * (g[i * ncols + j] - dot);
                      }
                    }
                  }
                });
}

Tensor detach(const Tensor& a) {
  require_defined(a, "detach");
  return Tensor::from(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
}

Tensor constant_like(const Tensor& a, double value) {
  require_defined(a, "constant_like");
  return Tensor::full(a.shape(), value);
}

// ------------------------------------------------------ singular values ----

std::vector<double> singular_values(const Tensor& m) {
  require_defined(m, "singular_values");
  if (m.shape().size() != 2) {
    throw std::invalid_argument("singular_values: rank-2 tensor required");
  }
  const int64_t r = m.rows(), c = m.cols();
  const int64_t k = std::min(r, c);
  const auto mv = m.data();

  // Gram matrix of the smaller side: its eigenvalues are squared singular
  // values and the problem stays k x k.
  std::vector<double> s(static_cast<std::size_t>(k * k), 0.0);
  if (r >= c) {
    for (int64_t i = 0; i < c; ++i)
      for (int64_t j = i; j < c; ++j) {
        double acc = 0.0;
        for (int64_t t = 0; t < r; ++t) acc += mv[t * c + i] * mv[t * c + j];
        s[i * k + j] = acc;
        s[j * k + i] = acc;
      }
  } else {
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = i; j < r; ++j) {
        double acc = 0.0;
        for (int64_t t = 0; t < c; ++t) acc += mv[i * c + t] * mv[j * c + t];
        s[i * k + j] = acc;
        s[j * k + i] = acc;
      }
  }

  double fro = 0.0;
  for (double x : s) fro += x * x;
  fro = std::sqrt(fro);
  const double tol = 1e-14 * std::max(1.0, fro);

  const int max_sweeps = 50;
  bool converged = false;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    double off = 0.0;
    for (int64_t p = 0; p < k; ++p)
      for (int64_t q = p + 1; q < k; ++q) off += s[p * k + q] * s[p * k + q];
    if (std::sqrt(off) <= tol) {
      converged = true;
      break;
    }
    for (int64_t p = 0; p < k; ++p) {
      for (int64_t q = p + 1; q < k; ++q) {
        const double apq = s[p * k + q];
        if (apq == 0.0) continue;
        const double app = s[p * k + p];
        const double aqq = s[q * k + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double t = sign / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cth = 1.0 / std::sqrt(t * t + 1.0);
        const double sth = t * cth;
        for (int64_t i = 0; i < k; ++i) {
          if (i == p || i == q) continue;
          const double aip = s[i * k + p];
          const double aiq = s[i * k + q];
          s[i * k + p] = s[p * k + i] = cth * aip - sth * aiq;
          s[i * k + q] = s[q * k + i] = sth * aip + cth * aiq;
        }
        s[p * k + p] = app - t * apq;
        s[q * k + q] = aqq + t * apq;
        s[p * k + q] = s[q * k + p] = 0.0;
      }
    }
  }
  if (!converged) {
    // final check: the sweep loop may have exited right at the budget
    double off = 0.0;
    for (int64_t p = 0; p < k; ++p)
      for (int64_t q = p + 1; q < k; ++q) off += s[p * k + q] * s[p * k + q];
    if (std::sqrt(off) > tol) {
      throw std::runtime_error("singular_values: Jacobi iteration did not converge in 50 sweeps");
    }
  }

  std::vector<double> sigma(static_cast<std::size_t>(k));
  for (int64_t i = 0; i < k; ++i) {
    // eigenvalues of a Gram matrix are non-negative up to roundoff
    sigma[i] = std::sqrt(std::max(0.0, s[i * k + i]));
  }
  std::sort(sigma.begin(), sigma.end(), std::greater<double>());
  return sigma;
}

}  // namespace voxctl
