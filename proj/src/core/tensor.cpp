#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace symdepth {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
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

std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (int64_t i = static_cast<int64_t>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (int64_t d : shape)
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
  if (numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> buf(static_cast<std::size_t>(numel(shape)), 0.0);
  return Tensor(std::move(shape), std::move(buf), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> buf(static_cast<std::size_t>(numel(shape)), value);
  return Tensor(std::move(shape), std::move(buf), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

static const detail::TensorImpl& deref(const std::shared_ptr<detail::TensorImpl>& p) {
  if (!p) throw ValueError("operation on an undefined tensor");
  return *p;
}

const Shape& Tensor::shape() const { return deref(impl_).shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(deref(impl_).data.size()); }

int64_t Tensor::dim(int64_t axis) const {
  const auto& s = shape();
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    throw ValueError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[static_cast<std::size_t>(axis)];
}

const std::vector<double>& Tensor::data() const { return deref(impl_).data; }

std::vector<double>& Tensor::mutable_data() {
  return const_cast<detail::TensorImpl&>(deref(impl_)).data;
}

double Tensor::value() const {
  if (size() != 1)
    throw ShapeError("value() requires a single-element tensor, got " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(const std::vector<int64_t>& index) const {
  const auto& s = shape();
  if (index.size() != s.size())
    throw ShapeError("index rank mismatch for " + shape_str(s));
  const auto strides = row_major_strides(s);
  int64_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= s[i])
      throw ValueError("index out of bounds at axis " + std::to_string(i));
    flat += index[i] * strides[i];
  }
  return data()[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return deref(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  const_cast<detail::TensorImpl&>(deref(impl_)).requires_grad = v;
  return *this;
}

bool Tensor::has_grad() const { return !deref(impl_).grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  const auto& impl = deref(impl_);
  if (impl.grad.empty())
    throw ValueError("tensor has no gradient; run Tape::backward first");
  return impl.grad;
}

void Tensor::zero_grad() {
  auto& impl = const_cast<detail::TensorImpl&>(deref(impl_));
  impl.grad.assign(impl.data.size(), 0.0);
}

Tensor Tensor::clone() const {
  return Tensor(shape(), data(), requires_grad());
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

namespace detail {
std::vector<double>& ensure_grad(TensorImpl& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}
}  // namespace detail

void Tape::backward(const Tensor& root) {
  if (root.size() != 1)
    throw ShapeError("backward root must be a single-element tensor, got " +
                     shape_str(root.shape()));
  // fresh gradient buffers for everything this tape touched
  std::unordered_set<detail::TensorImpl*> seen;
  auto reset = [&seen](const std::shared_ptr<detail::TensorImpl>& p) {
    if (p && seen.insert(p.get()).second) p->grad.assign(p->data.size(), 0.0);
  };
  for (const auto& node : nodes_) {
    reset(node.output);
    for (const auto& in : node.inputs) reset(in);
  }
  reset(root.impl());
  root.impl()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
    if (it->backward) it->backward();
}

void record_op(const char* name, const std::vector<Tensor>& inputs, Tensor& output,
               std::function<void()> backward) {
  bool tracked = false;
  for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  if (tracked) output.set_requires_grad(true);
  Tape* tape = Tape::active();
  if (!tape || !tracked) return;
  Tape::Node node;
  node.op = name;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(in.impl());
  node.output = output.impl();
  node.backward = std::move(backward);
  tape->push(std::move(node));
}

void check_finite(const char* op, const Tensor& t) {
  const auto& d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!std::isfinite(d[i]))
      throw NumericError(std::string(op) + " produced a non-finite value at flat index " +
                         std::to_string(i));
}

// ---------------------------------------------------------------------------
// broadcasting
// ---------------------------------------------------------------------------

namespace {

struct BroadcastPlan {
  Shape out_shape;
  // strides aligned to out rank; 0 where the input is broadcast
  std::vector<int64_t> a_stride, b_stride;
  std::vector<int64_t> out_stride;
};

BroadcastPlan make_plan(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan plan;
  plan.out_shape.resize(rank);
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " are not broadcastable");
    plan.out_shape[i] = std::max(pa[i], pb[i]);
  }
  auto sa = row_major_strides(pa);
  auto sb = row_major_strides(pb);
  plan.a_stride.resize(rank);
  plan.b_stride.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    plan.a_stride[i] = (pa[i] == 1 && plan.out_shape[i] != 1) ? 0 : sa[i];
    plan.b_stride[i] = (pb[i] == 1 && plan.out_shape[i] != 1) ? 0 : sb[i];
  }
  plan.out_stride = row_major_strides(plan.out_shape);
  return plan;
}

// calls f(out_flat, a_flat, b_flat) for every output element
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const int64_t n = numel(plan.out_shape);
  const std::size_t rank = plan.out_shape.size();
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t rem = flat, ai = 0, bi = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      const int64_t idx = rem / plan.out_stride[d];
      rem -= idx * plan.out_stride[d];
      ai += idx * plan.a_stride[d];
      bi += idx * plan.b_stride[d];
    }
    f(flat, ai, bi);
  }
}

using AccumFn = std::function<void(int64_t out_flat, int64_t a_flat, int64_t b_flat,
                                   double gout)>;

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 double (*fwd)(double, double), AccumFn&& backward_accum) {
  const BroadcastPlan plan = make_plan(name, a.shape(), b.shape());
  std::vector<double> out(static_cast<std::size_t>(numel(plan.out_shape)));
  const auto& da = a.data();
  const auto& db = b.data();
  for_each_broadcast(plan, [&](int64_t o, int64_t ai, int64_t bi) {
    out[static_cast<std::size_t>(o)] = fwd(da[static_cast<std::size_t>(ai)],
                                           db[static_cast<std::size_t>(bi)]);
  });
  Tensor result(plan.out_shape, std::move(out));
  check_finite(name, result);
  auto ia = a.impl();
  auto ib = b.impl();
  auto io = result.impl();
  record_op(name, {a, b}, result,
            [plan, ia, ib, io, accum = std::move(backward_accum)]() {
              const auto& gout = io->grad;
              for_each_broadcast(plan, [&](int64_t o, int64_t ai, int64_t bi) {
                accum(o, ai, bi, gout[static_cast<std::size_t>(o)]);
              });
            });
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  auto ia = a.impl();
  auto ib = b.impl();
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [ia, ib](int64_t, int64_t af, int64_t bf, double g) {
        if (ia->requires_grad) detail::ensure_grad(*ia)[static_cast<std::size_t>(af)] += g;
        if (ib->requires_grad) detail::ensure_grad(*ib)[static_cast<std::size_t>(bf)] += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto ia = a.impl();
  auto ib = b.impl();
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [ia, ib](int64_t, int64_t af, int64_t bf, double g) {
        if (ia->requires_grad) detail::ensure_grad(*ia)[static_cast<std::size_t>(af)] += g;
        if (ib->requires_grad) detail::ensure_grad(*ib)[static_cast<std::size_t>(bf)] -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto ia = a.impl();
  auto ib = b.impl();
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [ia, ib](int64_t, int64_t af, int64_t bf, double g) {
        if (ia->requires_grad)
          detail::ensure_grad(*ia)[static_cast<std::size_t>(af)] +=
              g * ib->data[static_cast<std::size_t>(bf)];
        if (ib->requires_grad)
          detail::ensure_grad(*ib)[static_cast<std::size_t>(bf)] +=
              g * ia->data[static_cast<std::size_t>(af)];
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto ia = a.impl();
  auto ib = b.impl();
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [ia, ib](int64_t, int64_t af, int64_t bf, double g) {
        const double y = ib->data[static_cast<std::size_t>(bf)];
        if (ia->requires_grad)
          detail::ensure_grad(*ia)[static_cast<std::size_t>(af)] += g / y;
        if (ib->requires_grad)
          detail::ensure_grad(*ib)[static_cast<std::size_t>(bf)] -=
              g * ia->data[static_cast<std::size_t>(af)] / (y * y);
      });
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

namespace {

Tensor unary_op(const char* name, const Tensor& x, double (*fwd)(double),
                double (*dfdx)(double x, double y)) {
  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = fwd(dx[i]);
  Tensor result(x.shape(), std::move(out));
  check_finite(name, result);
  auto ix = x.impl();
  auto io = result.impl();
  record_op(name, {x}, result, [ix, io, dfdx]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    const auto& gout = io->grad;
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += gout[i] * dfdx(ix->data[i], io->data[i]);
  });
  return result;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor neg(const Tensor& x) {
  return unary_op(
      "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x, [](double v) { return sigmoid_scalar(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  // x * Phi(x) with the exact normal CDF
  return unary_op(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor activation(const Tensor& x, Activation kind) {
  return kind == Activation::Gelu ? gelu(x) : sigmoid(x);
}

Tensor add_scalar(const Tensor& x, double c) {
  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = dx[i] + c;
  Tensor result(x.shape(), std::move(out));
  check_finite("add_scalar", result);
  auto ix = x.impl();
  auto io = result.impl();
  record_op("add_scalar", {x}, result, [ix, io]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += io->grad[i];
  });
  return result;
}

Tensor mul_scalar(const Tensor& x, double c) {
  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = dx[i] * c;
  Tensor result(x.shape(), std::move(out));
  check_finite("mul_scalar", result);
  auto ix = x.impl();
  auto io = result.impl();
  record_op("mul_scalar", {x}, result, [ix, io, c]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += io->grad[i] * c;
  });
  return result;
}

Tensor clamp_min(const Tensor& x, double floor) {
  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < dx.size(); ++i) out[i] = dx[i] < floor ? floor : dx[i];
  Tensor result(x.shape(), std::move(out));
  check_finite("clamp_min", result);
  auto ix = x.impl();
  auto io = result.impl();
  record_op("clamp_min", {x}, result, [ix, io, floor]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (ix->data[i] >= floor) gx[i] += io->grad[i];
  });
  return result;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace {

std::vector<int64_t> normalize_axes(const char* op, const std::vector<int64_t>& axes,
                                    int64_t rank) {
  std::vector<int64_t> out;
  out.reserve(axes.size());
  for (int64_t a : axes) {
    if (a < 0) a += rank;
    if (a < 0 || a >= rank)
      throw ValueError(std::string(op) + ": axis out of range for rank " +
                       std::to_string(rank));
    out.push_back(a);
  }
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end())
    throw ValueError(std::string(op) + ": duplicate axis");
  return out;
}

}  // namespace

Tensor sum(const Tensor& x, const std::vector<int64_t>& axes, bool keepdims) {
  const auto norm = normalize_axes("sum", axes, x.rank());
  const Shape& in_shape = x.shape();
  Shape kept = in_shape;
  for (int64_t a : norm) kept[static_cast<std::size_t>(a)] = 1;

  const auto in_strides = row_major_strides(in_shape);
  const auto kept_strides = row_major_strides(kept);
  std::vector<double> out(static_cast<std::size_t>(numel(kept)), 0.0);
  const auto& dx = x.data();
  const int64_t n = x.size();
  const std::size_t rank = in_shape.size();
  // map each input element to its reduced position
  std::vector<int64_t> out_index(static_cast<std::size_t>(n));
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t rem = flat, o = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      const int64_t idx = rem / in_strides[d];
      rem -= idx * in_strides[d];
      if (kept[d] != 1) o += idx * kept_strides[d];
    }
    out_index[static_cast<std::size_t>(flat)] = o;
    out[static_cast<std::size_t>(o)] += dx[static_cast<std::size_t>(flat)];
  }

  Shape out_shape;
  if (keepdims) {
    out_shape = kept;
  } else {
    for (std::size_t d = 0; d < rank; ++d)
      if (std::find(norm.begin(), norm.end(), static_cast<int64_t>(d)) == norm.end())
        out_shape.push_back(in_shape[d]);
  }
  Tensor result(out_shape, std::move(out));
  check_finite("sum", result);
  auto ix = x.impl();
  auto io = result.impl();
  record_op("sum", {x}, result, [ix, io, out_index = std::move(out_index)]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += io->grad[static_cast<std::size_t>(out_index[i])];
  });
  return result;
}

Tensor sum(const Tensor& x) {
  std::vector<int64_t> axes(static_cast<std::size_t>(x.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  Tensor s = sum(x, axes, false);
  return reshape(s, Shape{});
}

Tensor mean(const Tensor& x, const std::vector<int64_t>& axes, bool keepdims) {
  const auto norm = normalize_axes("mean", axes, x.rank());
  int64_t count = 1;
  for (int64_t a : norm) count *= x.shape()[static_cast<std::size_t>(a)];
  return mul_scalar(sum(x, axes, keepdims), 1.0 / static_cast<double>(count));
}

Tensor mean(const Tensor& x) {
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel(new_shape) != x.size())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape) + " (element count differs)");
  Tensor result(new_shape, x.data());
  auto ix = x.impl();
  auto io = result.impl();
  record_op("reshape", {x}, result, [ix, io]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += io->grad[i];
  });
  return result;
}

namespace {

// flat permutation map: out_flat -> in_flat
std::vector<int64_t> permute_map(const Shape& in_shape,
                                 const std::vector<int64_t>& perm, Shape& out_shape) {
  const std::size_t rank = in_shape.size();
  if (perm.size() != rank) throw ValueError("transpose: perm rank mismatch");
  std::vector<bool> used(rank, false);
  out_shape.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    const int64_t p = perm[d];
    if (p < 0 || p >= static_cast<int64_t>(rank) || used[static_cast<std::size_t>(p)])
      throw ValueError("transpose: invalid permutation");
    used[static_cast<std::size_t>(p)] = true;
    out_shape[d] = in_shape[static_cast<std::size_t>(p)];
  }
  const auto in_strides = row_major_strides(in_shape);
  const auto out_strides = row_major_strides(out_shape);
  const int64_t n = numel(in_shape);
  std::vector<int64_t> map(static_cast<std::size_t>(n));
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t rem = flat, src = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      const int64_t idx = rem / out_strides[d];
      rem -= idx * out_strides[d];
      src += idx * in_strides[static_cast<std::size_t>(perm[d])];
    }
    map[static_cast<std::size_t>(flat)] = src;
  }
  return map;
}

}  // namespace

Tensor transpose(const Tensor& x, const std::vector<int64_t>& perm) {
  Shape out_shape;
  const auto map = permute_map(x.shape(), perm, out_shape);
  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = dx[static_cast<std::size_t>(map[i])];
  Tensor result(out_shape, std::move(out));
  auto ix = x.impl();
  auto io = result.impl();
  record_op("transpose", {x}, result, [ix, io, map = std::move(map)]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    for (std::size_t i = 0; i < map.size(); ++i)
      gx[static_cast<std::size_t>(map[i])] += io->grad[i];
  });
  return result;
}

Tensor concat(const std::vector<Tensor>& xs, int64_t axis) {
  if (xs.empty()) throw ValueError("concat: no inputs");
  const int64_t rank = xs[0].rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ValueError("concat: axis out of range");
  Shape out_shape = xs[0].shape();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const Shape& s = xs[i].shape();
    if (static_cast<int64_t>(s.size()) != rank)
      throw ShapeError("concat: rank mismatch between inputs");
    for (int64_t d = 0; d < rank; ++d) {
      if (d == axis) continue;
      if (s[static_cast<std::size_t>(d)] != out_shape[static_cast<std::size_t>(d)])
        throw ShapeError("concat: shape mismatch at axis " + std::to_string(d) + ": " +
                         shape_str(xs[0].shape()) + " vs " + shape_str(s));
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }

  // outer x axis x inner layout
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
  for (int64_t d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<std::size_t>(d)];
  const int64_t out_axis = out_shape[static_cast<std::size_t>(axis)];

  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  int64_t offset = 0;
  for (const auto& x : xs) {
    const int64_t ax = x.dim(axis);
    const auto& dx = x.data();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t a = 0; a < ax; ++a)
        std::copy_n(dx.begin() + (o * ax + a) * inner, inner,
                    out.begin() + (o * out_axis + offset + a) * inner);
    offset += ax;
  }
  Tensor result(out_shape, std::move(out));
  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  for (const auto& x : xs) impls.push_back(x.impl());
  auto io = result.impl();
  record_op("concat", xs, result, [impls, io, outer, inner, out_axis, axis]() {
    int64_t offset = 0;
    for (const auto& ix : impls) {
      const int64_t ax = ix->shape[static_cast<std::size_t>(axis)];
      if (ix->requires_grad) {
        auto& gx = detail::ensure_grad(*ix);
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t a = 0; a < ax; ++a) {
            const double* src = io->grad.data() + (o * out_axis + offset + a) * inner;
            double* dst = gx.data() + (o * ax + a) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
      }
      offset += ax;
    }
  });
  return result;
}

Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t length) {
  const int64_t rank = x.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ValueError("slice: axis out of range");
  const int64_t ax = x.dim(axis);
  if (start < 0 || length <= 0 || start + length > ax)
    throw ValueError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") out of bounds for axis size " +
                     std::to_string(ax));
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int64_t d = axis + 1; d < rank; ++d) inner *= x.dim(d);
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  const auto& dx = x.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(dx.begin() + (o * ax + start) * inner, length * inner,
                out.begin() + o * length * inner);
  Tensor result(out_shape, std::move(out));
  auto ix = x.impl();
  auto io = result.impl();
  record_op("slice", {x}, result, [ix, io, outer, inner, ax, start, length]() {
    if (!ix->requires_grad) return;
    auto& gx = detail::ensure_grad(*ix);
    for (int64_t o = 0; o < outer; ++o) {
      const double* src = io->grad.data() + o * length * inner;
      double* dst = gx.data() + (o * ax + start) * inner;
      for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
    }
  });
  return result;
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& indices) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank 2");
  const int64_t rows = table.dim(0), cols = table.dim(1);
  for (int64_t idx : indices)
    if (idx < 0 || idx >= rows)
      throw ValueError("gather_rows: index " + std::to_string(idx) +
                       " out of range [0, " + std::to_string(rows) + ")");
  std::vector<double> out(indices.size() * static_cast<std::size_t>(cols));
  const auto& dt = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(dt.begin() + indices[i] * cols, cols, out.begin() + static_cast<int64_t>(i) * cols);
  Tensor result(Shape{static_cast<int64_t>(indices.size()), cols}, std::move(out));
  auto it = table.impl();
  auto io = result.impl();
  record_op("gather_rows", {table}, result, [it, io, indices, cols]() {
    if (!it->requires_grad) return;
    auto& gt = detail::ensure_grad(*it);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const double* src = io->grad.data() + static_cast<int64_t>(i) * cols;
      double* dst = gt.data() + indices[i] * cols;
      for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
  return result;
}

}  // namespace symdepth
