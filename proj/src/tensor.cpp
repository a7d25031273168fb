#include "stylelab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "stylelab/kernels.hpp"

namespace stylelab {

namespace {

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

template <typename T>
T* ptr(TensorImpl* t) {
  return reinterpret_cast<T*>(t->data.data());
}
template <typename T>
const T* ptr(const TensorImpl* t) {
  return reinterpret_cast<const T*>(t->data.data());
}

// Calls f with a value of the buffer's element type; the single place dtype
// branching happens.
template <typename F>
void dispatch(Dtype dt, F&& f) {
  if (dt == Dtype::F32) {
    f(float{});
  } else {
    f(double{});
  }
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined())
    throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw std::invalid_argument(std::string(op) + ": dtype mismatch " +
                                dtype_name(a.dtype()) + " vs " +
                                dtype_name(b.dtype()));
}

using VjpFn = std::function<std::vector<Tensor>(const Tensor&)>;

thread_local Tape* g_active_tape = nullptr;

// Suspends recording while gradient closures run during the reverse pass.
struct TapePause {
  Tape* saved;
  TapePause() : saved(g_active_tape) { g_active_tape = nullptr; }
  ~TapePause() { g_active_tape = saved; }
};

// Marks the output differentiable and records the node when a tape is active
// and any input participates in differentiation.
Tensor finish(const char* op, const std::vector<Tensor>& inputs, Tensor out,
              VjpFn vjp) {
  bool any = false;
  for (const Tensor& t : inputs)
    if (t.defined() && t.requires_grad()) any = true;
  if (!any) return out;
  out.set_requires_grad(true);
  if (g_active_tape != nullptr) {
    Tape::Node n;
    n.op = op;
    for (const Tensor& t : inputs) n.inputs.push_back(t.impl_ptr());
    n.output_raw = out.impl();
    n.output = out.impl_ptr();
    n.vjp = std::move(vjp);
    g_active_tape->record(std::move(n));
  }
  return out;
}

template <typename T, typename Op>
void ew_binary(const TensorImpl* a, const TensorImpl* b, TensorImpl* y,
               Op op) {
  const T* pa = ptr<T>(a);
  const T* pb = ptr<T>(b);
  T* py = ptr<T>(y);
  const int64_t n = numel_of(y->shape);
  for (int64_t i = 0; i < n; ++i) py[i] = op(pa[i], pb[i]);
}

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b,
                 auto fwd_op, VjpFn vjp) {
  check_defined(a, name);
  check_defined(b, name);
  check_same_shape(a, b, name);
  check_same_dtype(a, b, name);
  Tensor y = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    ew_binary<T>(a.impl(), b.impl(), y.impl(), fwd_op);
  });
  return finish(name, {a, b}, std::move(y), std::move(vjp));
}

// Fills a tensor shaped like `like` with grad_scalar / divisor.
Tensor spread_scalar(const Tensor& like, const Tensor& g, double divisor) {
  Tensor out = Tensor::zeros(like.shape(), like.dtype());
  const double v = g.item() / divisor;
  dispatch(like.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* p = ptr<T>(out.impl());
    const int64_t n = out.numel();
    const T tv = static_cast<T>(v);
    for (int64_t i = 0; i < n; ++i) p[i] = tv;
  });
  return out;
}

}  // namespace

// ----------------------------------------------------------------- basics

std::size_t dtype_size(Dtype dt) {
  return dt == Dtype::F32 ? sizeof(float) : sizeof(double);
}

const char* dtype_name(Dtype dt) {
  return dt == Dtype::F32 ? "float32" : "float64";
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(std::vector<int64_t> shape, Dtype dt,
                     bool requires_grad) {
  for (int64_t d : shape)
    if (d < 0)
      throw std::invalid_argument("Tensor: negative extent in shape " +
                                  shape_to_string(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->dtype = dt;
  impl->data.assign(static_cast<std::size_t>(numel_of(shape)) * dtype_size(dt),
                    std::byte{0});
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, Dtype dt) {
  Tensor t = zeros(std::move(shape), dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    T* p = ptr<T>(t.impl());
    const int64_t n = t.numel();
    const T tv = static_cast<T>(value);
    for (int64_t i = 0; i < n; ++i) p[i] = tv;
  });
  return t;
}

Tensor Tensor::scalar(double value, Dtype dt) { return full({}, value, dt); }

Tensor Tensor::of(std::vector<int64_t> shape, std::vector<double> values,
                  Dtype dt) {
  Tensor t = zeros(std::move(shape), dt);
  if (static_cast<int64_t>(values.size()) != t.numel())
    throw std::invalid_argument(
        "Tensor::of: " + std::to_string(values.size()) + " values for shape " +
        t.shape_str());
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, values[static_cast<std::size_t>(i)]);
  return t;
}

const std::vector<int64_t>& Tensor::shape() const {
  check_defined(*this, "shape");
  return impl_->shape;
}

int64_t Tensor::ndim() const { return static_cast<int64_t>(shape().size()); }

int64_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size())
    throw std::out_of_range("Tensor::dim: axis " + std::to_string(i) +
                            " for shape " + shape_str());
  return s[i];
}

int64_t Tensor::numel() const { return numel_of(shape()); }

Dtype Tensor::dtype() const {
  check_defined(*this, "dtype");
  return impl_->dtype;
}

std::span<float> Tensor::f32() {
  if (dtype() != Dtype::F32)
    throw std::logic_error("Tensor::f32 on a float64 tensor");
  return {ptr<float>(impl_.get()), static_cast<std::size_t>(numel())};
}
std::span<const float> Tensor::f32() const {
  if (dtype() != Dtype::F32)
    throw std::logic_error("Tensor::f32 on a float64 tensor");
  return {ptr<float>(impl_.get()), static_cast<std::size_t>(numel())};
}
std::span<double> Tensor::f64() {
  if (dtype() != Dtype::F64)
    throw std::logic_error("Tensor::f64 on a float32 tensor");
  return {ptr<double>(impl_.get()), static_cast<std::size_t>(numel())};
}
std::span<const double> Tensor::f64() const {
  if (dtype() != Dtype::F64)
    throw std::logic_error("Tensor::f64 on a float32 tensor");
  return {ptr<double>(impl_.get()), static_cast<std::size_t>(numel())};
}

const std::byte* Tensor::raw() const {
  check_defined(*this, "raw");
  return impl_->data.data();
}

std::size_t Tensor::nbytes() const {
  check_defined(*this, "nbytes");
  return impl_->data.size();
}

double Tensor::at(int64_t i) const {
  if (i < 0 || i >= numel())
    throw std::out_of_range("Tensor::at: index " + std::to_string(i) +
                            " for " + std::to_string(numel()) + " elements");
  double v = 0;
  dispatch(dtype(), [&](auto tag) {
    using T = decltype(tag);
    v = static_cast<double>(ptr<T>(impl_.get())[i]);
  });
  return v;
}

void Tensor::set(int64_t i, double v) {
  if (i < 0 || i >= numel())
    throw std::out_of_range("Tensor::set: index " + std::to_string(i) +
                            " for " + std::to_string(numel()) + " elements");
  dispatch(dtype(), [&](auto tag) {
    using T = decltype(tag);
    ptr<T>(impl_.get())[i] = static_cast<T>(v);
  });
}

double Tensor::item() const {
  if (numel() != 1)
    throw std::logic_error("Tensor::item on shape " + shape_str());
  return at(0);
}

bool Tensor::requires_grad() const {
  return defined() && impl_->requires_grad;
}

Tensor& Tensor::set_requires_grad(bool rg) {
  check_defined(*this, "set_requires_grad");
  impl_->requires_grad = rg;
  return *this;
}

Tensor Tensor::grad() const {
  check_defined(*this, "grad");
  return impl_->grad ? Tensor(impl_->grad) : Tensor();
}

void Tensor::zero_grad() {
  check_defined(*this, "zero_grad");
  if (impl_->grad)
    std::fill(impl_->grad->data.begin(), impl_->grad->data.end(),
              std::byte{0});
}

void Tensor::accumulate_grad(const Tensor& g) {
  check_defined(*this, "accumulate_grad");
  check_defined(g, "accumulate_grad");
  if (g.shape() != impl_->shape || g.dtype() != impl_->dtype)
    throw std::invalid_argument("accumulate_grad: gradient " + g.shape_str() +
                                "/" + dtype_name(g.dtype()) +
                                " does not match tensor " + shape_str() + "/" +
                                dtype_name(dtype()));
  if (!impl_->grad) {
    auto gi = std::make_shared<TensorImpl>();
    gi->shape = impl_->shape;
    gi->dtype = impl_->dtype;
    gi->data.assign(impl_->data.size(), std::byte{0});
    impl_->grad = std::move(gi);
  }
  dispatch(dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* dst = ptr<T>(impl_->grad.get());
    const T* src = ptr<T>(g.impl());
    const int64_t n = numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  });
}

Tensor Tensor::clone() const {
  check_defined(*this, "clone");
  Tensor t = zeros(impl_->shape, impl_->dtype);
  std::memcpy(t.impl_->data.data(), impl_->data.data(), impl_->data.size());
  return t;
}

Tensor Tensor::astype(Dtype dt) const {
  check_defined(*this, "astype");
  if (dt == dtype()) return clone();
  Tensor t = zeros(impl_->shape, dt);
  for (int64_t i = 0; i < numel(); ++i) t.set(i, at(i));
  return t;
}

Tensor Tensor::detach() const {
  check_defined(*this, "detach");
  auto impl = std::make_shared<TensorImpl>(*impl_);
  impl->requires_grad = false;
  impl->grad.reset();
  return Tensor(std::move(impl));
}

bool Tensor::same_shape(const Tensor& other) const {
  return shape() == other.shape();
}

std::string Tensor::shape_str() const { return shape_to_string(shape()); }

bool all_finite(const Tensor& t) {
  bool ok = true;
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* p = ptr<T>(t.impl());
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i)
      if (!std::isfinite(static_cast<double>(p[i]))) {
        ok = false;
        return;
      }
  });
  return ok;
}

// ------------------------------------------------------------------- tape

void Tape::record(Node n) {
  produced_.insert(n.output_raw);
  nodes_.push_back(std::move(n));
}

bool Tape::produced(const TensorImpl* t) const { return produced_.count(t) > 0; }

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope() : prev_(g_active_tape) { g_active_tape = &tape_; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

void backward(const Tensor& root) {
  check_defined(root, "backward");
  Tape* tape = g_active_tape;
  if (tape == nullptr)
    throw std::logic_error("backward: no active tape on this thread");
  if (root.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                root.shape_str());
  if (!tape->produced(root.impl()))
    throw std::invalid_argument(
        "backward: root was not produced on the active tape");

  std::unordered_map<TensorImpl*, Tensor> local;
  local.emplace(root.impl(), Tensor::full(root.shape(), 1.0, root.dtype()));

  TapePause pause;  // gradient closures must not re-record
  for (std::size_t idx = tape->nodes_.size(); idx-- > 0;) {
    Tape::Node& n = tape->nodes_[idx];
    auto it = local.find(n.output_raw);
    if (it == local.end()) continue;
    if (n.output.expired()) continue;
    std::vector<Tensor> gins = n.vjp(it->second);
    if (gins.size() != n.inputs.size())
      throw std::logic_error(std::string("backward: ") + n.op +
                             " returned wrong gradient count");
    for (std::size_t j = 0; j < n.inputs.size(); ++j) {
      const auto& in = n.inputs[j];
      if (!in || !gins[j].defined()) continue;
      if (tape->produced(in.get())) {
        auto [lit, fresh] = local.try_emplace(in.get(), gins[j]);
        if (!fresh) {
          Tensor& acc = lit->second;
          dispatch(acc.dtype(), [&](auto tag) {
            using T = decltype(tag);
            T* dst = ptr<T>(acc.impl());
            const T* src = ptr<T>(gins[j].impl());
            const int64_t cnt = acc.numel();
            for (int64_t e = 0; e < cnt; ++e) dst[e] += src[e];
          });
        }
      } else if (in->requires_grad) {
        Tensor(in).accumulate_grad(gins[j]);
      }
    }
  }
}

// ------------------------------------------------------------- primitives

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](auto x, auto y) { return x + y; },
      [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](auto x, auto y) { return x - y; },
      [](const Tensor& g) {
        return std::vector<Tensor>{g, scale(g, -1.0)};
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](auto x, auto y) { return x * y; },
      [a, b](const Tensor& g) {
        Tensor da = a.requires_grad() ? mul(g, b.detach()) : Tensor();
        Tensor db = b.requires_grad() ? mul(g, a.detach()) : Tensor();
        return std::vector<Tensor>{da, db};
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](auto x, auto y) { return x / y; },
      [a, b](const Tensor& g) {
        Tensor da, db;
        if (a.requires_grad()) da = div(g, b.detach());
        if (b.requires_grad()) {
          Tensor t = mul(g, a.detach());             // g * a
          db = scale(div(t, mul(b.detach(), b.detach())), -1.0);  // -g*a/b^2
        }
        return std::vector<Tensor>{da, db};
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  check_same_dtype(a, b, "matmul");
  if (a.ndim() != 2 || b.ndim() != 2)
    throw std::invalid_argument("matmul: expects 2-D operands, got " +
                                a.shape_str() + " and " + b.shape_str());
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner extents differ, " +
                                a.shape_str() + " x " + b.shape_str());
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y = Tensor::zeros({m, n}, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::matmul<T>(ptr<T>(a.impl()), ptr<T>(b.impl()), ptr<T>(y.impl()), m,
                       k, n);
  });
  return finish("matmul", {a, b}, std::move(y), [a, b](const Tensor& g) {
    Tensor da, db;
    if (a.requires_grad()) da = matmul(g, transpose2d(b.detach()));
    if (b.requires_grad()) db = matmul(transpose2d(a.detach()), g);
    return std::vector<Tensor>{da, db};
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int64_t stride) {
  check_defined(x, "conv2d");
  check_defined(w, "conv2d");
  if (x.ndim() != 3)
    throw std::invalid_argument("conv2d: input must be CxHxW, got " +
                                x.shape_str());
  if (w.ndim() != 4)
    throw std::invalid_argument(
        "conv2d: weights must be OxIxKxK, got " + w.shape_str());
  check_same_dtype(x, w, "conv2d");
  if (w.dim(2) != w.dim(3))
    throw std::invalid_argument("conv2d: kernel must be square, got " +
                                w.shape_str());
  if (w.dim(1) != x.dim(0))
    throw std::invalid_argument("conv2d: weight expects " +
                                std::to_string(w.dim(1)) +
                                " input channels, input has " +
                                std::to_string(x.dim(0)));
  if (w.dim(2) % 2 == 0)
    throw std::invalid_argument("conv2d: kernel size must be odd, got " +
                                std::to_string(w.dim(2)));
  if (stride < 1)
    throw std::invalid_argument("conv2d: stride must be >= 1, got " +
                                std::to_string(stride));
  if (bias.defined()) {
    check_same_dtype(x, bias, "conv2d");
    if (bias.ndim() != 1 || bias.dim(0) != w.dim(0))
      throw std::invalid_argument("conv2d: bias " + bias.shape_str() +
                                  " does not match " +
                                  std::to_string(w.dim(0)) + " filters");
  }

  kernels::ConvGeom geom;
  geom.cin = x.dim(0);
  geom.h = x.dim(1);
  geom.w = x.dim(2);
  geom.cout = w.dim(0);
  geom.k = w.dim(2);
  geom.stride = stride;
  geom.pad = (geom.k - 1) / 2;
  if (geom.oh() < 1 || geom.ow() < 1)
    throw std::invalid_argument("conv2d: empty output for input " +
                                x.shape_str() + " with stride " +
                                std::to_string(stride));

  Tensor y = Tensor::zeros({geom.cout, geom.oh(), geom.ow()}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::conv2d_fwd<T>(geom, ptr<T>(x.impl()), ptr<T>(w.impl()),
                           bias.defined() ? ptr<T>(bias.impl()) : nullptr,
                           ptr<T>(y.impl()));
  });

  return finish("conv2d", {x, w, bias}, std::move(y),
                [x, w, bias, geom](const Tensor& g) {
                  Tensor dx, dw, db;
                  dispatch(x.dtype(), [&](auto tag) {
                    using T = decltype(tag);
                    const T* gp = ptr<T>(g.impl());
                    if (x.requires_grad()) {
                      dx = Tensor::zeros(x.shape(), x.dtype());
                      kernels::conv2d_bwd_input<T>(geom, gp, ptr<T>(w.impl()),
                                                   ptr<T>(dx.impl()));
                    }
                    if (w.requires_grad()) {
                      dw = Tensor::zeros(w.shape(), w.dtype());
                      kernels::conv2d_bwd_weight<T>(geom, gp, ptr<T>(x.impl()),
                                                    ptr<T>(dw.impl()));
                    }
                    if (bias.defined() && bias.requires_grad()) {
                      db = Tensor::zeros(bias.shape(), bias.dtype());
                      kernels::conv2d_bwd_bias<T>(geom, gp, ptr<T>(db.impl()));
                    }
                  });
                  return std::vector<Tensor>{dx, dw, db};
                });
}

Tensor relu(const Tensor& x) {
  check_defined(x, "relu");
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x.impl());
    T* py = ptr<T>(y.impl());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) py[i] = px[i] > T(0) ? px[i] : T(0);
  });
  return finish("relu", {x}, std::move(y), [x](const Tensor& g) {
    Tensor dx = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* px = ptr<T>(x.impl());
      const T* pg = ptr<T>(g.impl());
      T* pd = ptr<T>(dx.impl());
      const int64_t n = x.numel();
      for (int64_t i = 0; i < n; ++i) pd[i] = px[i] > T(0) ? pg[i] : T(0);
    });
    return std::vector<Tensor>{dx};
  });
}

Tensor mean_all(const Tensor& x) {
  check_defined(x, "mean");
  if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  Tensor y = Tensor::zeros({}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x.impl());
    const int64_t n = x.numel();
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    ptr<T>(y.impl())[0] = acc / static_cast<T>(n);
  });
  return finish("mean", {x}, std::move(y), [x](const Tensor& g) {
    return std::vector<Tensor>{
        spread_scalar(x, g, static_cast<double>(x.numel()))};
  });
}

Tensor sum_all(const Tensor& x) {
  check_defined(x, "sum");
  Tensor y = Tensor::zeros({}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x.impl());
    const int64_t n = x.numel();
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    ptr<T>(y.impl())[0] = acc;
  });
  return finish("sum", {x}, std::move(y), [x](const Tensor& g) {
    return std::vector<Tensor>{spread_scalar(x, g, 1.0)};
  });
}

Tensor max_all(const Tensor& x) {
  check_defined(x, "max");
  if (x.numel() == 0) throw std::invalid_argument("max: empty tensor");
  Tensor y = Tensor::zeros({}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x.impl());
    const int64_t n = x.numel();
    T best = px[0];
    for (int64_t i = 1; i < n; ++i)
      if (px[i] > best) best = px[i];
    ptr<T>(y.impl())[0] = best;
  });
  return finish("max", {x}, std::move(y), [x](const Tensor& g) {
    Tensor dx = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* px = ptr<T>(x.impl());
      const int64_t n = x.numel();
      int64_t arg = 0;
      for (int64_t i = 1; i < n; ++i)
        if (px[i] > px[arg]) arg = i;
      ptr<T>(dx.impl())[arg] = static_cast<T>(g.item());
    });
    return std::vector<Tensor>{dx};
  });
}

Tensor frobenius_sq(const Tensor& x) {
  check_defined(x, "frobenius_sq");
  Tensor y = Tensor::zeros({}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x.impl());
    const int64_t n = x.numel();
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += px[i] * px[i];
    ptr<T>(y.impl())[0] = acc;
  });
  return finish("frobenius_sq", {x}, std::move(y), [x](const Tensor& g) {
    Tensor dx = Tensor::zeros(x.shape(), x.dtype());
    const double gv = g.item();
    dispatch(x.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* px = ptr<T>(x.impl());
      T* pd = ptr<T>(dx.impl());
      const int64_t n = x.numel();
      const T c = static_cast<T>(2.0 * gv);
      for (int64_t i = 0; i < n; ++i) pd[i] = c * px[i];
    });
    return std::vector<Tensor>{dx};
  });
}

Tensor reshape(const Tensor& x, std::vector<int64_t> shape) {
  check_defined(x, "reshape");
  if (numel_of(shape) != x.numel())
    throw std::invalid_argument("reshape: cannot view " + x.shape_str() +
                                " as " + shape_to_string(shape));
  Tensor y = Tensor::zeros(shape, x.dtype());
  std::memcpy(y.impl()->data.data(), x.impl()->data.data(), x.nbytes());
  std::vector<int64_t> orig = x.shape();
  return finish("reshape", {x}, std::move(y),
                [x, orig](const Tensor& g) {
                  return std::vector<Tensor>{reshape(g, orig)};
                });
}

Tensor transpose2d(const Tensor& x) {
  check_defined(x, "transpose");
  if (x.ndim() != 2)
    throw std::invalid_argument("transpose: expects a matrix, got " +
                                x.shape_str());
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor y = Tensor::zeros({c, r}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x.impl());
    T* py = ptr<T>(y.impl());
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) py[j * r + i] = px[i * c + j];
  });
  return finish("transpose", {x}, std::move(y), [](const Tensor& g) {
    return std::vector<Tensor>{transpose2d(g)};
  });
}

Tensor concat(const std::vector<Tensor>& xs, int64_t axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  for (const Tensor& t : xs) check_defined(t, "concat");
  const Tensor& first = xs[0];
  if (axis < 0 || axis >= first.ndim())
    throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                " for shape " + first.shape_str());
  std::vector<int64_t> out_shape = first.shape();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    check_same_dtype(first, xs[i], "concat");
    if (xs[i].ndim() != first.ndim())
      throw std::invalid_argument("concat: rank mismatch " +
                                  first.shape_str() + " vs " +
                                  xs[i].shape_str());
    for (int64_t d = 0; d < first.ndim(); ++d)
      if (d != axis && xs[i].dim(static_cast<std::size_t>(d)) !=
                           first.dim(static_cast<std::size_t>(d)))
        throw std::invalid_argument("concat: shape mismatch " +
                                    first.shape_str() + " vs " +
                                    xs[i].shape_str() + " along axis " +
                                    std::to_string(axis));
    out_shape[static_cast<std::size_t>(axis)] +=
        xs[i].dim(static_cast<std::size_t>(axis));
  }

  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d)
    outer *= first.dim(static_cast<std::size_t>(d));
  for (int64_t d = axis + 1; d < first.ndim(); ++d)
    inner *= first.dim(static_cast<std::size_t>(d));

  Tensor y = Tensor::zeros(out_shape, first.dtype());
  const std::size_t esz = dtype_size(first.dtype());
  const int64_t total_axis = out_shape[static_cast<std::size_t>(axis)];
  int64_t offset = 0;
  for (const Tensor& t : xs) {
    const int64_t ext = t.dim(static_cast<std::size_t>(axis));
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(y.impl()->data.data() +
                      ((o * total_axis + offset) * inner) * esz,
                  t.impl()->data.data() + (o * ext * inner) * esz,
                  static_cast<std::size_t>(ext * inner) * esz);
    }
    offset += ext;
  }

  std::vector<Tensor> held = xs;
  return finish("concat", xs, std::move(y),
                [held, axis, outer, inner, total_axis](const Tensor& g) {
                  std::vector<Tensor> grads;
                  const std::size_t esz = dtype_size(g.dtype());
                  int64_t offset = 0;
                  for (const Tensor& t : held) {
                    const int64_t ext = t.dim(static_cast<std::size_t>(axis));
                    Tensor gt;
                    if (t.requires_grad()) {
                      gt = Tensor::zeros(t.shape(), t.dtype());
                      for (int64_t o = 0; o < outer; ++o)
                        std::memcpy(
                            gt.impl()->data.data() + (o * ext * inner) * esz,
                            g.impl()->data.data() +
                                ((o * total_axis + offset) * inner) * esz,
                            static_cast<std::size_t>(ext * inner) * esz);
                    }
                    grads.push_back(gt);
                    offset += ext;
                  }
                  return grads;
                });
}

Tensor scale(const Tensor& x, double a) {
  check_defined(x, "scale");
  Tensor y = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x.impl());
    T* py = ptr<T>(y.impl());
    const int64_t n = x.numel();
    const T c = static_cast<T>(a);
    for (int64_t i = 0; i < n; ++i) py[i] = c * px[i];
  });
  return finish("scale", {x}, std::move(y), [a](const Tensor& g) {
    return std::vector<Tensor>{scale(g, a)};
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& labels,
                             int64_t ignore_label) {
  check_defined(logits, "softmax_cross_entropy");
  check_defined(labels, "softmax_cross_entropy");
  if (logits.ndim() != 3)
    throw std::invalid_argument(
        "softmax_cross_entropy: logits must be CxHxW, got " +
        logits.shape_str());
  if (labels.ndim() != 2 || labels.dim(0) != logits.dim(1) ||
      labels.dim(1) != logits.dim(2))
    throw std::invalid_argument(
        "softmax_cross_entropy: labels " + labels.shape_str() +
        " do not match logits " + logits.shape_str());
  const int64_t C = logits.dim(0);
  const int64_t hw = logits.dim(1) * logits.dim(2);

  // Gather labels once; validates range up front.
  std::vector<int64_t> lab(static_cast<std::size_t>(hw));
  for (int64_t p = 0; p < hw; ++p) {
    const double v = labels.at(p);
    const auto iv = static_cast<int64_t>(std::llround(v));
    if (iv != ignore_label && (iv < 0 || iv >= C))
      throw std::invalid_argument(
          "softmax_cross_entropy: label " + std::to_string(iv) +
          " outside [0, " + std::to_string(C) + ") at pixel " +
          std::to_string(p));
    lab[static_cast<std::size_t>(p)] = iv;
  }

  Tensor y = Tensor::zeros({}, logits.dtype());
  int64_t counted = 0;
  dispatch(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pl = ptr<T>(logits.impl());
    double loss = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
      const int64_t t = lab[static_cast<std::size_t>(p)];
      if (t == ignore_label) continue;
      double m = static_cast<double>(pl[p]);
      for (int64_t c = 1; c < C; ++c)
        m = std::max(m, static_cast<double>(pl[c * hw + p]));
      double se = 0.0;
      for (int64_t c = 0; c < C; ++c)
        se += std::exp(static_cast<double>(pl[c * hw + p]) - m);
      loss += (m + std::log(se)) - static_cast<double>(pl[t * hw + p]);
      ++counted;
    }
    if (counted == 0)
      throw std::invalid_argument("softmax_cross_entropy: no valid pixels");
    ptr<T>(y.impl())[0] = static_cast<T>(loss / static_cast<double>(counted));
  });

  auto lab_shared = std::make_shared<std::vector<int64_t>>(std::move(lab));
  return finish(
      "softmax_cross_entropy", {logits, labels}, std::move(y),
      [logits, lab_shared, C, hw, counted, ignore_label](const Tensor& g) {
        Tensor dl = Tensor::zeros(logits.shape(), logits.dtype());
        const double gv = g.item() / static_cast<double>(counted);
        dispatch(logits.dtype(), [&](auto tag) {
          using T = decltype(tag);
          const T* pl = ptr<T>(logits.impl());
          T* pd = ptr<T>(dl.impl());
          for (int64_t p = 0; p < hw; ++p) {
            const int64_t t = (*lab_shared)[static_cast<std::size_t>(p)];
            if (t == ignore_label) continue;
            double m = static_cast<double>(pl[p]);
            for (int64_t c = 1; c < C; ++c)
              m = std::max(m, static_cast<double>(pl[c * hw + p]));
            double se = 0.0;
            for (int64_t c = 0; c < C; ++c)
              se += std::exp(static_cast<double>(pl[c * hw + p]) - m);
            for (int64_t c = 0; c < C; ++c) {
              const double sm =
                  std::exp(static_cast<double>(pl[c * hw + p]) - m) / se;
              pd[c * hw + p] =
                  static_cast<T>(gv * (sm - (c == t ? 1.0 : 0.0)));
            }
          }
        });
        return std::vector<Tensor>{dl, Tensor()};
      });
}

Tensor upsample_bilinear(const Tensor& x, int64_t factor) {
  check_defined(x, "upsample_bilinear");
  if (x.ndim() != 3)
    throw std::invalid_argument(
        "upsample_bilinear: input must be CxHxW, got " + x.shape_str());
  if (factor < 1)
    throw std::invalid_argument("upsample_bilinear: factor must be >= 1");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t oh = h * factor, ow = w * factor;

  // Half-pixel source coordinates, clamped to the valid range; shared by the
  // forward interpolation and the backward scatter.
  struct Mix {
    int64_t lo, hi;
    double t;
  };
  auto build = [](int64_t in, int64_t out, int64_t f) {
    std::vector<Mix> m(static_cast<std::size_t>(out));
    for (int64_t d = 0; d < out; ++d) {
      double src = (static_cast<double>(d) + 0.5) / static_cast<double>(f) - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<int64_t>(std::floor(src));
      m[static_cast<std::size_t>(d)] = {lo, std::min(lo + 1, in - 1),
                                        src - static_cast<double>(lo)};
    }
    return m;
  };
  auto rows = std::make_shared<std::vector<Mix>>(build(h, oh, factor));
  auto cols = std::make_shared<std::vector<Mix>>(build(w, ow, factor));

  Tensor y = Tensor::zeros({c, oh, ow}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = ptr<T>(x.impl());
    T* py = ptr<T>(y.impl());
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* plane = px + ch * h * w;
      T* out = py + ch * oh * ow;
      for (int64_t i = 0; i < oh; ++i) {
        const Mix& r = (*rows)[static_cast<std::size_t>(i)];
        for (int64_t j = 0; j < ow; ++j) {
          const Mix& cc = (*cols)[static_cast<std::size_t>(j)];
          const double v00 = plane[r.lo * w + cc.lo];
          const double v01 = plane[r.lo * w + cc.hi];
          const double v10 = plane[r.hi * w + cc.lo];
          const double v11 = plane[r.hi * w + cc.hi];
          out[i * ow + j] = static_cast<T>((1 - r.t) * ((1 - cc.t) * v00 + cc.t * v01) +
                                           r.t * ((1 - cc.t) * v10 + cc.t * v11));
        }
      }
    }
  });

  return finish("upsample_bilinear", {x}, std::move(y),
                [x, rows, cols, c, h, w, oh, ow](const Tensor& g) {
                  Tensor dx = Tensor::zeros(x.shape(), x.dtype());
                  dispatch(x.dtype(), [&](auto tag) {
                    using T = decltype(tag);
                    const T* pg = ptr<T>(g.impl());
                    T* pd = ptr<T>(dx.impl());
                    for (int64_t ch = 0; ch < c; ++ch) {
                      const T* gout = pg + ch * oh * ow;
                      T* gin = pd + ch * h * w;
                      for (int64_t i = 0; i < oh; ++i) {
                        const Mix& r = (*rows)[static_cast<std::size_t>(i)];
                        for (int64_t j = 0; j < ow; ++j) {
                          const Mix& cc = (*cols)[static_cast<std::size_t>(j)];
                          const double gv = static_cast<double>(gout[i * ow + j]);
                          gin[r.lo * w + cc.lo] += static_cast<T>((1 - r.t) * (1 - cc.t) * gv);
                          gin[r.lo * w + cc.hi] += static_cast<T>((1 - r.t) * cc.t * gv);
                          gin[r.hi * w + cc.lo] += static_cast<T>(r.t * (1 - cc.t) * gv);
                          gin[r.hi * w + cc.hi] += static_cast<T>(r.t * cc.t * gv);
                        }
                      }
                    }
                  });
                  return std::vector<Tensor>{dx};
                });
}

Tensor forward_primitive(PrimitiveKind kind, const std::vector<Tensor>& inputs,
                         const PrimitiveAttrs& attrs) {
  auto need = [&](std::size_t n, const char* op) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string(op) + ": expected " +
                                  std::to_string(n) + " inputs, got " +
                                  std::to_string(inputs.size()));
  };
  switch (kind) {
    case PrimitiveKind::Add:
      need(2, "add");
      return add(inputs[0], inputs[1]);
    case PrimitiveKind::Sub:
      need(2, "sub");
      return sub(inputs[0], inputs[1]);
    case PrimitiveKind::Mul:
      need(2, "mul");
      return mul(inputs[0], inputs[1]);
    case PrimitiveKind::MatMul:
      need(2, "matmul");
      return matmul(inputs[0], inputs[1]);
    case PrimitiveKind::Conv2d:
      if (inputs.size() != 2 && inputs.size() != 3)
        throw std::invalid_argument("conv2d: expected 2 or 3 inputs");
      return conv2d(inputs[0], inputs[1],
                    inputs.size() == 3 ? inputs[2] : Tensor(), attrs.stride);
    case PrimitiveKind::Relu:
      need(1, "relu");
      return relu(inputs[0]);
    case PrimitiveKind::Mean:
      need(1, "mean");
      return mean_all(inputs[0]);
    case PrimitiveKind::Max:
      need(1, "max");
      return max_all(inputs[0]);
    case PrimitiveKind::FrobeniusSq:
      need(1, "frobenius_sq");
      return frobenius_sq(inputs[0]);
    case PrimitiveKind::Reshape:
      need(1, "reshape");
      return reshape(inputs[0], attrs.shape);
    case PrimitiveKind::Transpose:
      need(1, "transpose");
      return transpose2d(inputs[0]);
    case PrimitiveKind::Concat:
      return concat(inputs, attrs.axis);
    case PrimitiveKind::Scale:
      need(1, "scale");
      return scale(inputs[0], attrs.scale);
    case PrimitiveKind::SoftmaxCrossEntropy:
      need(2, "softmax_cross_entropy");
      return softmax_cross_entropy(inputs[0], inputs[1], attrs.ignore_label);
  }
  throw std::logic_error("forward_primitive: unknown kind");
}

double gradcheck(const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& x, double eps) {
  check_defined(x, "gradcheck");
  if (x.dtype() != Dtype::F64)
    throw std::invalid_argument("gradcheck: probe point must be float64");

  Tensor xv = x.clone();
  xv.set_requires_grad(true);
  Tensor analytic;
  {
    TapeScope ts;
    Tensor y = f(xv);
    if (y.numel() != 1)
      throw std::invalid_argument("gradcheck: function must be scalar-valued");
    backward(y);
    Tensor g = xv.grad();
    analytic = g.defined() ? g.clone() : Tensor::zeros(x.shape(), x.dtype());
  }

  Tensor probe = x.clone();
  double max_err = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = probe.at(i);
    probe.set(i, orig + eps);
    const double fp = f(probe).item();
    probe.set(i, orig - eps);
    const double fm = f(probe).item();
    probe.set(i, orig);
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic.at(i);
    const double err =
        std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    max_err = std::max(max_err, err);
  }
  return max_err;
}

Tensor rand_uniform(std::vector<int64_t> shape, double lo, double hi,
                    std::mt19937_64& rng, Dtype dt) {
  Tensor t = Tensor::zeros(std::move(shape), dt);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng));
  return t;
}

Tensor rand_normal(std::vector<int64_t> shape, double mean, double stddev,
                   std::mt19937_64& rng, Dtype dt) {
  Tensor t = Tensor::zeros(std::move(shape), dt);
  std::normal_distribution<double> dist(mean, stddev);
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng));
  return t;
}

}  // namespace stylelab
