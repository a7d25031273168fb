#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace stylelab {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

std::size_t dtype_size(Dtype dt);
const char* dtype_name(Dtype dt);

struct TensorImpl;

/// Dense n-dimensional array, row-major, float32 or float64. Value-semantic
/// handle; the underlying buffer is shared between copies. Tensors take part
/// in reverse-mode differentiation when requires_grad is set and a tape is
/// active (see Tape / TapeScope below).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, Dtype dt = Dtype::F32,
                      bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value,
                     Dtype dt = Dtype::F32);
  static Tensor scalar(double value, Dtype dt = Dtype::F32);
  /// Build from explicit values (row-major); values.size() must match shape.
  static Tensor of(std::vector<int64_t> shape, std::vector<double> values,
                   Dtype dt = Dtype::F32);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const;
  int64_t ndim() const;
  int64_t dim(std::size_t i) const;
  int64_t numel() const;
  Dtype dtype() const;

  std::span<float> f32();
  std::span<const float> f32() const;
  std::span<double> f64();
  std::span<const double> f64() const;
  const std::byte* raw() const;
  std::size_t nbytes() const;

  /// Scalar element access regardless of dtype (slow path; tests and tooling).
  double at(int64_t i) const;
  void set(int64_t i, double v);
  /// Value of a one-element tensor.
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool rg);
  /// Accumulated gradient; undefined Tensor when no gradient has been set.
  Tensor grad() const;
  void zero_grad();
  void accumulate_grad(const Tensor& g);

  /// Deep copy of the data; the copy does not require grad.
  Tensor clone() const;
  Tensor astype(Dtype dt) const;
  /// Same data, grad participation off.
  Tensor detach() const;

  bool same_shape(const Tensor& other) const;
  std::string shape_str() const;

  TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<TensorImpl> impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
  std::vector<int64_t> shape;
  Dtype dtype = Dtype::F32;
  std::vector<std::byte> data;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl> grad;
};

/// Ordered record of executed primitives for one forward pass. Replaying the
/// reverse pass over a fixed tape is deterministic. A tape belongs to one
/// logical thread; install one with TapeScope.
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    TensorImpl* output_raw = nullptr;
    std::weak_ptr<TensorImpl> output;
    // Returns per-input gradients aligned with `inputs`; an undefined Tensor
    // marks an input that does not need one.
    std::function<std::vector<Tensor>(const Tensor& grad_out)> vjp;
  };

  void record(Node n);
  std::size_t size() const { return nodes_.size(); }
  bool produced(const TensorImpl* t) const;

  friend void backward(const Tensor& root);

 private:
  std::vector<Node> nodes_;
  std::unordered_set<const TensorImpl*> produced_;
};

Tape* active_tape();

/// RAII guard installing a fresh tape for the current thread.
class TapeScope {
 public:
  TapeScope();
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  Tape& tape() { return tape_; }

 private:
  Tape tape_;
  Tape* prev_;
};

/// Reverse pass from a scalar root recorded on the active tape. Gradients of
/// requires_grad leaves accumulate into their grad buffers; call zero_grad
/// between backward passes to reset.
void backward(const Tensor& root);

// ------------------------------------------------------------- primitives

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D cross-correlation, NCHW without the batch axis (x: cin x h x w,
/// w: cout x cin x k x k, bias: cout or undefined). Symmetric zero padding
/// (k-1)/2, so stride 1 preserves the spatial extents.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int64_t stride = 1);
Tensor relu(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);
/// Maximum entry as a scalar; the gradient routes to the first (row-major)
/// occurrence of the maximum.
Tensor max_all(const Tensor& x);
/// Sum of squared entries (squared Frobenius norm for matrices).
Tensor frobenius_sq(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<int64_t> shape);
Tensor transpose2d(const Tensor& x);
Tensor concat(const std::vector<Tensor>& xs, int64_t axis);
Tensor scale(const Tensor& x, double a);
/// Mean cross-entropy over non-ignored pixels. logits: C x H x W, labels:
/// H x W holding integer class ids (255 = ignore). Throws when a label is
/// out of range or every pixel is ignored.
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& labels,
                             int64_t ignore_label = 255);
/// Bilinear upsampling by an integer factor (half-pixel sampling, edges
/// clamped); fixed weights, fully differentiable.
Tensor upsample_bilinear(const Tensor& x, int64_t factor);

enum class PrimitiveKind {
  Add,
  Sub,
  Mul,
  MatMul,
  Conv2d,
  Relu,
  Mean,
  Max,
  FrobeniusSq,
  Reshape,
  Transpose,
  Concat,
  Scale,
  SoftmaxCrossEntropy,
};

struct PrimitiveAttrs {
  double scale = 1.0;
  int64_t stride = 1;
  int64_t axis = 0;
  std::vector<int64_t> shape;
  int64_t ignore_label = 255;
};

/// Uniform dispatch over the primitive set; the named functions above are the
/// ordinary entry points.
Tensor forward_primitive(PrimitiveKind kind, const std::vector<Tensor>& inputs,
                         const PrimitiveAttrs& attrs = {});

/// Max relative error between the tape gradient of a scalar-valued function
/// and a central finite difference, |analytic - numeric| /
/// max(1, |analytic|, |numeric|) over all coordinates. x must be float64.
double gradcheck(const std::function<Tensor(const Tensor&)>& f,
                 const Tensor& x, double eps = 1e-5);

// ------------------------------------------------------------- rng helpers

Tensor rand_uniform(std::vector<int64_t> shape, double lo, double hi,
                    std::mt19937_64& rng, Dtype dt = Dtype::F32);
Tensor rand_normal(std::vector<int64_t> shape, double mean, double stddev,
                   std::mt19937_64& rng, Dtype dt = Dtype::F32);

std::string shape_to_string(const std::vector<int64_t>& shape);
bool all_finite(const Tensor& t);

}  // namespace stylelab
