#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace symdepth {

using Shape = std::vector<int64_t>;

// Error kinds surfaced to callers; the C API maps all of them to status codes.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Raised when a forward op produces NaN/Inf, or when training diverges.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<int64_t> row_major_strides(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until a backward pass touches this node
};
}  // namespace detail

// Dense row-major f64 tensor. Value semantics over a shared buffer; the data
// of a tensor is never mutated by ops (each op allocates a fresh output), so
// handles can be shared freely across threads for reading. mutable_data() is
// reserved for parameter initialization and optimizer updates, which happen
// strictly between forward/backward passes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const { return static_cast<int64_t>(shape().size()); }
  int64_t size() const;  // element count
  int64_t dim(int64_t axis) const;

  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();
  double value() const;  // single-element tensors only
  double at(const std::vector<int64_t>& index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // deep copy of the buffer; grad state is not copied
  Tensor clone() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Constructing a Tape makes it the active tape for the
// current thread; ops executed while it is active record backward rules in
// execution (= topological) order. Independent tapes on independent threads
// do not interact.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(root)/d(root) = 1 and walks the recorded ops once, in reverse.
  // root must hold exactly one element.
  void backward(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }

  static Tape* active();

  struct Node {
    const char* op;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void()> backward;
  };

  void push(Node node) { nodes_.push_back(std::move(node)); }

 private:
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

// Records a node on the active tape (if any) when gradients are being
// tracked; used by every differentiable op and available for test-only
// custom ops (e.g. deliberately-wrong backward rules as gradcheck controls).
void record_op(const char* name, const std::vector<Tensor>& inputs,
               Tensor& output, std::function<void()> backward);

// Throws NumericError naming `op` if any element is NaN/Inf.
void check_finite(const char* op, const Tensor& t);

namespace detail {
std::vector<double>& ensure_grad(TensorImpl& impl);
}

// ---------------------------------------------------------------------------
// op library (all differentiable unless noted)
// ---------------------------------------------------------------------------

// elementwise with numpy-style broadcasting
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form

enum class Activation { Gelu, Sigmoid };
Tensor activation(const Tensor& x, Activation kind);

// reductions
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<int64_t>& axes, bool keepdims);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, const std::vector<int64_t>& axes, bool keepdims);

// shape ops
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x, const std::vector<int64_t>& perm);
Tensor concat(const std::vector<Tensor>& xs, int64_t axis);
Tensor slice(const Tensor& x, int64_t axis, int64_t start, int64_t length);

// batched matrix product: [..., m, k] x [..., k, n] -> [..., m, n];
// leading dims must match exactly
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int64_t axis);

// normalizes over the last axis; gamma/beta have shape [last_dim]
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

enum class Padding { Same, Valid };

// x: [B,H,W,Cin], kernel: [kh,kw,Cin/groups,Cout]; cross-correlation.
// 'same' zero-pads so the output spatial dims are ceil(in/stride).
Tensor conv2d(const Tensor& x, const Tensor& kernel, int64_t stride,
              Padding padding, int64_t groups = 1);

// align_corners=false bilinear; scale in {2, 4}
Tensor upsample_bilinear(const Tensor& x, int64_t scale);

// table: [rows, cols]; out[i, :] = table[indices[i], :]
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& indices);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

}  // namespace symdepth
