#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdrdistill {

struct ShapeMismatchError : std::runtime_error {
    explicit ShapeMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NotScalarError : std::runtime_error {
    explicit NotScalarError(const std::string& msg) : std::runtime_error(msg) {}
};
struct GraphConsumedError : std::runtime_error {
    explicit GraphConsumedError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

// Handle to one value in the computation graph. Values are 64-bit floats and
// immutable once an op has produced them; the graph they form is rebuilt on
// every forward pass. raw_values() exists so optimizers can update leaf
// parameters between passes.
class Tensor {
  public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor constant(Shape shape, double fill);
    static Tensor scalar(double v);
    // Leaf that participates in backward().
    static Tensor variable(Shape shape, std::vector<double> values);
    static Tensor variable(Shape shape, double fill);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int ndim() const;
    int dim(int i) const;  // negative i counts from the back
    std::size_t size() const;

    // Copies, so they stay valid past the life of a temporary handle.
    std::vector<double> values() const;
    std::vector<double> grad() const;

    std::vector<double>& raw_values();  // leaf tensors only
    double item() const;                // scalar tensors only

    bool requires_grad() const;
    bool has_grad() const;
    void zero_grad();

    // Constant view sharing this tensor's storage; gradients do not flow past it.
    Tensor detach() const;

  private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor wrap_node(std::shared_ptr<detail::Node> node);
    friend const std::shared_ptr<detail::Node>& unwrap_node(const Tensor& t);
};

// Elementwise arithmetic with numpy-style broadcasting over trailing axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

// y = s * x + t, elementwise.
Tensor affine(const Tensor& x, double s, double t);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // DomainError unless strictly positive
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);  // DomainError on negative input
Tensor abs(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// Batched matrix product: [..., m, k] x [..., k, n] -> [..., m, n].
// Leading axes must match exactly.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2(const Tensor& a);       // 2-D transpose
Tensor transpose_last2(const Tensor& a);  // swap the last two axes, rank >= 2

// Indexing along the leading axis: one slice out, or a stack of equal-shaped
// parts into a new leading axis.
Tensor select0(const Tensor& a, int index);
Tensor stack0(const std::vector<Tensor>& parts);

// Cross-correlation. x is [B,C,H,W] or [C,H,W]; w is [O,C/groups,kh,kw] with
// odd kernel sides; bias (optional, pass Tensor()) is [O].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
              int groups = 1);

Tensor softmax(const Tensor& a, int axis);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, const std::vector<int>& axes, bool keepdims = false);
Tensor mean(const Tensor& a);
Tensor cumsum(const Tensor& a, int axis);

Tensor reshape(const Tensor& a, Shape shape);
Tensor upsample_nearest2(const Tensor& a, int factor);  // [C,H,W] or [B,C,H,W]
Tensor avgpool2(const Tensor& a);                       // 2x2 mean pool, even dims

// Populates grads of every requires_grad tensor reachable from `loss`.
// `loss` must be scalar; calling twice on the same graph root throws.
void backward(const Tensor& loss);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return affine(a, 1.0, b); }
inline Tensor operator+(double a, const Tensor& b) { return affine(b, 1.0, a); }
inline Tensor operator-(const Tensor& a, double b) { return affine(a, 1.0, -b); }
inline Tensor operator-(double a, const Tensor& b) { return affine(b, -1.0, a); }
inline Tensor operator*(const Tensor& a, double b) { return affine(a, b, 0.0); }
inline Tensor operator*(double a, const Tensor& b) { return affine(b, a, 0.0); }
inline Tensor operator/(const Tensor& a, double b) { return affine(a, 1.0 / b, 0.0); }
inline Tensor operator-(const Tensor& a) { return affine(a, -1.0, 0.0); }

}  // namespace hdrdistill
