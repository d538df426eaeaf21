#include "hdrdistill/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Core>

#include "autodiff_node.hpp"

namespace hdrdistill {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); i++) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace detail {

namespace {

struct BufferPool {
    std::unordered_map<std::size_t, std::vector<std::vector<double>*>> free_lists;

    ~BufferPool() {
        for (auto& [n, list] : free_lists) {
            for (auto* v : list) delete v;
        }
    }
};

thread_local BufferPool tl_pool;

}  // namespace

std::shared_ptr<std::vector<double>> acquire_buffer(std::size_t n) {
    auto& list = tl_pool.free_lists[n];
    std::vector<double>* buf;
    if (!list.empty()) {
        buf = list.back();
        list.pop_back();
    } else {
        buf = new std::vector<double>(n);
    }
    return std::shared_ptr<std::vector<double>>(buf, [](std::vector<double>* v) {
        tl_pool.free_lists[v->size()].push_back(v);
    });
}

std::shared_ptr<Node> make_node(Shape shape, std::vector<std::shared_ptr<Node>> inputs) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = acquire_buffer(numel(node->shape));
    node->inputs = std::move(inputs);
    for (const auto& in : node->inputs) {
        if (in->requires_grad) node->requires_grad = true;
    }
    return node;
}

}  // namespace detail

using detail::Node;

Tensor wrap_node(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }
const std::shared_ptr<Node>& unwrap_node(const Tensor& t) { return t.node_; }

namespace {

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != numel(shape)) {
        throw ShapeMismatchError("leaf data size " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->values = std::make_shared<std::vector<double>>(std::move(values));
    node->requires_grad = requires_grad;
    return node;
}

const std::shared_ptr<Node>& node_of(const Tensor& t) {
    if (!t.defined()) throw std::logic_error("use of undefined tensor");
    return unwrap_node(t);
}

}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    return wrap_node(make_leaf(std::move(shape), std::move(values), false));
}
Tensor Tensor::constant(Shape shape, double fill) {
    std::vector<double> v(numel(shape), fill);
    return wrap_node(make_leaf(std::move(shape), std::move(v), false));
}
Tensor Tensor::scalar(double v) { return constant(Shape{1}, std::vector<double>{v}); }
Tensor Tensor::variable(Shape shape, std::vector<double> values) {
    return wrap_node(make_leaf(std::move(shape), std::move(values), true));
}
Tensor Tensor::variable(Shape shape, double fill) {
    std::vector<double> v(numel(shape), fill);
    return wrap_node(make_leaf(std::move(shape), std::move(v), true));
}

const Shape& Tensor::shape() const { return node_of(*this)->shape; }
int Tensor::ndim() const { return static_cast<int>(shape().size()); }
int Tensor::dim(int i) const {
    const Shape& s = shape();
    if (i < 0) i += static_cast<int>(s.size());
    return s.at(static_cast<std::size_t>(i));
}
std::size_t Tensor::size() const { return node_of(*this)->size(); }
std::vector<double> Tensor::values() const { return *node_of(*this)->values; }

std::vector<double>& Tensor::raw_values() {
    auto& n = node_of(*this);
    if (!n->inputs.empty() || n->backward_fn) {
        throw std::logic_error("raw_values() is restricted to leaf tensors");
    }
    return *n->values;
}

double Tensor::item() const {
    if (size() != 1) throw NotScalarError("item() on tensor of shape " + shape_str(shape()));
    return (*node_of(*this)->values)[0];
}

bool Tensor::requires_grad() const { return node_of(*this)->requires_grad; }
bool Tensor::has_grad() const {
    const auto& n = node_of(*this);
    return n->has_grad();
}
std::vector<double> Tensor::grad() const {
    const auto& n = node_of(*this);
    if (!n->has_grad()) throw std::logic_error("tensor has no gradient");
    return *n->grad;
}
void Tensor::zero_grad() { node_of(*this)->grad.reset(); }

Tensor Tensor::detach() const {
    const auto& n = node_of(*this);
    auto d = std::make_shared<Node>();
    d->shape = n->shape;
    d->values = n->values;  // shared storage, no graph edge
    return wrap_node(std::move(d));
}

// ---------------------------------------------------------------------------
// Broadcasting machinery

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; i++) {
        int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeMismatchError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

std::vector<std::size_t> contiguous_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; i--) {
        st[i] = st[i + 1] * static_cast<std::size_t>(s[i + 1]);
    }
    return st;
}

// Strides of `in` viewed through `out` (0 on broadcast axes).
std::vector<std::size_t> bcast_strides(const Shape& in, const Shape& out) {
    auto st = contiguous_strides(in);
    std::vector<std::size_t> r(out.size(), 0);
    std::size_t off = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); i++) {
        r[off + i] = in[i] == 1 && out[off + i] != 1 ? 0 : st[i];
    }
    return r;
}

// Odometer walk over `out`, invoking f(flat_out, flat_a, flat_b).
template <class F>
void for_each_pair(const Shape& out, const std::vector<std::size_t>& sa,
                   const std::vector<std::size_t>& sb, F&& f) {
    std::size_t n = numel(out);
    std::size_t rank = out.size();
    if (rank == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<int> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; i++) {
        f(i, ia, ib);
        for (int ax = static_cast<int>(rank) - 1; ax >= 0; ax--) {
            idx[ax]++;
            ia += sa[ax];
            ib += sb[ax];
            if (idx[ax] < out[ax]) break;
            ia -= sa[ax] * static_cast<std::size_t>(out[ax]);
            ib -= sb[ax] * static_cast<std::size_t>(out[ax]);
            idx[ax] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary_op(const Tensor& ta, const Tensor& tb, BinOp op) {
    const auto& a = node_of(ta);
    const auto& b = node_of(tb);
    Shape out_shape = broadcast_shape(a->shape, b->shape);
    auto out = detail::make_node(out_shape, {a, b});

    const double* av = a->data();
    const double* bv = b->data();
    double* ov = out->values->data();

    const bool same = a->shape == b->shape && a->shape == out_shape;
    auto apply = [op](double x, double y) {
        switch (op) {
            case BinOp::Add: return x + y;
            case BinOp::Sub: return x - y;
            case BinOp::Mul: return x * y;
            default: return x / y;
        }
    };
    if (same) {
        std::size_t n = out->size();
        switch (op) {
            case BinOp::Add:
                for (std::size_t i = 0; i < n; i++) ov[i] = av[i] + bv[i];
                break;
            case BinOp::Sub:
                for (std::size_t i = 0; i < n; i++) ov[i] = av[i] - bv[i];
                break;
            case BinOp::Mul:
                for (std::size_t i = 0; i < n; i++) ov[i] = av[i] * bv[i];
                break;
            case BinOp::Div:
                for (std::size_t i = 0; i < n; i++) ov[i] = av[i] / bv[i];
                break;
        }
    } else {
        auto sa = bcast_strides(a->shape, out_shape);
        auto sb = bcast_strides(b->shape, out_shape);
        for_each_pair(out_shape, sa, sb,
                      [&](std::size_t i, std::size_t ia, std::size_t ib) {
                          ov[i] = apply(av[ia], bv[ib]);
                      });
    }

    if (out->requires_grad) {
        Node* an = a.get();
        Node* bn = b.get();
        Shape oshape = out_shape;
        out->backward_fn = [an, bn, op, oshape, same](Node& o) {
            const double* g = o.grad->data();
            const double* av2 = an->data();
            const double* bv2 = bn->data();
            if (same) {
                std::size_t n = o.size();
                if (an->requires_grad) {
                    double* ga = an->grad_data();
                    switch (op) {
                        case BinOp::Add:
                        case BinOp::Sub:
                            for (std::size_t i = 0; i < n; i++) ga[i] += g[i];
                            break;
                        case BinOp::Mul:
                            for (std::size_t i = 0; i < n; i++) ga[i] += g[i] * bv2[i];
                            break;
                        case BinOp::Div:
                            for (std::size_t i = 0; i < n; i++) ga[i] += g[i] / bv2[i];
                            break;
                    }
                }
                if (bn->requires_grad) {
                    double* gb = bn->grad_data();
                    switch (op) {
                        case BinOp::Add:
                            for (std::size_t i = 0; i < n; i++) gb[i] += g[i];
                            break;
                        case BinOp::Sub:
                            for (std::size_t i = 0; i < n; i++) gb[i] -= g[i];
                            break;
                        case BinOp::Mul:
                            for (std::size_t i = 0; i < n; i++) gb[i] += g[i] * av2[i];
                            break;
                        case BinOp::Div:
                            for (std::size_t i = 0; i < n; i++)
                                gb[i] -= g[i] * av2[i] / (bv2[i] * bv2[i]);
                            break;
                    }
                }
                return;
            }
            auto sa = bcast_strides(an->shape, oshape);
            auto sb = bcast_strides(bn->shape, oshape);
            double* ga = an->requires_grad ? an->grad_data() : nullptr;
            double* gb = bn->requires_grad ? bn->grad_data() : nullptr;
            for_each_pair(oshape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                switch (op) {
                    case BinOp::Add:
                        if (ga) ga[ia] += g[i];
                        if (gb) gb[ib] += g[i];
                        break;
                    case BinOp::Sub:
                        if (ga) ga[ia] += g[i];
                        if (gb) gb[ib] -= g[i];
                        break;
                    case BinOp::Mul:
                        if (ga) ga[ia] += g[i] * bv2[ib];
                        if (gb) gb[ib] += g[i] * av2[ia];
                        break;
                    case BinOp::Div:
                        if (ga) ga[ia] += g[i] / bv2[ib];
                        if (gb) gb[ib] -= g[i] * av2[ia] / (bv2[ib] * bv2[ib]);
                        break;
                }
            });
        };
    }
    return wrap_node(std::move(out));
}

template <class Fwd, class Dfdx>
Tensor unary_op(const Tensor& ta, Fwd fwd, Dfdx dfdx) {
    const auto& a = node_of(ta);
    auto out = detail::make_node(a->shape, {a});
    const double* av = a->data();
    double* ov = out->values->data();
    std::size_t n = out->size();
    for (std::size_t i = 0; i < n; i++) ov[i] = fwd(av[i]);
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an, dfdx](Node& o) {
            const double* g = o.grad->data();
            const double* x = an->data();
            const double* y = o.data();
            double* ga = an->grad_data();
            std::size_t m = o.size();
            for (std::size_t i = 0; i < m; i++) ga[i] += g[i] * dfdx(x[i], y[i]);
        };
    }
    return wrap_node(std::move(out));
}

using Pack8 = Eigen::Array<double, 8, 1>;

// Vectorized transcendentals evaluated in fixed 8-wide blocks from index 0,
// with the tail padded into a full block. Every element's code path depends
// only on its position, never on buffer alignment, so equal inputs always
// produce bit-equal outputs.
template <class BlockFn>
void blockwise8(const double* x, double* y, std::size_t n, double pad, BlockFn&& f) {
    Pack8 t;
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        std::memcpy(t.data(), x + i, 8 * sizeof(double));
        f(t);
        std::memcpy(y + i, t.data(), 8 * sizeof(double));
    }
    if (i < n) {
        std::size_t r = n - i;
        t.setConstant(pad);
        std::memcpy(t.data(), x + i, r * sizeof(double));
        f(t);
        std::memcpy(y + i, t.data(), r * sizeof(double));
    }
}

// Blocked forward, plain-arithmetic backward (exact IEEE ops either way).
template <class BlockFn, class Dfdx>
Tensor unary_blocked(const Tensor& ta, double pad, BlockFn ffwd, Dfdx dfdx) {
    const auto& a = node_of(ta);
    auto out = detail::make_node(a->shape, {a});
    blockwise8(a->data(), out->values->data(), out->size(), pad, ffwd);
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an, dfdx](Node& o) {
            const double* g = o.grad->data();
            const double* x = an->data();
            const double* y = o.data();
            double* ga = an->grad_data();
            std::size_t m = o.size();
            for (std::size_t i = 0; i < m; i++) ga[i] += g[i] * dfdx(x[i], y[i]);
        };
    }
    return wrap_node(std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Div); }

Tensor affine(const Tensor& x, double s, double t) {
    return unary_op(
        x, [s, t](double v) { return s * v + t; }, [s](double, double) { return s; });
}

Tensor exp(const Tensor& a) {
    return unary_blocked(
        a, 0.0, [](Pack8& t) { t = t.exp(); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    {
        const auto& n = unwrap_node(a);
        const double* v = n->data();
        for (std::size_t i = 0; i < n->size(); i++) {
            if (!(v[i] > 0.0)) {
                throw DomainError("log of non-positive value " + std::to_string(v[i]));
            }
        }
    }
    return unary_blocked(
        a, 1.0, [](Pack8& t) { t = t.log(); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
    return unary_op(
        a, [](double v) { return v * v; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
    {
        const auto& n = unwrap_node(a);
        const double* v = n->data();
        for (std::size_t i = 0; i < n->size(); i++) {
            if (v[i] < 0.0) throw DomainError("sqrt of negative value " + std::to_string(v[i]));
        }
    }
    return unary_blocked(
        a, 1.0, [](Pack8& t) { t = t.sqrt(); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& a) {
    return unary_op(
        a, [](double v) { return std::fabs(v); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

namespace {

// Eigen has no double-precision packet tanh, so route through its packet exp:
// tanh(x) = sign(x) * (1 - e) / (1 + e), e = exp(-2|x|). No overflow, and the
// absolute error stays at the last-ulp level.
inline void tanh_pack(Pack8& t) {
    Pack8 s = t.sign();
    Pack8 e = (-2.0 * t.abs()).exp();
    t = s * (1.0 - e) / (1.0 + e);
}

}  // namespace

Tensor tanh(const Tensor& a) {
    return unary_blocked(
        a, 0.0, [](Pack8& t) { tanh_pack(t); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_blocked(
        a, 0.0,
        [](Pack8& t) {
            t *= 0.5;
            tanh_pack(t);
            t = 0.5 * t + 0.5;
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary_op(
        a, [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](double x, double) { return x >= lo && x <= hi ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// softmax

Tensor softmax(const Tensor& ta, int axis) {
    const auto& a = node_of(ta);
    int rank = static_cast<int>(a->shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeMismatchError("softmax axis out of range");

    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; i++) outer *= static_cast<std::size_t>(a->shape[i]);
    for (int i = axis + 1; i < rank; i++) inner *= static_cast<std::size_t>(a->shape[i]);
    std::size_t n = static_cast<std::size_t>(a->shape[axis]);

    auto out = detail::make_node(a->shape, {a});
    const double* x = a->data();
    double* y = out->values->data();
    for (std::size_t o = 0; o < outer; o++) {
        for (std::size_t in = 0; in < inner; in++) {
            std::size_t base = o * n * inner + in;
            double mx = x[base];
            for (std::size_t j = 1; j < n; j++) mx = std::max(mx, x[base + j * inner]);
            double s = 0.0;
            for (std::size_t j = 0; j < n; j++) {
                double e = std::exp(x[base + j * inner] - mx);
                y[base + j * inner] = e;
                s += e;
            }
            double inv = 1.0 / s;
            for (std::size_t j = 0; j < n; j++) y[base + j * inner] *= inv;
        }
    }
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an, outer, inner, n](Node& o) {
            const double* g = o.grad->data();
            const double* yv = o.data();
            double* ga = an->grad_data();
            for (std::size_t ot = 0; ot < outer; ot++) {
                for (std::size_t in = 0; in < inner; in++) {
                    std::size_t base = ot * n * inner + in;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; j++)
                        dot += g[base + j * inner] * yv[base + j * inner];
                    for (std::size_t j = 0; j < n; j++) {
                        std::size_t k = base + j * inner;
                        ga[k] += yv[k] * (g[k] - dot);
                    }
                }
            }
        };
    }
    return wrap_node(std::move(out));
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& ta) {
    const auto& a = node_of(ta);
    auto out = detail::make_node(Shape{1}, {a});
    const double* x = a->data();
    double s = 0.0;
    std::size_t n = a->size();
    for (std::size_t i = 0; i < n; i++) s += x[i];
    (*out->values)[0] = s;
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an](Node& o) {
            double g = (*o.grad)[0];
            double* ga = an->grad_data();
            std::size_t m = an->size();
            for (std::size_t i = 0; i < m; i++) ga[i] += g;
        };
    }
    return wrap_node(std::move(out));
}

Tensor mean(const Tensor& a) { return sum(a) * (1.0 / static_cast<double>(a.size())); }

Tensor sum(const Tensor& ta, const std::vector<int>& axes, bool keepdims) {
    const auto& a = node_of(ta);
    int rank = static_cast<int>(a->shape.size());
    std::vector<bool> reduce(rank, false);
    for (int ax : axes) {
        if (ax < 0) ax += rank;
        if (ax < 0 || ax >= rank) throw ShapeMismatchError("sum axis out of range");
        reduce[ax] = true;
    }
    Shape out_shape;
    for (int i = 0; i < rank; i++) {
        if (!reduce[i]) out_shape.push_back(a->shape[i]);
        else if (keepdims) out_shape.push_back(1);
    }
    if (out_shape.empty()) out_shape = {1};

    auto out = detail::make_node(out_shape, {a});
    // Strides of the output viewed at input rank, 0 on reduced axes.
    Shape keep_shape(a->shape);
    for (int i = 0; i < rank; i++)
        if (reduce[i]) keep_shape[i] = 1;
    auto ostr = bcast_strides(keep_shape, a->shape);
    auto istr = contiguous_strides(a->shape);
    const double* x = a->data();
    double* y = out->values->data();
    std::fill(y, y + out->size(), 0.0);
    for_each_pair(a->shape, istr, ostr,
                  [&](std::size_t, std::size_t ii, std::size_t oi) { y[oi] += x[ii]; });

    if (out->requires_grad) {
        Node* an = a.get();
        Shape ashape = a->shape;
        out->backward_fn = [an, ashape, ostr, istr](Node& o) {
            const double* g = o.grad->data();
            double* ga = an->grad_data();
            for_each_pair(ashape, istr, ostr,
                          [&](std::size_t, std::size_t ii, std::size_t oi) { ga[ii] += g[oi]; });
        };
    }
    return wrap_node(std::move(out));
}

Tensor cumsum(const Tensor& ta, int axis) {
    const auto& a = node_of(ta);
    int rank = static_cast<int>(a->shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeMismatchError("cumsum axis out of range");
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; i++) outer *= static_cast<std::size_t>(a->shape[i]);
    for (int i = axis + 1; i < rank; i++) inner *= static_cast<std::size_t>(a->shape[i]);
    std::size_t n = static_cast<std::size_t>(a->shape[axis]);

    auto out = detail::make_node(a->shape, {a});
    const double* x = a->data();
    double* y = out->values->data();
    for (std::size_t o = 0; o < outer; o++) {
        for (std::size_t in = 0; in < inner; in++) {
            std::size_t base = o * n * inner + in;
            double run = 0.0;
            for (std::size_t j = 0; j < n; j++) {
                run += x[base + j * inner];
                y[base + j * inner] = run;
            }
        }
    }
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an, outer, inner, n](Node& o) {
            const double* g = o.grad->data();
            double* ga = an->grad_data();
            for (std::size_t ot = 0; ot < outer; ot++) {
                for (std::size_t in = 0; in < inner; in++) {
                    std::size_t base = ot * n * inner + in;
                    double run = 0.0;
                    for (std::size_t j = n; j-- > 0;) {
                        run += g[base + j * inner];
                        ga[base + j * inner] += run;
                    }
                }
            }
        };
    }
    return wrap_node(std::move(out));
}

// ---------------------------------------------------------------------------
// shape ops

Tensor reshape(const Tensor& ta, Shape shape) {
    const auto& a = node_of(ta);
    if (numel(shape) != a->size()) {
        throw ShapeMismatchError("reshape " + shape_str(a->shape) + " -> " + shape_str(shape));
    }
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->values = a->values;  // same layout, shared storage
    out->inputs = {a};
    out->requires_grad = a->requires_grad;
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an](Node& o) {
            const double* g = o.grad->data();
            double* ga = an->grad_data();
            std::size_t n = o.size();
            for (std::size_t i = 0; i < n; i++) ga[i] += g[i];
        };
    }
    return wrap_node(std::move(out));
}

Tensor upsample_nearest2(const Tensor& ta, int factor) {
    const auto& a = node_of(ta);
    int rank = static_cast<int>(a->shape.size());
    if (rank != 3 && rank != 4) throw ShapeMismatchError("upsample expects [C,H,W] or [B,C,H,W]");
    if (factor < 1) throw ShapeMismatchError("upsample factor must be >= 1");
    Shape out_shape = a->shape;
    out_shape[rank - 2] *= factor;
    out_shape[rank - 1] *= factor;
    std::size_t planes = 1;
    for (int i = 0; i < rank - 2; i++) planes *= static_cast<std::size_t>(a->shape[i]);
    std::size_t h = static_cast<std::size_t>(a->shape[rank - 2]);
    std::size_t w = static_cast<std::size_t>(a->shape[rank - 1]);
    std::size_t f = static_cast<std::size_t>(factor);

    auto out = detail::make_node(out_shape, {a});
    const double* x = a->data();
    double* y = out->values->data();
    for (std::size_t p = 0; p < planes; p++) {
        const double* xin = x + p * h * w;
        double* yout = y + p * h * f * w * f;
        for (std::size_t oy = 0; oy < h * f; oy++) {
            for (std::size_t ox = 0; ox < w * f; ox++) {
                yout[oy * w * f + ox] = xin[(oy / f) * w + ox / f];
            }
        }
    }
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an, planes, h, w, f](Node& o) {
            const double* g = o.grad->data();
            double* ga = an->grad_data();
            for (std::size_t p = 0; p < planes; p++) {
                const double* gin = g + p * h * f * w * f;
                double* gout = ga + p * h * w;
                for (std::size_t oy = 0; oy < h * f; oy++) {
                    for (std::size_t ox = 0; ox < w * f; ox++) {
                        gout[(oy / f) * w + ox / f] += gin[oy * w * f + ox];
                    }
                }
            }
        };
    }
    return wrap_node(std::move(out));
}

Tensor avgpool2(const Tensor& ta) {
    const auto& a = node_of(ta);
    int rank = static_cast<int>(a->shape.size());
    if (rank != 3 && rank != 4) throw ShapeMismatchError("avgpool2 expects [C,H,W] or [B,C,H,W]");
    std::size_t h = static_cast<std::size_t>(a->shape[rank - 2]);
    std::size_t w = static_cast<std::size_t>(a->shape[rank - 1]);
    if (h % 2 || w % 2) throw ShapeMismatchError("avgpool2 needs even spatial dims");
    Shape out_shape = a->shape;
    out_shape[rank - 2] = static_cast<int>(h / 2);
    out_shape[rank - 1] = static_cast<int>(w / 2);
    std::size_t planes = 1;
    for (int i = 0; i < rank - 2; i++) planes *= static_cast<std::size_t>(a->shape[i]);

    auto out = detail::make_node(out_shape, {a});
    const double* x = a->data();
    double* y = out->values->data();
    for (std::size_t p = 0; p < planes; p++) {
        const double* xin = x + p * h * w;
        double* yout = y + p * (h / 2) * (w / 2);
        for (std::size_t oy = 0; oy < h / 2; oy++) {
            for (std::size_t ox = 0; ox < w / 2; ox++) {
                yout[oy * (w / 2) + ox] =
                    0.25 * (xin[(2 * oy) * w + 2 * ox] + xin[(2 * oy) * w + 2 * ox + 1] +
                            xin[(2 * oy + 1) * w + 2 * ox] + xin[(2 * oy + 1) * w + 2 * ox + 1]);
            }
        }
    }
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an, planes, h, w](Node& o) {
            const double* g = o.grad->data();
            double* ga = an->grad_data();
            for (std::size_t p = 0; p < planes; p++) {
                const double* gin = g + p * (h / 2) * (w / 2);
                double* gout = ga + p * h * w;
                for (std::size_t oy = 0; oy < h / 2; oy++) {
                    for (std::size_t ox = 0; ox < w / 2; ox++) {
                        double q = 0.25 * gin[oy * (w / 2) + ox];
                        gout[(2 * oy) * w + 2 * ox] += q;
                        gout[(2 * oy) * w + 2 * ox + 1] += q;
                        gout[(2 * oy + 1) * w + 2 * ox] += q;
                        gout[(2 * oy + 1) * w + 2 * ox + 1] += q;
                    }
                }
            }
        };
    }
    return wrap_node(std::move(out));
}

Tensor select0(const Tensor& ta, int index) {
    const auto& a = node_of(ta);
    if (a->shape.empty()) throw ShapeMismatchError("select0 needs rank >= 1");
    int d0 = a->shape[0];
    if (index < 0 || index >= d0) throw ShapeMismatchError("select0 index out of range");
    Shape out_shape(a->shape.begin() + 1, a->shape.end());
    if (out_shape.empty()) out_shape = {1};
    std::size_t item = numel(out_shape);

    auto out = detail::make_node(out_shape, {a});
    const double* x = a->data() + static_cast<std::size_t>(index) * item;
    std::copy(x, x + item, out->values->data());
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an, index, item](Node& o) {
            const double* g = o.grad->data();
            double* ga = an->grad_data() + static_cast<std::size_t>(index) * item;
            for (std::size_t i = 0; i < item; i++) ga[i] += g[i];
        };
    }
    return wrap_node(std::move(out));
}

Tensor stack0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatchError("stack0 of nothing");
    const Shape& s = parts[0].shape();
    for (const auto& p : parts) {
        if (p.shape() != s) throw ShapeMismatchError("stack0 parts must share one shape");
    }
    Shape out_shape;
    out_shape.push_back(static_cast<int>(parts.size()));
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    std::size_t item = numel(s);

    std::vector<std::shared_ptr<Node>> inputs;
    for (const auto& p : parts) inputs.push_back(unwrap_node(p));
    auto out = detail::make_node(out_shape, std::move(inputs));
    for (std::size_t i = 0; i < parts.size(); i++) {
        const double* x = unwrap_node(parts[i])->data();
        std::copy(x, x + item, out->values->data() + i * item);
    }
    if (out->requires_grad) {
        std::vector<Node*> ins;
        for (const auto& p : parts) ins.push_back(unwrap_node(p).get());
        out->backward_fn = [ins, item](Node& o) {
            const double* g = o.grad->data();
            for (std::size_t i = 0; i < ins.size(); i++) {
                if (!ins[i]->requires_grad) continue;
                double* ga = ins[i]->grad_data();
                const double* gi = g + i * item;
                for (std::size_t j = 0; j < item; j++) ga[j] += gi[j];
            }
        };
    }
    return wrap_node(std::move(out));
}

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& loss) {
    const auto& root = node_of(loss);
    if (root->size() != 1) {
        throw NotScalarError("backward() needs a scalar loss, got " + shape_str(root->shape));
    }
    if (root->consumed) {
        throw GraphConsumedError("backward() already ran for this graph; run a new forward pass");
    }
    root->consumed = true;

    // Reverse topological order over the requires_grad subgraph.
    std::vector<Node*> order;
    if (root->requires_grad) {
        std::vector<std::pair<Node*, std::size_t>> stack;
        std::unordered_set<Node*> visited;
        stack.emplace_back(root.get(), 0);
        visited.insert(root.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            bool descended = false;
            while (next < node->inputs.size()) {
                Node* in = node->inputs[next++].get();
                if (in->requires_grad && !visited.count(in)) {
                    visited.insert(in);
                    stack.emplace_back(in, 0);
                    descended = true;
                    break;
                }
            }
            if (!descended && (stack.back().second >= stack.back().first->inputs.size())) {
                order.push_back(stack.back().first);
                stack.pop_back();
            }
        }
    }

    root->ensure_grad();
    (*root->grad)[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        node->ensure_grad();
        if (node->backward_fn) node->backward_fn(*node);
    }
    for (Node* node : order) node->ensure_grad();
}

}  // namespace hdrdistill
