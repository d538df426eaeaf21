#include <algorithm>
#include <cstring>

#include <Eigen/Dense>

#include "autodiff_node.hpp"
#include "gemm.hpp"
#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

namespace detail {

namespace {

using MapRM = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMapRM = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    CMapRM A(a, m, k);
    CMapRM B(b, k, n);
    MapRM C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    CMapRM A(a, m, k);
    CMapRM B(b, n, k);
    MapRM C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    CMapRM A(a, k, m);
    CMapRM B(b, k, n);
    MapRM C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

}  // namespace detail

using detail::Node;

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& ta, const Tensor& tb) {
    const auto& a = unwrap_node(ta);
    const auto& b = unwrap_node(tb);
    int ra = static_cast<int>(a->shape.size());
    int rb = static_cast<int>(b->shape.size());
    if (ra < 2 || rb < 2 || ra != rb) {
        throw ShapeMismatchError("matmul ranks " + shape_str(a->shape) + " x " +
                                 shape_str(b->shape));
    }
    for (int i = 0; i < ra - 2; i++) {
        if (a->shape[i] != b->shape[i]) {
            throw ShapeMismatchError("matmul batch dims differ: " + shape_str(a->shape) + " x " +
                                     shape_str(b->shape));
        }
    }
    int m = a->shape[ra - 2], k = a->shape[ra - 1];
    int k2 = b->shape[rb - 2], n = b->shape[rb - 1];
    if (k != k2) {
        throw ShapeMismatchError("matmul inner dims: " + shape_str(a->shape) + " x " +
                                 shape_str(b->shape));
    }
    std::size_t batch = 1;
    for (int i = 0; i < ra - 2; i++) batch *= static_cast<std::size_t>(a->shape[i]);
    Shape out_shape(a->shape);
    out_shape[ra - 1] = n;

    auto out = detail::make_node(out_shape, {a, b});
    for (std::size_t bt = 0; bt < batch; bt++) {
        detail::gemm_nn(a->data() + bt * static_cast<std::size_t>(m) * k,
                        b->data() + bt * static_cast<std::size_t>(k) * n,
                        out->values->data() + bt * static_cast<std::size_t>(m) * n, m, k, n,
                        false);
    }
    if (out->requires_grad) {
        Node* an = a.get();
        Node* bn = b.get();
        out->backward_fn = [an, bn, batch, m, k, n](Node& o) {
            for (std::size_t bt = 0; bt < batch; bt++) {
                const double* g = o.grad->data() + bt * static_cast<std::size_t>(m) * n;
                if (an->requires_grad) {
                    detail::gemm_nt(g, bn->data() + bt * static_cast<std::size_t>(k) * n,
                                    an->grad_data() + bt * static_cast<std::size_t>(m) * k, m, n,
                                    k, true);
                }
                if (bn->requires_grad) {
                    detail::gemm_tn(an->data() + bt * static_cast<std::size_t>(m) * k, g,
                                    bn->grad_data() + bt * static_cast<std::size_t>(k) * n, k, m,
                                    n, true);
                }
            }
        };
    }
    return wrap_node(std::move(out));
}

Tensor transpose_last2(const Tensor& ta) {
    const auto& a = unwrap_node(ta);
    int rank = static_cast<int>(a->shape.size());
    if (rank < 2) throw ShapeMismatchError("transpose needs rank >= 2");
    int m = a->shape[rank - 2], n = a->shape[rank - 1];
    std::size_t batch = 1;
    for (int i = 0; i < rank - 2; i++) batch *= static_cast<std::size_t>(a->shape[i]);
    Shape out_shape(a->shape);
    std::swap(out_shape[rank - 2], out_shape[rank - 1]);

    auto out = detail::make_node(out_shape, {a});
    const double* x = a->data();
    double* y = out->values->data();
    for (std::size_t bt = 0; bt < batch; bt++) {
        const double* xb = x + bt * static_cast<std::size_t>(m) * n;
        double* yb = y + bt * static_cast<std::size_t>(m) * n;
        for (int i = 0; i < m; i++)
            for (int j = 0; j < n; j++)
                yb[static_cast<std::size_t>(j) * m + i] = xb[static_cast<std::size_t>(i) * n + j];
    }
    if (out->requires_grad) {
        Node* an = a.get();
        out->backward_fn = [an, batch, m, n](Node& o) {
            const double* g = o.grad->data();
            double* ga = an->grad_data();
            for (std::size_t bt = 0; bt < batch; bt++) {
                const double* gb = g + bt * static_cast<std::size_t>(m) * n;
                double* gab = ga + bt * static_cast<std::size_t>(m) * n;
                for (int j = 0; j < n; j++)
                    for (int i = 0; i < m; i++)
                        gab[static_cast<std::size_t>(i) * n + j] +=
                            gb[static_cast<std::size_t>(j) * m + i];
            }
        };
    }
    return wrap_node(std::move(out));
}

Tensor transpose2(const Tensor& ta) {
    if (ta.ndim() != 2) throw ShapeMismatchError("transpose2 expects a 2-D tensor");
    return transpose_last2(ta);
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvDims {
    int b, c, h, w;
    int o, cg, kh, kw;
    int oh, ow;
    int stride, pad, groups;
    bool batched_input;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int padding, int groups) {
    ConvDims d{};
    d.batched_input = xs.size() == 4;
    if (xs.size() != 3 && xs.size() != 4) {
        throw ShapeMismatchError("conv2d input must be [C,H,W] or [B,C,H,W], got " +
                                 shape_str(xs));
    }
    if (ws.size() != 4) throw ShapeMismatchError("conv2d weight must be [O,C/g,kh,kw]");
    d.b = d.batched_input ? xs[0] : 1;
    d.c = xs[xs.size() - 3];
    d.h = xs[xs.size() - 2];
    d.w = xs[xs.size() - 1];
    d.o = ws[0];
    d.cg = ws[1];
    d.kh = ws[2];
    d.kw = ws[3];
    d.stride = stride;
    d.pad = padding;
    d.groups = groups;
    if (d.kh % 2 == 0 || d.kw % 2 == 0) throw ShapeMismatchError("conv2d kernel sides must be odd");
    if (groups < 1 || d.c % groups || d.o % groups) {
        throw ShapeMismatchError("conv2d groups must divide channel counts");
    }
    if (d.cg != d.c / groups) {
        throw ShapeMismatchError("conv2d weight channels " + std::to_string(d.cg) +
                                 " != C/groups = " + std::to_string(d.c / groups));
    }
    if (stride < 1) throw ShapeMismatchError("conv2d stride must be >= 1");
    d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
    d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
    if (d.oh <= 0 || d.ow <= 0) throw ShapeMismatchError("conv2d output would be empty");
    return d;
}

thread_local std::vector<double> tl_col;
thread_local std::vector<double> tl_gcol;

// Patch matrix [cg*kh*kw, oh*ow] for one (item, group). Stride-1 rows are
// plain shifted copies of image rows.
void im2col(const double* x, const ConvDims& d, int group, double* col) {
    const int hw = d.h * d.w;
    const int ohw = d.oh * d.ow;
    for (int c = 0; c < d.cg; c++) {
        const double* xc = x + static_cast<std::size_t>(group * d.cg + c) * hw;
        for (int ky = 0; ky < d.kh; ky++) {
            for (int kx = 0; kx < d.kw; kx++) {
                double* row = col + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * ohw;
                if (d.stride == 1) {
                    const int dx = kx - d.pad;
                    const int lo = std::max(0, -dx);
                    const int hi = std::min(d.ow, d.w - dx);
                    for (int oy = 0; oy < d.oh; oy++) {
                        int iy = oy - d.pad + ky;
                        double* dst = row + static_cast<std::size_t>(oy) * d.ow;
                        if (iy < 0 || iy >= d.h || lo >= hi) {
                            std::fill(dst, dst + d.ow, 0.0);
                            continue;
                        }
                        if (lo > 0) std::fill(dst, dst + lo, 0.0);
                        std::memcpy(dst + lo, xc + static_cast<std::size_t>(iy) * d.w + lo + dx,
                                    static_cast<std::size_t>(hi - lo) * sizeof(double));
                        if (hi < d.ow) std::fill(dst + hi, dst + d.ow, 0.0);
                    }
                } else {
                    for (int oy = 0; oy < d.oh; oy++) {
                        int iy = oy * d.stride - d.pad + ky;
                        double* dst = row + static_cast<std::size_t>(oy) * d.ow;
                        if (iy < 0 || iy >= d.h) {
                            std::fill(dst, dst + d.ow, 0.0);
                            continue;
                        }
                        for (int ox = 0; ox < d.ow; ox++) {
                            int ix = ox * d.stride - d.pad + kx;
                            dst[ox] = (ix >= 0 && ix < d.w)
                                          ? xc[static_cast<std::size_t>(iy) * d.w + ix]
                                          : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvDims& d, int group, double* gx) {
    const int hw = d.h * d.w;
    const int ohw = d.oh * d.ow;
    for (int c = 0; c < d.cg; c++) {
        double* gc = gx + static_cast<std::size_t>(group * d.cg + c) * hw;
        for (int ky = 0; ky < d.kh; ky++) {
            for (int kx = 0; kx < d.kw; kx++) {
                const double* row =
                    col + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * ohw;
                if (d.stride == 1) {
                    const int dx = kx - d.pad;
                    const int lo = std::max(0, -dx);
                    const int hi = std::min(d.ow, d.w - dx);
                    for (int oy = 0; oy < d.oh; oy++) {
                        int iy = oy - d.pad + ky;
                        if (iy < 0 || iy >= d.h || lo >= hi) continue;
                        const double* src = row + static_cast<std::size_t>(oy) * d.ow;
                        double* dst = gc + static_cast<std::size_t>(iy) * d.w + dx;
                        for (int ox = lo; ox < hi; ox++) dst[ox] += src[ox];
                    }
                } else {
                    for (int oy = 0; oy < d.oh; oy++) {
                        int iy = oy * d.stride - d.pad + ky;
                        if (iy < 0 || iy >= d.h) continue;
                        const double* src = row + static_cast<std::size_t>(oy) * d.ow;
                        for (int ox = 0; ox < d.ow; ox++) {
                            int ix = ox * d.stride - d.pad + kx;
                            if (ix >= 0 && ix < d.w)
                                gc[static_cast<std::size_t>(iy) * d.w + ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

bool is_pointwise(const ConvDims& d) {
    return d.kh == 1 && d.kw == 1 && d.stride == 1 && d.pad == 0;
}

bool is_depthwise(const ConvDims& d) {
    return d.groups == d.c && d.o == d.c && d.cg == 1 && d.stride == 1;
}

void depthwise_forward(const double* x, const double* w, double* y, const ConvDims& d, int bi) {
    const int hw = d.h * d.w;
    const int ohw = d.oh * d.ow;
    for (int c = 0; c < d.c; c++) {
        const double* xc = x + (static_cast<std::size_t>(bi) * d.c + c) * hw;
        double* yc = y + (static_cast<std::size_t>(bi) * d.c + c) * ohw;
        std::fill(yc, yc + ohw, 0.0);
        const double* wc = w + static_cast<std::size_t>(c) * d.kh * d.kw;
        for (int ky = 0; ky < d.kh; ky++) {
            for (int kx = 0; kx < d.kw; kx++) {
                const double wv = wc[ky * d.kw + kx];
                const int dx = kx - d.pad;
                const int lo = std::max(0, -dx);
                const int hi = std::min(d.ow, d.w - dx);
                for (int oy = 0; oy < d.oh; oy++) {
                    int iy = oy - d.pad + ky;
                    if (iy < 0 || iy >= d.h || lo >= hi) continue;
                    const double* src = xc + static_cast<std::size_t>(iy) * d.w + dx;
                    double* dst = yc + static_cast<std::size_t>(oy) * d.ow;
                    for (int ox = lo; ox < hi; ox++) dst[ox] += wv * src[ox];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& tx, const Tensor& tw, const Tensor& tbias, int stride, int padding,
              int groups) {
    const auto& x = unwrap_node(tx);
    const auto& w = unwrap_node(tw);
    std::shared_ptr<Node> bias = tbias.defined() ? unwrap_node(tbias) : nullptr;
    ConvDims d = conv_dims(x->shape, w->shape, stride, padding, groups);
    if (bias && (bias->shape.size() != 1 || bias->shape[0] != d.o)) {
        throw ShapeMismatchError("conv2d bias must be [O]");
    }

    Shape out_shape = d.batched_input ? Shape{d.b, d.o, d.oh, d.ow} : Shape{d.o, d.oh, d.ow};
    std::vector<std::shared_ptr<Node>> inputs = {x, w};
    if (bias) inputs.push_back(bias);
    auto out = detail::make_node(out_shape, std::move(inputs));

    const std::size_t x_item = static_cast<std::size_t>(d.c) * d.h * d.w;
    const std::size_t o_item = static_cast<std::size_t>(d.o) * d.oh * d.ow;
    const int ohw = d.oh * d.ow;
    const int og = d.o / d.groups;
    const int patch = d.cg * d.kh * d.kw;
    const bool pointwise = is_pointwise(d);
    const bool depthwise = is_depthwise(d);

    {
        const double* xv = x->data();
        const double* wv = w->data();
        double* ov = out->values->data();
#pragma omp parallel for schedule(static)
        for (int bi = 0; bi < d.b; bi++) {
            if (depthwise) {
                depthwise_forward(xv, wv, ov, d, bi);
            } else if (pointwise) {
                for (int g = 0; g < d.groups; g++) {
                    detail::gemm_nn(wv + static_cast<std::size_t>(g) * og * patch,
                                    xv + bi * x_item + static_cast<std::size_t>(g) * d.cg * ohw,
                                    ov + bi * o_item + static_cast<std::size_t>(g) * og * ohw, og,
                                    patch, ohw, false);
                }
            } else {
                tl_col.resize(static_cast<std::size_t>(patch) * ohw);
                for (int g = 0; g < d.groups; g++) {
                    im2col(xv + bi * x_item, d, g, tl_col.data());
                    detail::gemm_nn(wv + static_cast<std::size_t>(g) * og * patch, tl_col.data(),
                                    ov + bi * o_item + static_cast<std::size_t>(g) * og * ohw, og,
                                    patch, ohw, false);
                }
            }
            if (bias) {
                const double* bv = bias->data();
                for (int o = 0; o < d.o; o++) {
                    double* dst = ov + bi * o_item + static_cast<std::size_t>(o) * ohw;
                    for (int p = 0; p < ohw; p++) dst[p] += bv[o];
                }
            }
        }
    }

    if (out->requires_grad) {
        Node* xn = x.get();
        Node* wn = w.get();
        Node* bn = bias.get();
        out->backward_fn = [xn, wn, bn, d, x_item, o_item, ohw, og, patch, pointwise,
                            depthwise](Node& o) {
            const double* g = o.grad->data();
            if (bn && bn->requires_grad) {
                double* gb = bn->grad_data();
                for (int bi = 0; bi < d.b; bi++) {
                    for (int oc = 0; oc < d.o; oc++) {
                        const double* src = g + bi * o_item + static_cast<std::size_t>(oc) * ohw;
                        double s = 0.0;
                        for (int p = 0; p < ohw; p++) s += src[p];
                        gb[oc] += s;
                    }
                }
            }
            if (wn->requires_grad) {
                double* gw = wn->grad_data();
                if (depthwise) {
                    // Channels own disjoint kernel slices, so they parallelize
                    // cleanly with the batch reduction kept in order inside.
                    const double* xv = xn->data();
#pragma omp parallel for schedule(static)
                    for (int c = 0; c < d.c; c++) {
                        double* gwc = gw + static_cast<std::size_t>(c) * d.kh * d.kw;
                        for (int bi = 0; bi < d.b; bi++) {
                            const double* xc =
                                xv + (static_cast<std::size_t>(bi) * d.c + c) * d.h * d.w;
                            const double* gc =
                                g + (static_cast<std::size_t>(bi) * d.c + c) * ohw;
                            for (int ky = 0; ky < d.kh; ky++) {
                                for (int kx = 0; kx < d.kw; kx++) {
                                    const int dx = kx - d.pad;
                                    const int lo = std::max(0, -dx);
                                    const int hi = std::min(d.ow, d.w - dx);
                                    double acc = 0.0;
                                    for (int oy = 0; oy < d.oh; oy++) {
                                        int iy = oy - d.pad + ky;
                                        if (iy < 0 || iy >= d.h || lo >= hi) continue;
                                        const double* src =
                                            xc + static_cast<std::size_t>(iy) * d.w + dx;
                                        const double* gr =
                                            gc + static_cast<std::size_t>(oy) * d.ow;
                                        for (int ox = lo; ox < hi; ox++) acc += gr[ox] * src[ox];
                                    }
                                    gwc[ky * d.kw + kx] += acc;
                                }
                            }
                        }
                    }
                } else {
                    // Per-item partials, reduced in batch order afterwards:
                    // parallel, and independent of the thread count.
                    const std::size_t wn_size = static_cast<std::size_t>(d.o) * patch;
                    std::vector<double> partials(static_cast<std::size_t>(d.b) * wn_size);
#pragma omp parallel for schedule(static)
                    for (int bi = 0; bi < d.b; bi++) {
                        double* slot = partials.data() + bi * wn_size;
                        if (pointwise) {
                            for (int grp = 0; grp < d.groups; grp++) {
                                detail::gemm_nt(
                                    g + bi * o_item + static_cast<std::size_t>(grp) * og * ohw,
                                    xn->data() + bi * x_item +
                                        static_cast<std::size_t>(grp) * d.cg * ohw,
                                    slot + static_cast<std::size_t>(grp) * og * patch, og, ohw,
                                    patch, false);
                            }
                        } else {
                            tl_col.resize(static_cast<std::size_t>(patch) * ohw);
                            for (int grp = 0; grp < d.groups; grp++) {
                                im2col(xn->data() + bi * x_item, d, grp, tl_col.data());
                                detail::gemm_nt(
                                    g + bi * o_item + static_cast<std::size_t>(grp) * og * ohw,
                                    tl_col.data(),
                                    slot + static_cast<std::size_t>(grp) * og * patch, og, ohw,
                                    patch, false);
                            }
                        }
                    }
                    for (int bi = 0; bi < d.b; bi++) {
                        const double* slot = partials.data() + bi * wn_size;
                        for (std::size_t i = 0; i < wn_size; i++) gw[i] += slot[i];
                    }
                }
            }
            if (xn->requires_grad) {
                double* gx = xn->grad_data();
                const double* wv = wn->data();
#pragma omp parallel for schedule(static)
                for (int bi = 0; bi < d.b; bi++) {
                    if (depthwise) {
                        // Transposed depthwise pass: scatter each output grad
                        // through its own 1-channel kernel.
                        for (int c = 0; c < d.c; c++) {
                            const double* gc =
                                g + (static_cast<std::size_t>(bi) * d.c + c) * ohw;
                            double* gxc =
                                gx + (static_cast<std::size_t>(bi) * d.c + c) * d.h * d.w;
                            const double* wc = wv + static_cast<std::size_t>(c) * d.kh * d.kw;
                            for (int ky = 0; ky < d.kh; ky++) {
                                for (int kx = 0; kx < d.kw; kx++) {
                                    const double wvv = wc[ky * d.kw + kx];
                                    const int dx = kx - d.pad;
                                    const int lo = std::max(0, -dx);
                                    const int hi = std::min(d.ow, d.w - dx);
                                    for (int oy = 0; oy < d.oh; oy++) {
                                        int iy = oy - d.pad + ky;
                                        if (iy < 0 || iy >= d.h || lo >= hi) continue;
                                        const double* src =
                                            gc + static_cast<std::size_t>(oy) * d.ow;
                                        double* dst =
                                            gxc + static_cast<std::size_t>(iy) * d.w + dx;
                                        for (int ox = lo; ox < hi; ox++)
                                            dst[ox] += wvv * src[ox];
                                    }
                                }
                            }
                        }
                    } else if (pointwise) {
                        for (int grp = 0; grp < d.groups; grp++) {
                            detail::gemm_tn(
                                wv + static_cast<std::size_t>(grp) * og * patch,
                                g + bi * o_item + static_cast<std::size_t>(grp) * og * ohw,
                                gx + bi * x_item + static_cast<std::size_t>(grp) * d.cg * ohw,
                                patch, og, ohw, true);
                        }
                    } else {
                        tl_gcol.resize(static_cast<std::size_t>(patch) * ohw);
                        for (int grp = 0; grp < d.groups; grp++) {
                            detail::gemm_tn(
                                wv + static_cast<std::size_t>(grp) * og * patch,
                                g + bi * o_item + static_cast<std::size_t>(grp) * og * ohw,
                                tl_gcol.data(), patch, og, ohw, false);
                            col2im_add(tl_gcol.data(), d, grp, gx + bi * x_item);
                        }
                    }
                }
            }
        };
    }
    return wrap_node(std::move(out));
}

}  // namespace hdrdistill
