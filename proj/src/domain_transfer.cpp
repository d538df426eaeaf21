#include "hdrdistill/domain_transfer.hpp"

#include <cmath>

#include "autodiff_node.hpp"

namespace hdrdistill {

namespace {

constexpr double kRangeSlack = 1e-9;

void check_unit_range(const Tensor& t, const char* what) {
    for (double v : t.values()) {
        if (v < -kRangeSlack || v > 1.0 + kRangeSlack) {
            throw DomainError(std::string(what) + " value " + std::to_string(v) +
                              " outside [0,1]");
        }
    }
}

// Color of a Bayer site. 0 = R, 1 = G, 2 = B.
int site_color(BayerPattern p, int y, int x) {
    int yy = y & 1, xx = x & 1;
    switch (p) {
        case BayerPattern::RGGB: return yy == 0 ? (xx == 0 ? 0 : 1) : (xx == 0 ? 1 : 2);
        case BayerPattern::BGGR: return yy == 0 ? (xx == 0 ? 2 : 1) : (xx == 0 ? 1 : 0);
        case BayerPattern::GRBG: return yy == 0 ? (xx == 0 ? 1 : 0) : (xx == 0 ? 2 : 1);
        default: return yy == 0 ? (xx == 0 ? 1 : 2) : (xx == 0 ? 0 : 1);
    }
}

}  // namespace

Tensor mu_law(const Tensor& x, const TonemapParams& p) {
    if (!(p.mu > 0.0)) throw DomainError("mu must be positive");
    check_unit_range(x, "mu_law input");
    double inv_log = 1.0 / std::log1p(p.mu);
    return log(affine(x, p.mu, 1.0)) * inv_log;
}

Tensor mu_law_inverse(const Tensor& y, const TonemapParams& p) {
    if (!(p.mu > 0.0)) throw DomainError("mu must be positive");
    check_unit_range(y, "mu_law_inverse input");
    double log1p_mu = std::log1p(p.mu);
    return affine(exp(affine(y, log1p_mu, 0.0)), 1.0 / p.mu, -1.0 / p.mu);
}

namespace {

// The pure averaging stencil; linear, so its Jacobian is constant.
Tensor demosaic_stencil(const Tensor& mosaic, BayerPattern pattern) {
    const auto& in = unwrap_node(mosaic);
    if (in->shape.size() != 3 || in->shape[0] != 1) {
        throw ShapeMismatchError("demosaic expects a [1,H,W] mosaic, got " +
                                 shape_str(in->shape));
    }
    int h = in->shape[1], w = in->shape[2];
    if (h % 2 || w % 2) throw ShapeMismatchError("demosaic needs even spatial dims");

    auto out = detail::make_node(Shape{3, h, w}, {in});
    const double* x = in->data();
    double* y = out->values->data();
    auto stencil = [pattern, h, w](int ch, int py, int px, auto&& visit) {
        for (int dy = -1; dy <= 1; dy++) {
            for (int dx = -1; dx <= 1; dx++) {
                int qy = py + dy, qx = px + dx;
                if (qy < 0 || qy >= h || qx < 0 || qx >= w) continue;
                if (site_color(pattern, qy, qx) == ch) visit(qy * w + qx);
            }
        }
    };
    for (int ch = 0; ch < 3; ch++) {
        for (int py = 0; py < h; py++) {
            for (int px = 0; px < w; px++) {
                double acc = 0.0;
                int cnt = 0;
                stencil(ch, py, px, [&](int q) {
                    acc += x[q];
                    cnt++;
                });
                y[(static_cast<std::size_t>(ch) * h + py) * w + px] = acc / cnt;
            }
        }
    }
    if (out->requires_grad) {
        detail::Node* an = in.get();
        out->backward_fn = [an, h, w, stencil](detail::Node& o) {
            const double* g = o.grad->data();
            double* ga = an->grad_data();
            for (int ch = 0; ch < 3; ch++) {
                for (int py = 0; py < h; py++) {
                    for (int px = 0; px < w; px++) {
                        int cnt = 0;
                        stencil(ch, py, px, [&](int) { cnt++; });
                        double gv = g[(static_cast<std::size_t>(ch) * h + py) * w + px] / cnt;
                        stencil(ch, py, px, [&](int q) { ga[q] += gv; });
                    }
                }
            }
        };
    }
    return wrap_node(std::move(out));
}

}  // namespace

Tensor demosaic_bilinear(const Tensor& mosaic, BayerPattern pattern) {
    // Averages of in-range samples stay in range; the clamp only guards
    // out-of-contract inputs.
    return clamp(demosaic_stencil(mosaic, pattern), 0.0, 1.0);
}

Tensor domain_transfer(const HdrImage& x, const TonemapParams& p) {
    if (x.format == PixelFormat::RawBayer) {
        if (x.data.ndim() == 4) {
            std::vector<Tensor> parts;
            for (int b = 0; b < x.data.dim(0); b++) {
                parts.push_back(demosaic_bilinear(select0(x.data, b), x.pattern));
            }
            return mu_law(stack0(parts), p);
        }
        return mu_law(demosaic_bilinear(x.data, x.pattern), p);
    }
    if (x.data.ndim() != 3 && x.data.ndim() != 4) {
        throw ShapeMismatchError("domain_transfer expects [C,H,W] or [B,C,H,W], got " +
                                 shape_str(x.data.shape()));
    }
    return mu_law(x.data, p);
}

}  // namespace hdrdistill
