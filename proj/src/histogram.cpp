#include "hdrdistill/histogram.hpp"

#include <cmath>

#include "autodiff_node.hpp"

namespace hdrdistill {

void HistogramSpec::validate() const {
    if (n_bins < 2) throw DomainError("histogram needs at least 2 bins");
    if (!(max > min)) throw DomainError("histogram range must satisfy max > min");
    if (!(sigma > 0.0)) throw DomainError("histogram bandwidth must be positive");
}

std::vector<double> bin_centers(const HistogramSpec& spec) {
    spec.validate();
    std::vector<double> c(spec.n_bins);
    double delta = (spec.max - spec.min) / spec.n_bins;
    for (int i = 0; i < spec.n_bins; i++) c[i] = spec.min + delta * (i + 0.5);
    return c;
}

double gaussian_kernel(double x, double c, double sigma) {
    double d = (x - c) / sigma;
    return std::exp(-d * d);
}

namespace {

// Evaluating exp per (pixel, bin) dominates the loss, so kernel values are
// produced by a multiplicative recurrence along the bin axis, anchored at the
// pixel's own bin: K_{i+1} = K_i * m, with m itself decaying by a constant
// factor per step. Three exp calls per pixel instead of n_bins. The recurrence
// is only safe while no true kernel value underflows; for narrow bandwidths we
// fall back to direct evaluation with an underflow cutoff.
struct KernelGrid {
    int n;
    double lo, hi;
    double c0, delta, inv_s2, decay;
    bool smooth;

    explicit KernelGrid(const HistogramSpec& spec) {
        spec.validate();
        n = spec.n_bins;
        lo = spec.min;
        hi = spec.max;
        delta = (hi - lo) / n;
        c0 = lo + 0.5 * delta;
        inv_s2 = 1.0 / (spec.sigma * spec.sigma);
        decay = std::exp(-2.0 * delta * delta * inv_s2);
        double span = (hi - lo) + delta;
        smooth = span * span * inv_s2 <= 600.0;
    }

    template <class F>
    void visit(double x, F&& fn) const {
        x = std::min(hi, std::max(lo, x));
        int a = static_cast<int>(std::floor((x - lo) / delta));
        a = std::min(n - 1, std::max(0, a));
        double ca = c0 + a * delta;
        if (smooth) {
            double ka = std::exp(-(x - ca) * (x - ca) * inv_s2);
            fn(a, ka);
            double k = ka;
            double m = std::exp((2.0 * (x - ca) * delta - delta * delta) * inv_s2);
            for (int i = a + 1; i < n; i++) {
                k *= m;
                m *= decay;
                fn(i, k);
            }
            k = ka;
            m = std::exp((-2.0 * (x - ca) * delta - delta * delta) * inv_s2);
            for (int i = a - 1; i >= 0; i--) {
                k *= m;
                m *= decay;
                fn(i, k);
            }
        } else {
            for (int i = a; i < n; i++) {
                double dd = x - (c0 + i * delta);
                double e = -dd * dd * inv_s2;
                if (e < -745.0) break;
                fn(i, std::exp(e));
            }
            for (int i = a - 1; i >= 0; i--) {
                double dd = x - (c0 + i * delta);
                double e = -dd * dd * inv_s2;
                if (e < -745.0) break;
                fn(i, std::exp(e));
            }
        }
    }
};

constexpr double kNormEps = 1e-12;

}  // namespace

Tensor soft_histogram_raw(const Tensor& img, const std::vector<std::uint8_t>* mask,
                          const HistogramSpec& spec) {
    const auto& in = unwrap_node(img);
    if (in->shape.size() != 3) {
        throw ShapeMismatchError("soft_histogram expects [C,H,W], got " + shape_str(in->shape));
    }
    const int c = in->shape[0];
    const std::size_t hw = static_cast<std::size_t>(in->shape[1]) * in->shape[2];
    if (mask) {
        if (mask->size() != hw) throw ShapeMismatchError("mask size does not match image plane");
        std::size_t selected = 0;
        for (std::uint8_t m : *mask) selected += m ? 1 : 0;
        if (selected == 0) throw EmptyRegionError("mask selects no pixels");
    }
    KernelGrid grid(spec);

    auto out = detail::make_node(Shape{c, spec.n_bins}, {in});
    const double* x = in->data();
    double* h = out->values->data();
    std::fill(h, h + out->size(), 0.0);
    for (int ch = 0; ch < c; ch++) {
        const double* plane = x + ch * hw;
        double* row = h + static_cast<std::size_t>(ch) * grid.n;
        for (std::size_t j = 0; j < hw; j++) {
            if (mask && !(*mask)[j]) continue;
            grid.visit(plane[j], [&](int i, double k) { row[i] += k; });
        }
    }

    if (out->requires_grad) {
        detail::Node* an = in.get();
        std::vector<std::uint8_t> mask_copy = mask ? *mask : std::vector<std::uint8_t>();
        bool masked = mask != nullptr;
        out->backward_fn = [an, grid, mask_copy, masked, c, hw](detail::Node& o) {
            const double* g = o.grad->data();
            const double* x2 = an->data();
            double* gx = an->grad_data();
            for (int ch = 0; ch < c; ch++) {
                const double* plane = x2 + ch * hw;
                const double* grow = g + static_cast<std::size_t>(ch) * grid.n;
                double* gplane = gx + ch * hw;
                for (std::size_t j = 0; j < hw; j++) {
                    if (masked && !mask_copy[j]) continue;
                    double xj = plane[j];
                    if (xj < grid.lo || xj > grid.hi) continue;  // clamped: zero slope
                    double acc = 0.0;
                    grid.visit(xj, [&](int i, double k) {
                        acc += grow[i] * k * 2.0 * ((grid.c0 + i * grid.delta) - xj) * grid.inv_s2;
                    });
                    gplane[j] += acc;
                }
            }
        };
    }
    return wrap_node(std::move(out));
}

SoftHistogram soft_histogram(const Tensor& img, const std::vector<std::uint8_t>* mask,
                             const HistogramSpec& spec) {
    Tensor raw = soft_histogram_raw(clamp(img, spec.min, spec.max), mask, spec);
    Tensor denom = sum(raw, {1}, true) + kNormEps;
    Tensor h = raw / denom;
    return SoftHistogram{h, cumsum(h, 1)};
}

SoftHistogram cdf(const Tensor& normalized_hist) {
    if (normalized_hist.ndim() != 2) {
        throw ShapeMismatchError("cdf expects a [C,n_bins] histogram");
    }
    return SoftHistogram{normalized_hist, cumsum(normalized_hist, 1)};
}

Tensor histogram_loss(const Tensor& a, const Tensor& b, const HistogramSpec& spec,
                      const std::vector<std::uint8_t>* mask, MaskedHistogramMode mode) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatchError("histogram_loss shapes " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    }
    Tensor teacher = b.detach();
    Tensor sa = a, sb = teacher;
    const std::vector<std::uint8_t>* use_mask = mask;
    if (mask && mode == MaskedHistogramMode::ZeroFilledProduct) {
        std::vector<double> mv(mask->size());
        for (std::size_t i = 0; i < mv.size(); i++) mv[i] = (*mask)[i] ? 1.0 : 0.0;
        Tensor mask_tensor = Tensor::constant({1, a.dim(1), a.dim(2)}, std::move(mv));
        sa = a * mask_tensor;
        sb = teacher * mask_tensor;
        use_mask = nullptr;
    }
    SoftHistogram ha = soft_histogram(sa, use_mask, spec);
    SoftHistogram hb = soft_histogram(sb, use_mask, spec);
    double inv_c = 1.0 / a.dim(0);
    return sum(square(ha.cdf - hb.cdf)) * inv_c;
}

Tensor semantic_histogram_loss(const Tensor& student, const Tensor& teacher, const Tensor& masks,
                               const HistogramSpec& spec, MaskedHistogramMode mode) {
    if (student.shape() != teacher.shape()) {
        throw ShapeMismatchError("semantic_histogram_loss image shapes differ");
    }
    if (masks.ndim() != 3 || masks.dim(1) != student.dim(1) || masks.dim(2) != student.dim(2)) {
        throw ShapeMismatchError("masks must be [K,H,W] matching the images");
    }
    const int k = masks.dim(0);
    const std::size_t hw = static_cast<std::size_t>(masks.dim(1)) * masks.dim(2);
    const auto& mnode = unwrap_node(masks);
    const double* mv = mnode->data();

    Tensor total;
    int valid = 0;
    std::vector<std::uint8_t> plane(hw);
    for (int i = 0; i < k; i++) {
        const double* src = mv + i * hw;
        std::size_t count = 0;
        for (std::size_t j = 0; j < hw; j++) {
            if (src[j] != 0.0 && src[j] != 1.0) {
                throw DomainError("instance masks must be binary");
            }
            plane[j] = src[j] == 1.0 ? 1 : 0;
            count += plane[j];
        }
        if (count == 0) continue;
        Tensor term = histogram_loss(student, teacher, spec, &plane, mode);
        total = valid == 0 ? term : total + term;
        valid++;
    }
    if (valid == 0) throw NoValidMasksError("every instance mask is empty");
    return total * (1.0 / valid);
}

}  // namespace hdrdistill
