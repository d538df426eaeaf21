#include "hdrdistill/metrics.hpp"

#include <cmath>
#include <fstream>

#include "hdrdistill/raster_io.hpp"

namespace hdrdistill {

double mse_value(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatchError("mse shapes " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    }
    auto av = a.values();
    auto bv = b.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); i++) {
        double d = av[i] - bv[i];
        acc += d * d;
    }
    return acc / static_cast<double>(av.size());
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
    double m = mse_value(a, b);
    if (m == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(peak * peak / m));
}

double psnr_mu(const Tensor& a, const Tensor& b, const TonemapParams& tonemap) {
    return psnr(mu_law(a, tonemap), mu_law(b, tonemap));
}

double ssim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.ndim() != 3) {
        throw ShapeMismatchError("ssim expects matching [C,H,W] images");
    }
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;
    constexpr double kC2 = 0.03 * 0.03;
    if (h < kWin || w < kWin) throw ShapeMismatchError("ssim needs at least 11x11 images");

    double win[kWin];
    double norm = 0.0;
    for (int i = 0; i < kWin; i++) {
        double d = i - (kWin - 1) / 2.0;
        win[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        norm += win[i];
    }
    for (double& v : win) v /= norm;

    auto av = a.values();
    auto bv = b.values();
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const int oh = h - kWin + 1, ow = w - kWin + 1;

    // Separable window sums for x, y, x^2, y^2, xy per channel.
    double total = 0.0;
    std::vector<double> row(static_cast<std::size_t>(h) * ow);
    auto filter = [&](auto&& value_at, std::vector<double>& out) {
        for (int y = 0; y < h; y++) {
            for (int x = 0; x < ow; x++) {
                double acc = 0.0;
                for (int k = 0; k < kWin; k++) acc += win[k] * value_at(y, x + k);
                row[static_cast<std::size_t>(y) * ow + x] = acc;
            }
        }
        out.resize(static_cast<std::size_t>(oh) * ow);
        for (int y = 0; y < oh; y++) {
            for (int x = 0; x < ow; x++) {
                double acc = 0.0;
                for (int k = 0; k < kWin; k++) {
                    acc += win[k] * row[static_cast<std::size_t>(y + k) * ow + x];
                }
                out[static_cast<std::size_t>(y) * ow + x] = acc;
            }
        }
    };

    std::vector<double> mu_x, mu_y, xx, yy, xy;
    for (int ch = 0; ch < c; ch++) {
        const double* pa = av.data() + ch * hw;
        const double* pb = bv.data() + ch * hw;
        filter([&](int y, int x) { return pa[static_cast<std::size_t>(y) * w + x]; }, mu_x);
        filter([&](int y, int x) { return pb[static_cast<std::size_t>(y) * w + x]; }, mu_y);
        filter([&](int y, int x) {
            double v = pa[static_cast<std::size_t>(y) * w + x];
            return v * v;
        }, xx);
        filter([&](int y, int x) {
            double v = pb[static_cast<std::size_t>(y) * w + x];
            return v * v;
        }, yy);
        filter([&](int y, int x) {
            return pa[static_cast<std::size_t>(y) * w + x] *
                   pb[static_cast<std::size_t>(y) * w + x];
        }, xy);
        double acc = 0.0;
        for (std::size_t i = 0; i < mu_x.size(); i++) {
            double var_x = xx[i] - mu_x[i] * mu_x[i];
            double var_y = yy[i] - mu_y[i] * mu_y[i];
            double cov = xy[i] - mu_x[i] * mu_y[i];
            double num = (2.0 * mu_x[i] * mu_y[i] + kC1) * (2.0 * cov + kC2);
            double den = (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kC1) * (var_x + var_y + kC2);
            acc += num / den;
        }
        total += acc / static_cast<double>(mu_x.size());
    }
    return total / c;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "sample_id,psnr_l,psnr_mu,ssim\n";
    os.precision(17);
    for (const auto& r : records) {
        os << r.sample_id << "," << r.psnr_l << "," << r.psnr_mu << "," << r.ssim << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace hdrdistill
