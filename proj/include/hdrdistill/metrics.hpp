#pragma once

#include <string>
#include <vector>

#include "hdrdistill/domain_transfer.hpp"
#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

struct MetricsRecord {
    std::string sample_id;
    double psnr_l = 0.0;
    double psnr_mu = 0.0;
    double ssim = 0.0;
};

double mse_value(const Tensor& a, const Tensor& b);

// 10 log10(peak^2 / MSE), capped at 99 dB (the identical-inputs sentinel).
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// PSNR in the mu-law tonemapped domain; inputs are linear images in [0,1].
double psnr_mu(const Tensor& a, const Tensor& b, const TonemapParams& tonemap);

// Windowed SSIM: 11x11 Gaussian window, sigma 1.5, C1=(0.01)^2, C2=(0.03)^2,
// mean over valid windows and channels.
double ssim(const Tensor& a, const Tensor& b);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);

}  // namespace hdrdistill
