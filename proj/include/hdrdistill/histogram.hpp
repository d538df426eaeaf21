#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

struct EmptyRegionError : std::runtime_error {
    explicit EmptyRegionError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NoValidMasksError : std::runtime_error {
    explicit NoValidMasksError(const std::string& msg) : std::runtime_error(msg) {}
};

struct HistogramSpec {
    int n_bins = 256;
    double min = 0.0;
    double max = 255.0;
    double sigma = 400.0;

    void validate() const;
};

// How a region mask enters the histogram: restrict the kernel sum to in-mask
// pixels, or histogram the zero-filled product mask*image verbatim.
enum class MaskedHistogramMode { InMaskOnly, ZeroFilledProduct };

// Per-channel kernel histogram and its prefix-sum CDF, both differentiable
// w.r.t. the source image. Shapes are [C, n_bins].
struct SoftHistogram {
    Tensor hist;
    Tensor cdf;
};

std::vector<double> bin_centers(const HistogramSpec& spec);

// K(x, c) = exp(-(x - c)^2 / sigma^2).
double gaussian_kernel(double x, double c, double sigma);

// Unnormalized kernel mass per bin, [C, n_bins]. The optional mask is one
// plane of H*W flags broadcast over channels. Values are clamped into
// [spec.min, spec.max] before binning.
Tensor soft_histogram_raw(const Tensor& img, const std::vector<std::uint8_t>* mask,
                          const HistogramSpec& spec);

// Normalized histogram (each channel sums to 1, up to the 1e-12 stabilizer)
// plus its CDF.
SoftHistogram soft_histogram(const Tensor& img, const std::vector<std::uint8_t>* mask,
                             const HistogramSpec& spec);

SoftHistogram cdf(const Tensor& normalized_hist);

// (1/C) * sum_c sum_k (CDF^S - CDF^T)^2. The b side is treated as a constant:
// distillation never backpropagates into the teacher.
Tensor histogram_loss(const Tensor& a, const Tensor& b, const HistogramSpec& spec,
                      const std::vector<std::uint8_t>* mask = nullptr,
                      MaskedHistogramMode mode = MaskedHistogramMode::InMaskOnly);

// Mean of the per-region histogram losses over the non-empty masks.
// masks is [K,H,W] with {0,1} entries; all-zero masks are skipped.
Tensor semantic_histogram_loss(const Tensor& student, const Tensor& teacher, const Tensor& masks,
                               const HistogramSpec& spec,
                               MaskedHistogramMode mode = MaskedHistogramMode::InMaskOnly);

}  // namespace hdrdistill
