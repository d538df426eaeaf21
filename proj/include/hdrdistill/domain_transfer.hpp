#pragma once

#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

enum class PixelFormat { SrgbLinear, RawBayer };
enum class BayerPattern { RGGB, BGGR, GRBG, GBRG };

// Linear radiance in [0,1]. RAW-Bayer images are single-channel mosaics with
// even spatial dims.
struct HdrImage {
    Tensor data;  // [C,H,W]
    PixelFormat format = PixelFormat::SrgbLinear;
    BayerPattern pattern = BayerPattern::RGGB;
};

struct TonemapParams {
    double mu = 5000.0;
};

// T(x) = ln(1 + mu*x) / ln(1 + mu), elementwise. Input must sit in [0,1]
// (up to 1e-9 slack).
Tensor mu_law(const Tensor& x, const TonemapParams& p);
inline Tensor mu_law(const HdrImage& x, const TonemapParams& p) { return mu_law(x.data, p); }

// Inverse map ((1+mu)^y - 1) / mu on [0,1].
Tensor mu_law_inverse(const Tensor& y, const TonemapParams& p);

// Fills each missing color sample with the mean of the same-color samples in
// the 3x3 neighborhood. Linear in the input; output clamped to [0,1].
Tensor demosaic_bilinear(const Tensor& mosaic, BayerPattern pattern);
inline Tensor demosaic_bilinear(const HdrImage& x) {
    return demosaic_bilinear(x.data, x.pattern);
}

// The full transfer into the tonemapped sRGB domain: mu-law for sRGB-linear
// inputs, demosaic then mu-law for RAW.
Tensor domain_transfer(const HdrImage& x, const TonemapParams& p);

}  // namespace hdrdistill
