#pragma once

#include <cstdint>
#include <vector>

#include "hdrdistill/domain_transfer.hpp"
#include "hdrdistill/histogram.hpp"
#include "hdrdistill/layers.hpp"
#include "hdrdistill/skam.hpp"
#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

struct LossWeights {
    double lambda_perc = 1e-2;  // perceptual term inside the content loss
    double lambda1 = 1e-3;      // content
    double lambda2 = 100.0;     // color
};

// Frozen feature stack standing in for a pretrained perceptual network: four
// 3x3 convs with tanh, a 2x pool in the middle, taps after layers 2 and 4.
// Weights never receive gradients; external frozen weights can be supplied
// through from_group.
class FeatureExtractor {
  public:
    FeatureExtractor() = default;
    static FeatureExtractor random(int width, std::uint64_t seed);
    static FeatureExtractor from_group(const ParamGroup& group, const std::string& prefix);

    std::vector<Tensor> operator()(const Tensor& x) const;  // two taps
    ParamGroup collect(const std::string& prefix) const;
    int width() const { return width_; }

  private:
    std::vector<ConvParam> layers_;
    int width_ = 0;
};

Tensor l1(const Tensor& a, const Tensor& b);
Tensor mse(const Tensor& a, const Tensor& b);

// ||H_hat - T(GT)||_1; supervises the teacher parameters only.
Tensor spg_loss(const Tensor& h_hat, const HdrImage& gt, const TonemapParams& tonemap);

// ||T(H_in) - H_hat||_1 + lambda * ||phi(T(H_in)) - phi(H_hat)||_1 with the
// teacher side detached. The *_transferred variant takes T(H_in) precomputed.
Tensor content_loss(const HdrImage& h_in, const Tensor& h_hat, const FeatureExtractor& phi,
                    double lambda, const TonemapParams& tonemap);
Tensor content_loss_transferred(const Tensor& t_hin, const Tensor& h_hat,
                                const FeatureExtractor& phi, double lambda);

// Semantic-guided color loss on images in [0,1]: both sides are mapped onto
// the histogram range before the per-instance CDF losses are averaged.
Tensor color_loss_transferred(const Tensor& t_hin, const Tensor& h_hat, const Tensor& masks,
                              const HistogramSpec& spec, MaskedHistogramMode mode);

struct LossReport {
    double org = 0, spg = 0, content = 0, color = 0, feat = 0, total = 0;
};

// Reconstructs total from the report's terms in the same operation order the
// graph used; the difference is the bookkeeping error.
double report_identity_gap(const LossReport& r, const LossWeights& w);

struct ObjectiveInputs {
    Tensor t_hin;                      // T(H_in), live student side
    Tensor h_hat;                      // teacher output (attached to theta_e)
    Tensor t_gt;                       // T(GT), constant
    Tensor masks;                      // [K,H,W]
    std::vector<Tensor> taps_s, taps_t;
};

struct Objective {
    Tensor grand;  // total + spg, the one backward() target of a step
    Tensor total;  // Eq. objective for the student
    Tensor spg;
    LossReport report;
};

Objective total_objective(const ObjectiveInputs& in, const FeatureExtractor& phi,
                          const std::vector<SkamStageParams>& skam_stages, RngStream& rng,
                          const LossWeights& weights, const HistogramSpec& spec,
                          MaskedHistogramMode mode);

}  // namespace hdrdistill
