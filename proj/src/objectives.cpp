#include "hdrdistill/objectives.hpp"

namespace hdrdistill {

FeatureExtractor FeatureExtractor::random(int width, std::uint64_t seed) {
    RngStream rng(seed, "feature-extractor");
    FeatureExtractor fx;
    fx.width_ = width;
    fx.layers_.push_back(make_conv(3, width, 3, rng, true, 1, /*trainable=*/false));
    for (int i = 0; i < 3; i++) {
        fx.layers_.push_back(make_conv(width, width, 3, rng, true, 1, /*trainable=*/false));
    }
    return fx;
}

FeatureExtractor FeatureExtractor::from_group(const ParamGroup& group,
                                              const std::string& prefix) {
    FeatureExtractor fx;
    for (int i = 0; i < 4; i++) {
        std::string name = prefix + ".l" + std::to_string(i);
        const Tensor* w = group.find(name + ".w");
        if (!w) throw std::runtime_error("missing feature tensor " + name + ".w");
        ConvParam c;
        c.w = w->detach();  // frozen regardless of how the group was built
        const Tensor* b = group.find(name + ".b");
        if (b) c.b = b->detach();
        c.padding = 1;
        fx.layers_.push_back(std::move(c));
    }
    fx.width_ = fx.layers_[0].w.dim(0);
    return fx;
}

std::vector<Tensor> FeatureExtractor::operator()(const Tensor& x) const {
    if (layers_.size() != 4) throw std::logic_error("feature extractor is uninitialized");
    std::vector<Tensor> taps;
    Tensor t = tanh(apply(layers_[0], x));
    t = tanh(apply(layers_[1], t));
    taps.push_back(t);
    t = avgpool2(t);
    t = tanh(apply(layers_[2], t));
    t = tanh(apply(layers_[3], t));
    taps.push_back(t);
    return taps;
}

ParamGroup FeatureExtractor::collect(const std::string& prefix) const {
    ParamGroup g;
    for (std::size_t i = 0; i < layers_.size(); i++) {
        g.add(prefix + ".l" + std::to_string(i), layers_[i]);
    }
    return g;
}

Tensor l1(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatchError("l1 shapes " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    }
    return mean(abs(a - b));
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeMismatchError("mse shapes " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
    }
    return mean(square(a - b));
}

Tensor spg_loss(const Tensor& h_hat, const HdrImage& gt, const TonemapParams& tonemap) {
    return l1(h_hat, domain_transfer(gt, tonemap).detach());
}

Tensor content_loss_transferred(const Tensor& t_hin, const Tensor& h_hat,
                                const FeatureExtractor& phi, double lambda) {
    Tensor teacher = h_hat.detach();
    Tensor pixel = l1(t_hin, teacher);
    if (lambda == 0.0) return pixel;
    auto fa = phi(t_hin);
    auto fb = phi(teacher);
    Tensor perc = l1(fa[0], fb[0]) + l1(fa[1], fb[1]);
    return pixel + lambda * (0.5 * perc);
}

Tensor content_loss(const HdrImage& h_in, const Tensor& h_hat, const FeatureExtractor& phi,
                    double lambda, const TonemapParams& tonemap) {
    return content_loss_transferred(domain_transfer(h_in, tonemap), h_hat, phi, lambda);
}

Tensor color_loss_transferred(const Tensor& t_hin, const Tensor& h_hat, const Tensor& masks,
                              const HistogramSpec& spec, MaskedHistogramMode mode) {
    double scale = spec.max - spec.min;
    Tensor student = affine(t_hin, scale, spec.min);
    Tensor teacher = affine(h_hat.detach(), scale, spec.min);
    return semantic_histogram_loss(student, teacher, masks, spec, mode);
}

double report_identity_gap(const LossReport& r, const LossWeights& w) {
    double rebuilt = ((r.org + w.lambda1 * r.content) + w.lambda2 * r.color) + r.feat;
    return std::abs(rebuilt - r.total);
}

Objective total_objective(const ObjectiveInputs& in, const FeatureExtractor& phi,
                          const std::vector<SkamStageParams>& skam_stages, RngStream& rng,
                          const LossWeights& weights, const HistogramSpec& spec,
                          MaskedHistogramMode mode) {
    Objective out;
    Tensor org = l1(in.t_hin, in.t_gt);
    Tensor content = content_loss_transferred(in.t_hin, in.h_hat, phi, weights.lambda_perc);
    Tensor color = color_loss_transferred(in.t_hin, in.h_hat, in.masks, spec, mode);
    Tensor feat = multi_stage_loss(in.taps_s, in.taps_t, skam_stages, rng);
    Tensor spg = l1(in.h_hat, in.t_gt);

    out.total = (org + weights.lambda1 * content) + weights.lambda2 * color + feat;
    out.spg = spg;
    out.grand = out.total + spg;
    out.report.org = org.item();
    out.report.content = content.item();
    out.report.color = color.item();
    out.report.feat = feat.item();
    out.report.spg = spg.item();
    out.report.total = out.total.item();
    return out;
}

}  // namespace hdrdistill
