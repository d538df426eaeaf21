#include "hdrdistill/skam.hpp"

namespace hdrdistill {

SkamStageParams SkamStageParams::create(int in_s, int in_t, int latent, RngStream& rng) {
    SkamStageParams p;
    p.enc_s1 = make_conv(in_s, latent, 3, rng);
    p.enc_s2 = make_conv(latent, latent, 3, rng);
    p.enc_t1 = make_conv(in_t, latent, 3, rng);
    p.enc_t2 = make_conv(latent, latent, 3, rng);
    p.dec1 = make_conv(latent, latent, 3, rng);
    // Zero-initialized reconstruction head: the alignment loss starts flat
    // for the taps and phases in as the decoder trains.
    p.dec2 = zero_conv(latent, in_t, 3);
    return p;
}

namespace {

ConvParam identity_conv(int channels) {
    std::vector<double> w(static_cast<std::size_t>(channels) * channels * 9, 0.0);
    for (int c = 0; c < channels; c++) {
        w[(static_cast<std::size_t>(c) * channels + c) * 9 + 4] = 1.0;  // center tap
    }
    ConvParam p;
    p.w = Tensor::variable({channels, channels, 3, 3}, std::move(w));
    p.b = Tensor::variable({channels}, 0.0);
    p.padding = 1;
    return p;
}

ConvParam stage_conv(const ParamGroup& g, const std::string& name) {
    ConvParam c;
    const Tensor* w = g.find(name + ".w");
    if (!w) throw std::runtime_error("missing skam tensor " + name + ".w");
    c.w = *w;
    const Tensor* b = g.find(name + ".b");
    if (b) c.b = *b;
    c.padding = 1;
    return c;
}

}  // namespace

SkamStageParams SkamStageParams::identity(int channels) {
    SkamStageParams p;
    p.enc_s1 = identity_conv(channels);
    p.enc_s2 = identity_conv(channels);
    p.enc_t1 = identity_conv(channels);
    p.enc_t2 = identity_conv(channels);
    p.dec1 = identity_conv(channels);
    p.dec2 = identity_conv(channels);
    return p;
}

ParamGroup SkamStageParams::collect(const std::string& prefix) const {
    ParamGroup g;
    g.add(prefix + ".enc_s1", enc_s1);
    g.add(prefix + ".enc_s2", enc_s2);
    g.add(prefix + ".enc_t1", enc_t1);
    g.add(prefix + ".enc_t2", enc_t2);
    g.add(prefix + ".dec1", dec1);
    g.add(prefix + ".dec2", dec2);
    return g;
}

SkamStageParams SkamStageParams::from_group(const ParamGroup& group, const std::string& prefix) {
    SkamStageParams p;
    p.enc_s1 = stage_conv(group, prefix + ".enc_s1");
    p.enc_s2 = stage_conv(group, prefix + ".enc_s2");
    p.enc_t1 = stage_conv(group, prefix + ".enc_t1");
    p.enc_t2 = stage_conv(group, prefix + ".enc_t2");
    p.dec1 = stage_conv(group, prefix + ".dec1");
    p.dec2 = stage_conv(group, prefix + ".dec2");
    return p;
}

BinaryMask sample_mask(const Shape& shape, RngStream& rng) {
    BinaryMask m;
    m.seed = RngStream::mix(rng.next_u64(), "skam-mask");
    RngStream local(m.seed, "entries");
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = local.bernoulli() ? 1.0 : 0.0;
    m.mask = Tensor::constant(shape, std::move(v));
    return m;
}

std::pair<Tensor, Tensor> skam_forward(const Tensor& f_s, const Tensor& f_t,
                                       const SkamStageParams& p, const BinaryMask& mask) {
    if (f_s.ndim() != f_t.ndim() || f_s.dim(-2) != f_t.dim(-2) || f_s.dim(-1) != f_t.dim(-1) ||
        (f_s.ndim() == 4 && f_s.dim(0) != f_t.dim(0))) {
        throw ShapeMismatchError("skam taps must share spatial size: " + shape_str(f_s.shape()) +
                                 " vs " + shape_str(f_t.shape()));
    }
    Tensor teacher = f_t.detach();
    Tensor fs = apply(p.enc_s2, apply(p.enc_s1, f_s));
    Tensor ft = apply(p.enc_t2, apply(p.enc_t1, teacher));
    if (mask.mask.shape() != fs.shape()) {
        throw ShapeMismatchError("mask shape " + shape_str(mask.mask.shape()) +
                                 " does not match latent " + shape_str(fs.shape()));
    }
    Tensor mixed = fs * (1.0 - mask.mask) + ft * mask.mask;
    Tensor fe = apply(p.dec2, apply(p.dec1, mixed));
    Tensor loss = mean(square(fe - teacher));
    return {fe, loss};
}

namespace {

Shape latent_shape(const Tensor& f_s, const SkamStageParams& p) {
    Shape latent = f_s.shape();
    latent[latent.size() - 3] = p.enc_s2.w.dim(0);
    return latent;
}

}  // namespace

std::pair<Tensor, Tensor> skam_forward(const Tensor& f_s, const Tensor& f_t,
                                       const SkamStageParams& p, RngStream& rng) {
    return skam_forward(f_s, f_t, p, sample_mask(latent_shape(f_s, p), rng));
}

Tensor multi_stage_loss(const std::vector<Tensor>& taps_s, const std::vector<Tensor>& taps_t,
                        const std::vector<SkamStageParams>& stages, RngStream& rng) {
    if (taps_s.size() != taps_t.size() || taps_s.size() != stages.size()) {
        throw StageCountMismatchError("tap/stage counts: " + std::to_string(taps_s.size()) +
                                      "/" + std::to_string(taps_t.size()) + "/" +
                                      std::to_string(stages.size()));
    }
    if (stages.empty()) return Tensor::scalar(0.0);
    std::vector<BinaryMask> masks;
    for (std::size_t k = 0; k < stages.size(); k++) {
        masks.push_back(sample_mask(latent_shape(taps_s[k], stages[k]), rng));
    }
    Tensor total;
    for (std::size_t k = 0; k < stages.size(); k++) {
        Tensor loss = skam_forward(taps_s[k], taps_t[k], stages[k], masks[k]).second;
        total = k == 0 ? loss : total + loss;
    }
    return total;
}

}  // namespace hdrdistill
