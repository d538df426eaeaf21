#include "hdrdistill/models.hpp"

namespace hdrdistill {

namespace {

ConvParam conv_from_group(const ParamGroup& g, const std::string& name, int padding,
                          int groups = 1) {
    ConvParam c;
    const Tensor* w = g.find(name + ".w");
    if (!w) throw std::runtime_error("missing conv tensor " + name + ".w");
    c.w = *w;
    const Tensor* b = g.find(name + ".b");
    if (b) c.b = *b;
    c.padding = padding;
    c.groups = groups;
    return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// ORM

OrmParams OrmParams::create(int in_ch, int out_ch, int width, RngStream& rng, double squash_mu) {
    OrmParams p;
    p.width = width;
    p.in_ch = in_ch;
    p.out_ch = out_ch;
    p.squash_mu = squash_mu;
    p.layers.push_back(make_conv(in_ch, width, 3, rng));
    for (int i = 0; i < 4; i++) p.layers.push_back(make_conv(width, width, 3, rng));
    p.layers.push_back(make_conv(width, out_ch, 3, rng));
    return p;
}

ParamGroup OrmParams::collect(const std::string& prefix) const {
    ParamGroup g;
    for (std::size_t i = 0; i < layers.size(); i++) {
        g.add(prefix + ".l" + std::to_string(i), layers[i]);
    }
    g.add(prefix + ".squash_mu", Tensor::constant({1}, {squash_mu}));
    return g;
}

OrmParams OrmParams::from_group(const ParamGroup& group, const std::string& prefix) {
    OrmParams p;
    for (int i = 0; i < 6; i++) {
        p.layers.push_back(conv_from_group(group, prefix + ".l" + std::to_string(i), 1));
    }
    p.in_ch = p.layers[0].w.dim(1);
    p.width = p.layers[0].w.dim(0);
    p.out_ch = p.layers[5].w.dim(0);
    const Tensor* mu = group.find(prefix + ".squash_mu");
    if (mu) p.squash_mu = mu->item();
    return p;
}

Tensor stack_frames(const SdrStack& stack) {
    if (stack.frames.size() < 2) throw ShapeMismatchError("need at least 2 SDR frames");
    const Shape s = stack.frames[0].shape();
    for (const auto& f : stack.frames) {
        if (f.shape() != s) throw ShapeMismatchError("SDR frames must share one shape");
    }
    const int c = s[0], h = s[1], w = s[2];
    std::vector<double> data;
    data.reserve(stack.frames.size() * numel(s));
    for (const auto& f : stack.frames) {
        auto v = f.values();
        data.insert(data.end(), v.begin(), v.end());
    }
    return Tensor::constant({static_cast<int>(stack.frames.size()) * c, h, w}, std::move(data));
}

Tensor orm_input(const SdrStack& stack) {
    if (stack.frames.size() != stack.exposure_times.size()) {
        throw ShapeMismatchError("frame/exposure count mismatch");
    }
    const Shape s = stack.frames[0].shape();
    const int c = s[0], h = s[1], w = s[2];
    std::vector<double> data;
    data.reserve(2 * stack.frames.size() * numel(s));
    for (const auto& f : stack.frames) {
        auto v = f.values();
        data.insert(data.end(), v.begin(), v.end());
    }
    for (std::size_t i = 0; i < stack.frames.size(); i++) {
        double inv_t = 1.0 / stack.exposure_times[i];
        for (double v : stack.frames[i].values()) {
            data.push_back(std::min(1.0, v * inv_t));
        }
    }
    return Tensor::constant({2 * static_cast<int>(stack.frames.size()) * c, h, w},
                            std::move(data));
}

std::pair<Tensor, std::vector<Tensor>> orm_forward(const Tensor& stacked, const OrmParams& p) {
    if ((stacked.ndim() != 3 && stacked.ndim() != 4) ||
        stacked.dim(-3) != p.layers[0].w.dim(1)) {
        throw ShapeMismatchError("orm input " + shape_str(stacked.shape()) + " does not match " +
                                 std::to_string(p.layers[0].w.dim(1)) + " channels");
    }
    std::vector<Tensor> taps;
    Tensor x = tanh(apply(p.layers[0], stacked));
    x = tanh(apply(p.layers[1], x));
    taps.push_back(x);
    x = tanh(apply(p.layers[2], x));
    x = tanh(apply(p.layers[3], x));
    taps.push_back(x);
    x = tanh(apply(p.layers[4], x));
    x = apply(p.layers[5], x);
    taps.push_back(x);
    // sigmoid in the tonemapped domain, mapped back to linear radiance
    double log1p_mu = std::log1p(p.squash_mu);
    Tensor out = affine(exp(affine(sigmoid(x), log1p_mu, 0.0)), 1.0 / p.squash_mu,
                        -1.0 / p.squash_mu);
    return {out, taps};
}

std::pair<HdrImage, std::vector<Tensor>> orm_forward(const SdrStack& stack, const OrmParams& p) {
    auto [out, taps] = orm_forward(orm_input(stack), p);
    return {HdrImage{out, stack.format, stack.pattern}, taps};
}

// ---------------------------------------------------------------------------
// Prior Fusion Block

PriorFusionParams PriorFusionParams::create(int channels, RngStream& rng) {
    PriorFusionParams p;
    p.q_pw = make_conv(channels, channels, 1, rng);
    p.q_dw = make_conv(channels, channels, 3, rng, true, channels);
    p.k_pw = make_conv(channels, channels, 1, rng);
    p.k_dw = make_conv(channels, channels, 3, rng, true, channels);
    p.v_pw = make_conv(channels, channels, 1, rng);
    p.v_dw = make_conv(channels, channels, 3, rng, true, channels);
    p.out_pw = make_conv(channels, channels, 1, rng);
    p.gamma = Tensor::variable({1}, {1.0});
    return p;
}

PriorFusionParams PriorFusionParams::zeros(int channels) {
    PriorFusionParams p;
    p.q_pw = zero_conv(channels, channels, 1);
    p.q_dw = zero_conv(channels, channels, 3, true, channels);
    p.k_pw = zero_conv(channels, channels, 1);
    p.k_dw = zero_conv(channels, channels, 3, true, channels);
    p.v_pw = zero_conv(channels, channels, 1);
    p.v_dw = zero_conv(channels, channels, 3, true, channels);
    p.out_pw = zero_conv(channels, channels, 1);
    p.gamma = Tensor::variable({1}, {1.0});
    return p;
}

Tensor prior_fusion_block(const Tensor& f_k, const Tensor& p_f, const PriorFusionParams& p) {
    if (f_k.shape() != p_f.shape()) {
        throw ShapeMismatchError("prior fusion inputs " + shape_str(f_k.shape()) + " vs " +
                                 shape_str(p_f.shape()));
    }
    if (f_k.ndim() != 3 && f_k.ndim() != 4) {
        throw ShapeMismatchError("prior fusion expects [C,h,w] or [B,C,h,w]");
    }
    const bool batched = f_k.ndim() == 4;
    const int b = batched ? f_k.dim(0) : 1;
    const int c = f_k.dim(-3), h = f_k.dim(-2), w = f_k.dim(-1);
    Tensor q = apply(p.q_dw, apply(p.q_pw, p_f));
    Tensor k = apply(p.k_dw, apply(p.k_pw, f_k));
    Tensor v = apply(p.v_dw, apply(p.v_pw, f_k));
    // Per the cited transposed-attention mechanism, Q and K rows are
    // L2-normalized; otherwise dot products over h*w positions saturate the
    // softmax outright.
    auto rows = [&](const Tensor& t) { return reshape(t, {b, c, h * w}); };
    auto normalize = [](const Tensor& m) {
        return m / sqrt(sum(square(m), {2}, true) + 1e-12);
    };
    Tensor qm = normalize(rows(q));
    Tensor km = normalize(rows(k));
    Tensor vm = rows(v);
    // [B,C,C] channel attention, each row a distribution.
    Tensor attn = softmax(matmul(km, transpose_last2(qm)) / p.gamma, 2);
    Tensor mixed = reshape(matmul(attn, vm), f_k.shape());
    return apply(p.out_pw, mixed) + f_k;
}

// ---------------------------------------------------------------------------
// SPGRM

namespace {

FusionModuleParams make_module(int in_ch, int width, int out_ch, RngStream& rng) {
    FusionModuleParams m;
    m.pre = make_conv(in_ch, width, 3, rng);
    m.pfb = PriorFusionParams::create(width, rng);
    m.post = make_conv(width, out_ch, 3, rng);
    return m;
}

}  // namespace

SpgrmParams SpgrmParams::create(int width, RngStream& rng) {
    SpgrmParams p;
    p.width = width;
    p.modules.push_back(make_module(3, width, width, rng));
    p.modules.push_back(make_module(width, width, width, rng));
    p.modules.push_back(make_module(width, width, 3, rng));
    // Zero-initialized final correction: the teacher starts as the identity
    // on its input and trains into a strictly additive refinement.
    p.modules[2].post = zero_conv(width, 3, 3);
    return p;
}

SpgrmParams SpgrmParams::zeros(int width) {
    SpgrmParams p;
    p.width = width;
    for (int i = 0; i < 3; i++) {
        FusionModuleParams m;
        m.pre = zero_conv(i == 0 ? 3 : width, width, 3);
        m.pfb = PriorFusionParams::zeros(width);
        m.post = zero_conv(width, i == 2 ? 3 : width, 3);
        p.modules.push_back(std::move(m));
    }
    return p;
}

ParamGroup SpgrmParams::collect(const std::string& prefix) const {
    ParamGroup g;
    for (std::size_t i = 0; i < modules.size(); i++) {
        std::string m = prefix + ".m" + std::to_string(i);
        g.add(m + ".pre", modules[i].pre);
        g.add(m + ".post", modules[i].post);
        const PriorFusionParams& f = modules[i].pfb;
        g.add(m + ".q_pw", f.q_pw);
        g.add(m + ".q_dw", f.q_dw);
        g.add(m + ".k_pw", f.k_pw);
        g.add(m + ".k_dw", f.k_dw);
        g.add(m + ".v_pw", f.v_pw);
        g.add(m + ".v_dw", f.v_dw);
        g.add(m + ".out_pw", f.out_pw);
        g.add(m + ".gamma", f.gamma);
    }
    return g;
}

SpgrmParams SpgrmParams::from_group(const ParamGroup& group, const std::string& prefix) {
    SpgrmParams p;
    for (int i = 0; i < 3; i++) {
        std::string m = prefix + ".m" + std::to_string(i);
        FusionModuleParams fm;
        fm.pre = conv_from_group(group, m + ".pre", 1);
        fm.post = conv_from_group(group, m + ".post", 1);
        PriorFusionParams& f = fm.pfb;
        f.q_pw = conv_from_group(group, m + ".q_pw", 0);
        f.k_pw = conv_from_group(group, m + ".k_pw", 0);
        f.v_pw = conv_from_group(group, m + ".v_pw", 0);
        f.out_pw = conv_from_group(group, m + ".out_pw", 0);
        int width = f.q_pw.w.dim(0);
        f.q_dw = conv_from_group(group, m + ".q_dw", 1, width);
        f.k_dw = conv_from_group(group, m + ".k_dw", 1, width);
        f.v_dw = conv_from_group(group, m + ".v_dw", 1, width);
        const Tensor* gamma = group.find(m + ".gamma");
        if (!gamma) throw std::runtime_error("missing " + m + ".gamma");
        f.gamma = *gamma;
        p.width = width;
        p.modules.push_back(std::move(fm));
    }
    return p;
}

std::pair<Tensor, std::vector<Tensor>> spgrm_forward(const Tensor& h_s, const Tensor& p_f,
                                                     const SpgrmParams& p) {
    if ((h_s.ndim() != 3 && h_s.ndim() != 4) || h_s.dim(-3) != 3) {
        throw ShapeMismatchError("spgrm expects [3,H,W] or [B,3,H,W] input, got " +
                                 shape_str(h_s.shape()));
    }
    if (p.modules.size() != 3) throw ShapeMismatchError("spgrm needs exactly 3 fusion modules");
    std::vector<Tensor> taps;
    Tensor x = h_s;
    for (std::size_t i = 0; i < 3; i++) {
        Tensor t = tanh(apply(p.modules[i].pre, x));
        t = prior_fusion_block(t, p_f, p.modules[i].pfb);
        taps.push_back(t);  // alignment taps come off the fused features
        t = apply(p.modules[i].post, t);
        if (i < 2) t = tanh(t);
        x = t;
    }
    return {clamp(x + h_s, 0.0, 1.0), taps};
}

}  // namespace hdrdistill
