#include "hdrdistill/semantic_bank.hpp"

#include <cmath>
#include <iostream>

#include "hdrdistill/raster_io.hpp"

namespace hdrdistill {

SemanticBank SemanticBank::create(const SkbConfig& cfg, std::uint64_t seed) {
    SemanticBank bank;
    bank.cfg = cfg;
    RngStream rng(seed, "skb-feature-pyramid");
    for (int c : cfg.feature_channels) {
        ConvParam conv = make_conv(3, c, 3, rng, true, 1, /*trainable=*/false);
        // The first three output channels pass the reference image through
        // unmixed; the rest stay random projections. Downstream consumers get
        // direct access to the prior content without having to invert a
        // random code.
        std::vector<double> w = conv.w.values();
        int fan = 3 * 3 * 3;
        for (int o = 0; o < std::min(3, c); o++) {
            for (int i = 0; i < fan; i++) w[o * fan + i] = 0.0;
            w[o * fan + o * 9 + 4] = 1.0;  // center tap of the matching channel
        }
        conv.w = Tensor::constant(conv.w.shape(), std::move(w));
        bank.level_convs.push_back(std::move(conv));
    }
    return bank;
}

SegmentationPriors synth_priors(const SyntheticScene& scene, const SemanticBank& bank,
                                const TonemapParams& tonemap) {
    const int h = scene.height, w = scene.width;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const int k = bank.cfg.k_masks;

    SegmentationPriors priors;
    std::vector<double> masks(static_cast<std::size_t>(k) * hw, 0.0);
    int n = scene.n_instances;
    if (n > k) {
        std::cerr << "synth_priors: scene has " << n << " instances, truncating to " << k
                  << "\n";
        n = k;
    }
    for (std::size_t p = 0; p < hw; p++) {
        int lbl = scene.instances[p];
        if (lbl >= 1 && lbl <= n) masks[static_cast<std::size_t>(lbl - 1) * hw + p] = 1.0;
    }
    priors.masks = Tensor::constant({k, h, w}, std::move(masks));

    // Image pyramid of the tonemapped reference, one frozen conv per level.
    Tensor ref = mu_law(scene.hdr_gt.data, tonemap);
    std::vector<Tensor> images;  // fine to coarse: H/2 .. H/16
    Tensor cur = avgpool2(ref);
    images.push_back(cur);
    for (int i = 1; i < 4; i++) {
        cur = avgpool2(cur);
        images.push_back(cur);
    }
    const int levels = static_cast<int>(bank.level_convs.size());
    for (int i = 0; i < levels; i++) {
        // level 0 is the coarsest (H/16), which is the last pyramid image
        priors.features.push_back(tanh(apply(bank.level_convs[i], images[levels - 1 - i])));
    }
    return priors;
}

SegmentationPriors load_priors(const std::string& mask_file, const std::string& feature_file,
                               int k_masks) {
    Raster mr = read_raster(mask_file, "SKB1");
    if (mr.c != 1) throw FormatError("mask raster must have one channel per plane");
    const int h = static_cast<int>(mr.h), w = static_cast<int>(mr.w);
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const int file_k = static_cast<int>(mr.k);
    if (file_k != k_masks) {
        std::cerr << "load_priors: file holds " << file_k << " masks, adjusting to " << k_masks
                  << "\n";
    }
    SegmentationPriors priors;
    std::vector<double> masks(static_cast<std::size_t>(k_masks) * hw, 0.0);
    for (int i = 0; i < std::min(file_k, k_masks); i++) {
        for (std::size_t p = 0; p < hw; p++) {
            masks[static_cast<std::size_t>(i) * hw + p] =
                mr.payload[static_cast<std::size_t>(i) * hw + p] > 0.5f ? 1.0 : 0.0;
        }
    }
    priors.masks = Tensor::constant({k_masks, h, w}, std::move(masks));

    auto levels = read_raster_levels(feature_file, "SKB1");
    for (const auto& lvl : levels) {
        std::vector<double> v(lvl.data.begin(), lvl.data.end());
        priors.features.push_back(Tensor::constant(
            {static_cast<int>(lvl.c), static_cast<int>(lvl.h), static_cast<int>(lvl.w)},
            std::move(v)));
    }
    return priors;
}

void save_priors(const SegmentationPriors& priors, const std::string& mask_file,
                 const std::string& feature_file) {
    Raster mr;
    mr.magic = "SKB1";
    mr.k = static_cast<std::uint32_t>(priors.masks.dim(0));
    mr.c = 1;
    mr.h = static_cast<std::uint32_t>(priors.masks.dim(1));
    mr.w = static_cast<std::uint32_t>(priors.masks.dim(2));
    auto mv = priors.masks.values();
    mr.payload.assign(mv.begin(), mv.end());
    write_raster(mask_file, mr);

    std::vector<RasterLevel> levels;
    for (const auto& f : priors.features) {
        RasterLevel lvl;
        lvl.c = static_cast<std::uint32_t>(f.dim(0));
        lvl.h = static_cast<std::uint32_t>(f.dim(1));
        lvl.w = static_cast<std::uint32_t>(f.dim(2));
        auto fv = f.values();
        lvl.data.assign(fv.begin(), fv.end());
        levels.push_back(std::move(lvl));
    }
    write_raster_levels(feature_file, "SKB1", mr.h * 2, mr.w * 2, levels);
}

FpnParams FpnParams::create(const std::vector<int>& level_channels, int c_out, RngStream& rng) {
    FpnParams p;
    p.c_out = c_out;
    for (int c : level_channels) p.lateral.push_back(make_conv(c, c_out, 1, rng, false));
    for (std::size_t i = 1; i < level_channels.size(); i++) {
        p.merge.push_back(make_conv(c_out, c_out, 3, rng, false));
    }
    p.out_proj = make_conv(c_out, c_out, 1, rng, false);
    return p;
}

ParamGroup FpnParams::collect(const std::string& prefix) const {
    ParamGroup g;
    for (std::size_t i = 0; i < lateral.size(); i++) {
        g.add(prefix + ".lateral" + std::to_string(i), lateral[i]);
    }
    for (std::size_t i = 0; i < merge.size(); i++) {
        g.add(prefix + ".merge" + std::to_string(i), merge[i]);
    }
    g.add(prefix + ".out_proj", out_proj);
    return g;
}

FpnParams FpnParams::from_group(const ParamGroup& group, const std::string& prefix, int levels) {
    FpnParams p;
    auto grab = [&](const std::string& name) {
        const Tensor* t = group.find(name);
        if (!t) throw CheckpointError("missing FPN tensor " + name);
        return *t;
    };
    for (int i = 0; i < levels; i++) {
        ConvParam c;
        c.w = grab(prefix + ".lateral" + std::to_string(i) + ".w");
        c.padding = 0;
        p.lateral.push_back(c);
    }
    for (int i = 0; i < levels - 1; i++) {
        ConvParam c;
        c.w = grab(prefix + ".merge" + std::to_string(i) + ".w");
        c.padding = 1;
        p.merge.push_back(c);
    }
    p.out_proj.w = grab(prefix + ".out_proj.w");
    p.out_proj.padding = 0;
    p.c_out = p.out_proj.w.dim(0);
    return p;
}

Tensor fpn_fuse(const SegmentationPriors& priors, const FpnParams& params, int target_h,
                int target_w) {
    const std::size_t levels = params.lateral.size();
    if (priors.features.size() != levels) {
        throw ShapeMismatchError("fpn_fuse expects " + std::to_string(levels) +
                                 " pyramid levels, got " + std::to_string(priors.features.size()));
    }
    for (std::size_t i = 1; i < levels; i++) {
        if (priors.features[i].dim(-2) != 2 * priors.features[i - 1].dim(-2) ||
            priors.features[i].dim(-1) != 2 * priors.features[i - 1].dim(-1)) {
            throw ShapeMismatchError("pyramid level " + std::to_string(i) +
                                     " is not twice the previous level");
        }
    }
    Tensor p = apply(params.lateral[0], priors.features[0]);
    for (std::size_t i = 1; i < levels; i++) {
        p = apply(params.merge[i - 1],
                  upsample_nearest2(p, 2) + apply(params.lateral[i], priors.features[i]));
    }
    while (p.dim(-2) < target_h && p.dim(-1) < target_w) p = upsample_nearest2(p, 2);
    if (p.dim(-2) != target_h || p.dim(-1) != target_w) {
        throw ShapeMismatchError("fpn target " + std::to_string(target_h) + "x" +
                                 std::to_string(target_w) + " unreachable from " +
                                 shape_str(p.shape()));
    }
    return apply(params.out_proj, p);
}

}  // namespace hdrdistill
