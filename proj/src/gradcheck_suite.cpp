#include <cmath>

#include "hdrdistill/gradcheck.hpp"
#include "hdrdistill/histogram.hpp"
#include "hdrdistill/objectives.hpp"
#include "hdrdistill/semantic_bank.hpp"
#include "hdrdistill/train.hpp"

namespace hdrdistill {

namespace {

Tensor rand_var(const Shape& shape, RngStream& rng, double lo, double hi) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::variable(shape, std::move(v));
}

GradCheckEntry entry(const std::string& name, double err, double tol) {
    return {name, err, tol, err < tol};
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite() {
    std::vector<GradCheckEntry> out;
    TonemapParams tonemap{5000.0};
    HistogramSpec spec{8, 0.0, 255.0, 400.0};

    {
        RngStream rng(101, "gc-mulaw");
        Tensor x = rand_var({1, 4, 4}, rng, 0.05, 0.95);
        double err = gradcheck(
            [tonemap](const std::vector<Tensor>& xs) {
                return sum(square(mu_law(xs[0], tonemap)));
            },
            {x});
        out.push_back(entry("mu_law", err, 1e-6));
    }
    {
        RngStream rng(102, "gc-mulaw-inv");
        Tensor y = rand_var({1, 4, 4}, rng, 0.05, 0.95);
        double err = gradcheck(
            [tonemap](const std::vector<Tensor>& xs) {
                return sum(square(mu_law_inverse(xs[0], tonemap)));
            },
            {y});
        out.push_back(entry("mu_law_inverse", err, 1e-6));
    }
    {
        RngStream rng(103, "gc-demosaic");
        Tensor mosaic = rand_var({1, 8, 8}, rng, 0.05, 0.95);
        double err = gradcheck(
            [tonemap](const std::vector<Tensor>& xs) {
                HdrImage img{xs[0], PixelFormat::RawBayer, BayerPattern::RGGB};
                return sum(domain_transfer(img, tonemap));
            },
            {mosaic});
        out.push_back(entry("demosaic_domain_transfer", err, 1e-5));
    }
    {
        RngStream rng(104, "gc-softhist");
        Tensor img = rand_var({1, 4, 4}, rng, 10.0, 245.0);
        double err = gradcheck(
            [spec](const std::vector<Tensor>& xs) {
                return sum(square(soft_histogram(xs[0], nullptr, spec).cdf));
            },
            {img}, 1e-4);
        out.push_back(entry("soft_histogram_cdf", err, 1e-5));
    }
    {
        RngStream rng(105, "gc-histloss");
        Tensor a = rand_var({1, 4, 4}, rng, 10.0, 245.0);
        Tensor b = rand_var({1, 4, 4}, rng, 10.0, 245.0);
        double err = gradcheck_wrt(
            [spec, b](const std::vector<Tensor>& xs) { return histogram_loss(xs[0], b, spec); },
            {a}, 0, 1e-4);
        out.push_back(entry("histogram_loss", err, 1e-5));
    }
    {
        RngStream rng(106, "gc-semhist");
        Tensor a = rand_var({1, 4, 4}, rng, 10.0, 245.0);
        Tensor b = rand_var({1, 4, 4}, rng, 10.0, 245.0);
        std::vector<double> masks(2 * 16, 0.0);
        for (int j = 0; j < 8; j++) masks[j] = 1.0;
        for (int j = 8; j < 16; j++) masks[16 + j] = 1.0;
        Tensor mask_t = Tensor::constant({2, 4, 4}, masks);
        double err = gradcheck_wrt(
            [spec, b, mask_t](const std::vector<Tensor>& xs) {
                return semantic_histogram_loss(xs[0], b, mask_t, spec);
            },
            {a}, 0, 1e-4);
        out.push_back(entry("semantic_histogram_loss", err, 1e-5));
    }
    {
        RngStream rng(107, "gc-conv");
        Tensor x = rand_var({1, 2, 5, 5}, rng, -1.0, 1.0);
        Tensor w = rand_var({3, 2, 3, 3}, rng, -1.0, 1.0);
        Tensor b = rand_var({3}, rng, -0.5, 0.5);
        double err = gradcheck(
            [](const std::vector<Tensor>& xs) {
                return sum(square(conv2d(xs[0], xs[1], xs[2], 1, 1)));
            },
            {x, w, b});
        out.push_back(entry("conv2d", err, 1e-5));
    }
    {
        RngStream rng(108, "gc-matmul");
        Tensor a = rand_var({3, 4}, rng, -1.0, 1.0);
        Tensor b = rand_var({4, 2}, rng, -1.0, 1.0);
        double err = gradcheck(
            [](const std::vector<Tensor>& xs) { return sum(square(matmul(xs[0], xs[1]))); },
            {a, b});
        out.push_back(entry("matmul", err, 1e-6));
    }
    {
        RngStream rng(109, "gc-softmax");
        Tensor x = rand_var({5}, rng, -2.0, 2.0);
        Tensor sel = rand_var({5}, rng, -1.0, 1.0).detach();
        double err = gradcheck(
            [sel](const std::vector<Tensor>& xs) { return sum(softmax(xs[0], 0) * sel); }, {x});
        out.push_back(entry("softmax", err, 1e-6));
    }
    {
        RngStream rng(110, "gc-pfb");
        PriorFusionParams pfb = PriorFusionParams::create(4, rng);
        Tensor f_k = rand_var({4, 4, 4}, rng, -1.0, 1.0);
        Tensor p_f = rand_var({4, 4, 4}, rng, -1.0, 1.0);
        double err = gradcheck(
            [&pfb](const std::vector<Tensor>& xs) {
                PriorFusionParams p2;
                p2.q_pw = pfb.q_pw;
                p2.q_dw = pfb.q_dw;
                p2.k_pw = pfb.k_pw;
                p2.k_dw = pfb.k_dw;
                p2.v_pw = pfb.v_pw;
                p2.v_dw = pfb.v_dw;
                p2.out_pw = pfb.out_pw;
                p2.gamma = xs[2];
                return sum(square(prior_fusion_block(xs[0], xs[1], p2)));
            },
            {f_k, p_f, pfb.gamma});
        out.push_back(entry("prior_fusion_block", err, 1e-4));
    }
    {
        RngStream rng(111, "gc-orm");
        OrmParams orm = OrmParams::create(6, 3, 4, rng);
        Tensor stacked = rand_var({6, 8, 8}, rng, 0.05, 0.95);
        Tensor target = rand_var({3, 8, 8}, rng, 0.0, 1.0).detach();
        double err = gradcheck_wrt(
            [&orm, target](const std::vector<Tensor>& xs) {
                OrmParams p = orm;
                p.layers[0].w = xs[1];
                auto [h, taps] = orm_forward(xs[0], p);
                return mean(square(h - target));
            },
            {stacked, orm.layers[0].w}, 0, 1e-5);
        double err_w = gradcheck_wrt(
            [&orm, target](const std::vector<Tensor>& xs) {
                OrmParams p = orm;
                p.layers[0].w = xs[1];
                auto [h, taps] = orm_forward(xs[0], p);
                return mean(square(h - target));
            },
            {stacked, orm.layers[0].w}, 1, 1e-5);
        out.push_back(entry("orm_forward", std::max(err, err_w), 1e-4));
    }
    {
        RngStream rng(112, "gc-spgrm");
        SpgrmParams spgrm = SpgrmParams::create(4, rng);
        Tensor h_s = rand_var({3, 8, 8}, rng, 0.1, 0.9);
        Tensor p_f = rand_var({4, 8, 8}, rng, -0.5, 0.5);
        Tensor t_gt = rand_var({3, 8, 8}, rng, 0.0, 1.0).detach();
        // xs entries share storage with the live parameters, so perturbing
        // them in place exercises the same graph the trainer differentiates.
        auto loss_fn = [&spgrm, t_gt, p_f](const std::vector<Tensor>& xs) {
            auto [h_hat, taps] = spgrm_forward(xs[0], p_f, spgrm);
            return mean(abs(h_hat - t_gt));
        };
        double err = gradcheck_wrt(loss_fn, {h_s, p_f, spgrm.modules[0].pre.w}, 0, 1e-5);
        double err_p = gradcheck_wrt(loss_fn, {h_s, p_f, spgrm.modules[0].pre.w}, 1, 1e-5);
        double err_w = gradcheck_wrt(loss_fn, {h_s, p_f, spgrm.modules[0].pre.w}, 2, 1e-5);
        out.push_back(entry("spgrm_forward_spg", std::max({err, err_p, err_w}), 1e-4));
    }
    {
        RngStream rng(113, "gc-fpn");
        SkbConfig skb;
        skb.k_masks = 4;
        skb.feature_channels = {8, 6, 4, 3};
        FpnParams fpn = FpnParams::create(skb.feature_channels, 4, rng);
        SegmentationPriors priors;
        priors.masks = Tensor::constant({4, 16, 16}, 0.0);
        priors.features.push_back(rand_var({8, 1, 1}, rng, -1.0, 1.0));
        priors.features.push_back(rand_var({6, 2, 2}, rng, -1.0, 1.0));
        priors.features.push_back(rand_var({4, 4, 4}, rng, -1.0, 1.0));
        priors.features.push_back(rand_var({3, 8, 8}, rng, -1.0, 1.0));
        double err = gradcheck(
            [&](const std::vector<Tensor>& xs) {
                SegmentationPriors p2;
                p2.masks = priors.masks;
                p2.features = {xs[0], xs[1], xs[2], xs[3]};
                FpnParams f2 = FpnParams::from_group(fpn.collect("fpn"), "fpn", 4);
                f2.lateral[0].w = xs[4];
                f2.merge[0].w = xs[5];
                return sum(square(fpn_fuse(p2, f2, 16, 16)));
            },
            {priors.features[0], priors.features[1], priors.features[2], priors.features[3],
             fpn.lateral[0].w, fpn.merge[0].w});
        out.push_back(entry("fpn_fuse", err, 1e-5));
    }
    {
        RngStream rng(114, "gc-skam");
        SkamStageParams stage = SkamStageParams::create(3, 4, 4, rng);
        Tensor f_s = rand_var({3, 4, 4}, rng, -1.0, 1.0);
        Tensor f_t = rand_var({4, 4, 4}, rng, -1.0, 1.0).detach();
        RngStream mask_rng(7, "gc-skam-mask");
        BinaryMask mask = sample_mask({4, 4, 4}, mask_rng);
        double err = gradcheck(
            [&](const std::vector<Tensor>& xs) {
                SkamStageParams s2 = SkamStageParams::from_group(stage.collect("s"), "s");
                s2.enc_s1.w = xs[1];
                s2.dec2.w = xs[2];
                return skam_forward(xs[0], f_t, s2, mask).second;
            },
            {f_s, stage.enc_s1.w, stage.dec2.w});
        out.push_back(entry("skam_feature_alignment", err, 1e-4));
    }
    {
        RngStream rng(115, "gc-content");
        FeatureExtractor phi = FeatureExtractor::random(4, 2024);
        Tensor h_in = rand_var({3, 8, 8}, rng, 0.05, 0.95);
        Tensor h_hat = rand_var({3, 8, 8}, rng, 0.0, 1.0).detach();
        double err = gradcheck_wrt(
            [&](const std::vector<Tensor>& xs) {
                HdrImage img{xs[0], PixelFormat::SrgbLinear, BayerPattern::RGGB};
                return content_loss(img, h_hat, phi, 1e-2, tonemap);
            },
            {h_in}, 0, 1e-5);
        out.push_back(entry("content_loss", err, 1e-4));
    }
    {
        RngStream rng(116, "gc-spg");
        Tensor h_hat = rand_var({3, 8, 8}, rng, 0.05, 0.95);
        HdrImage gt{rand_var({3, 8, 8}, rng, 0.02, 0.98).detach(), PixelFormat::SrgbLinear,
                    BayerPattern::RGGB};
        double err = gradcheck_wrt(
            [&](const std::vector<Tensor>& xs) { return spg_loss(xs[0], gt, tonemap); },
            {h_hat}, 0, 1e-6);
        out.push_back(entry("spg_loss", err, 1e-6));
    }
    {
        // Full composed objective for the student-side parameter groups, with
        // the teacher snapshot frozen exactly as the optimizer sees it.
        RngStream rng(117, "gc-composed");
        HistogramSpec small_spec{6, 0.0, 255.0, 400.0};
        OrmParams orm = OrmParams::create(6, 3, 4, rng);
        SkamStageParams stage = SkamStageParams::create(4, 4, 4, rng);
        Tensor stacked = rand_var({6, 8, 8}, rng, 0.05, 0.95).detach();
        Tensor t_gt = rand_var({3, 8, 8}, rng, 0.0, 1.0).detach();
        Tensor h_hat = rand_var({3, 8, 8}, rng, 0.05, 0.95).detach();
        Tensor tap_t = rand_var({4, 8, 8}, rng, -1.0, 1.0).detach();
        std::vector<double> masks(2 * 64, 0.0);
        for (int j = 0; j < 32; j++) masks[j] = 1.0;
        for (int j = 32; j < 64; j++) masks[64 + j] = 1.0;
        Tensor mask_t = Tensor::constant({2, 8, 8}, masks);
        FeatureExtractor phi = FeatureExtractor::random(4, 7);
        RngStream mask_rng(9, "gc-composed-mask");
        BinaryMask skam_mask = sample_mask({4, 8, 8}, mask_rng);
        LossWeights w;
        TonemapParams tm{5000.0};

        auto objective = [&](const std::vector<Tensor>& xs) {
            OrmParams p = orm;
            p.layers[0].w = xs[0];
            p.layers[5].w = xs[1];
            SkamStageParams s2 = SkamStageParams::from_group(stage.collect("s"), "s");
            s2.enc_s1.w = xs[2];
            auto [h, taps] = orm_forward(stacked, p);
            HdrImage img{h, PixelFormat::SrgbLinear, BayerPattern::RGGB};
            Tensor t_hin = domain_transfer(img, tm);
            Tensor org = l1(t_hin, t_gt);
            Tensor content = content_loss_transferred(t_hin, h_hat, phi, w.lambda_perc);
            Tensor color = color_loss_transferred(t_hin, h_hat, mask_t, small_spec,
                                                  MaskedHistogramMode::InMaskOnly);
            Tensor feat = skam_forward(taps[0], tap_t, s2, skam_mask).second;
            return (org + w.lambda1 * content) + w.lambda2 * color + feat;
        };
        double err = 0.0;
        std::vector<Tensor> xs{orm.layers[0].w, orm.layers[5].w, stage.enc_s1.w};
        for (std::size_t i = 0; i < xs.size(); i++) {
            err = std::max(err, gradcheck_wrt(objective, xs, i, 1e-5));
        }
        out.push_back(entry("composed_objective", err, 1e-4));
    }
    return out;
}

}  // namespace hdrdistill
