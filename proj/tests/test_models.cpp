#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hdrdistill/models.hpp"
#include "hdrdistill/rng.hpp"

using namespace hdrdistill;

namespace {

Tensor rand_const(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::constant(shape, std::move(v));
}

SdrStack make_stack(int n, int c, int h, int w, RngStream& rng) {
    SdrStack s;
    s.format = c == 1 ? PixelFormat::RawBayer : PixelFormat::SrgbLinear;
    for (int i = 0; i < n; i++) s.frames.push_back(rand_const({c, h, w}, rng, 0.0, 1.0));
    for (int i = 0; i < n; i++) s.exposure_times.push_back(std::pow(4.0, i));
    return s;
}

}  // namespace

TEST_CASE("orm output contract") {
    RngStream rng(3, "orm-test");
    {
        RngStream init(1, "init");
        OrmParams p = OrmParams::create(18, 3, 8, init);
        SdrStack stack = make_stack(3, 3, 16, 16, rng);
        auto [img, taps] = orm_forward(stack, p);
        CHECK(img.data.shape() == Shape{3, 16, 16});
        CHECK(img.format == PixelFormat::SrgbLinear);
        REQUIRE(taps.size() == 3);
        CHECK(taps[0].shape() == Shape{8, 16, 16});
        CHECK(taps[2].shape() == Shape{3, 16, 16});
        for (double v : img.data.values()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    {
        RngStream init(1, "init");
        OrmParams p = OrmParams::create(10, 1, 8, init);
        SdrStack stack = make_stack(5, 1, 16, 16, rng);
        auto [img, taps] = orm_forward(stack, p);
        CHECK(img.data.shape() == Shape{1, 16, 16});
        CHECK(img.format == PixelFormat::RawBayer);
    }
}

TEST_CASE("orm determinism and shape errors") {
    RngStream rng(5, "orm-det");
    RngStream i1(42, "init-orm"), i2(42, "init-orm");
    OrmParams a = OrmParams::create(18, 3, 8, i1);
    OrmParams b = OrmParams::create(18, 3, 8, i2);
    SdrStack stack = make_stack(3, 3, 16, 16, rng);
    auto [ia, ta] = orm_forward(stack, a);
    auto [ib, tb] = orm_forward(stack, b);
    CHECK(ia.data.values() == ib.data.values());  // same seed, same weights, same output

    SdrStack bad = make_stack(2, 3, 16, 16, rng);
    CHECK_THROWS_AS(orm_forward(bad, a), ShapeMismatchError);
    SdrStack one;
    one.frames.push_back(rand_const({3, 16, 16}, rng));
    CHECK_THROWS_AS(stack_frames(one), ShapeMismatchError);
}

TEST_CASE("prior fusion block residual path") {
    PriorFusionParams p = PriorFusionParams::zeros(4);
    RngStream rng(7, "pfb-test");
    Tensor f_k = rand_const({4, 6, 6}, rng);
    Tensor zero_prior = Tensor::constant({4, 6, 6}, 0.0);
    // Zero weights: attention mixes V=0, out conv is zero -> identity.
    Tensor out = prior_fusion_block(f_k, zero_prior, p);
    CHECK(out.values() == f_k.values());
    CHECK(out.shape() == f_k.shape());

    CHECK_THROWS_AS(prior_fusion_block(f_k, Tensor::constant({4, 3, 3}, 0.0), p),
                    ShapeMismatchError);
}

TEST_CASE("attention rows sum to one") {
    RngStream init(11, "pfb-init");
    PriorFusionParams p = PriorFusionParams::create(6, init);
    RngStream rng(13, "pfb-rows");
    Tensor f_k = rand_const({6, 5, 5}, rng);
    Tensor p_f = rand_const({6, 5, 5}, rng);
    // Rebuild the attention exactly as the block does.
    auto normalize = [](const Tensor& m) {
        return m / sqrt(sum(square(m), {2}, true) + 1e-12);
    };
    Tensor q = normalize(reshape(apply(p.q_dw, apply(p.q_pw, p_f)), {1, 6, 25}));
    Tensor k = normalize(reshape(apply(p.k_dw, apply(p.k_pw, f_k)), {1, 6, 25}));
    Tensor attn = softmax(matmul(k, transpose_last2(q)) / p.gamma, 2);
    auto av = attn.values();
    for (int r = 0; r < 6; r++) {
        double s = 0.0;
        for (int c = 0; c < 6; c++) s += av[r * 6 + c];
        CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("attention depends on K Q^T and gamma only through their ratio") {
    // Softmax((L/c) / (gamma/c)) is bit-identical to Softmax(L / gamma) for
    // power-of-two c: both scalings are exact.
    RngStream rng(17, "pfb-gamma-ratio");
    Tensor logits = rand_const({4, 4}, rng);
    for (double c : {2.0, 0.25, 16.0}) {
        Tensor base = softmax(logits / Tensor::variable({1}, {1.5}), 1);
        Tensor scaled = softmax((logits * (1.0 / c)) / Tensor::variable({1}, {1.5 / c}), 1);
        CHECK(base.values() == scaled.values());
    }
}

TEST_CASE("q/k projection magnitudes are normalized away") {
    RngStream init(17, "pfb-gamma");
    PriorFusionParams p = PriorFusionParams::create(4, init);
    RngStream rng(19, "pfb-gamma-data");
    Tensor f_k = rand_const({4, 4, 4}, rng);
    Tensor p_f = rand_const({4, 4, 4}, rng);
    Tensor base = prior_fusion_block(f_k, p_f, p);

    // Row-normalized Q/K: scaling the K projection by a power of two leaves
    // the block bit-identical.
    auto scale_conv = [](const ConvParam& c, double s) {
        ConvParam out = c;
        std::vector<double> w = c.w.values();
        for (auto& v : w) v *= s;
        out.w = Tensor::variable(c.w.shape(), std::move(w));
        if (c.b.defined()) {
            std::vector<double> b = c.b.values();
            for (auto& v : b) v *= s;
            out.b = Tensor::variable(c.b.shape(), std::move(b));
        }
        return out;
    };
    PriorFusionParams p2;
    p2.q_pw = p.q_pw;
    p2.q_dw = p.q_dw;
    p2.k_pw = scale_conv(p.k_pw, 4.0);
    p2.k_dw = p.k_dw;
    p2.v_pw = p.v_pw;
    p2.v_dw = p.v_dw;
    p2.out_pw = p.out_pw;
    p2.gamma = p.gamma;
    Tensor scaled = prior_fusion_block(f_k, p_f, p2);
    auto bv = base.values();
    auto sv = scaled.values();
    for (std::size_t i = 0; i < bv.size(); i++) {
        // exact up to the normalization stabilizer
        CHECK(sv[i] == doctest::Approx(bv[i]).epsilon(1e-12));
    }
}

TEST_CASE("spgrm identity at zero weights and taps contract") {
    SpgrmParams p = SpgrmParams::zeros(4);
    RngStream rng(23, "spgrm-test");
    Tensor h_s = rand_const({3, 8, 8}, rng, 0.0, 1.0);
    Tensor p_f = rand_const({4, 8, 8}, rng);
    auto [out, taps] = spgrm_forward(h_s, p_f, p);
    CHECK(out.values() == h_s.values());
    REQUIRE(taps.size() == 3);
    CHECK(taps[0].shape() == Shape{4, 8, 8});
    CHECK(taps[2].shape() == Shape{4, 8, 8});

    RngStream init(29, "spgrm-init");
    SpgrmParams trained = SpgrmParams::create(4, init);
    auto [out2, taps2] = spgrm_forward(h_s, p_f, trained);
    for (double v : out2.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(spgrm_forward(rand_const({4, 8, 8}, rng), p_f, trained),
                    ShapeMismatchError);
}

TEST_CASE("parameter group round trip") {
    RngStream init(31, "roundtrip");
    OrmParams orm = OrmParams::create(18, 3, 6, init);
    ParamGroup g = orm.collect("orm");
    OrmParams back = OrmParams::from_group(g, "orm");
    CHECK(back.width == 6);
    CHECK(back.in_ch == 18);
    CHECK(back.out_ch == 3);
    for (int i = 0; i < 6; i++) {
        CHECK(back.layers[i].w.values() == orm.layers[i].w.values());
    }

    SpgrmParams spgrm = SpgrmParams::create(5, init);
    SpgrmParams back2 = SpgrmParams::from_group(spgrm.collect("spgrm"), "spgrm");
    CHECK(back2.width == 5);
    CHECK(back2.modules[1].pfb.gamma.item() == spgrm.modules[1].pfb.gamma.item());
}
