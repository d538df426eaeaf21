#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hdrdistill/domain_transfer.hpp"
#include "hdrdistill/gradcheck.hpp"
#include "hdrdistill/rng.hpp"

using namespace hdrdistill;

namespace {

Tensor random_unit(const Shape& shape, RngStream& rng, double lo = 0.02, double hi = 0.98) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::variable(shape, std::move(v));
}

// Direct neighbor-averaging evaluation, independent of the library stencil:
// walks every pixel, collects same-color sites of the 3x3 window by scanning
// the whole mosaic with Chebyshev distance <= 1.
std::vector<double> demosaic_oracle(const std::vector<double>& mosaic, int h, int w) {
    auto color_of = [](int y, int x) {  // RGGB
        if (y % 2 == 0) return x % 2 == 0 ? 0 : 1;
        return x % 2 == 0 ? 1 : 2;
    };
    std::vector<double> out(3 * h * w, 0.0);
    for (int ch = 0; ch < 3; ch++) {
        for (int py = 0; py < h; py++) {
            for (int px = 0; px < w; px++) {
                double acc = 0.0;
                int cnt = 0;
                for (int qy = 0; qy < h; qy++) {
                    for (int qx = 0; qx < w; qx++) {
                        if (std::max(std::abs(qy - py), std::abs(qx - px)) > 1) continue;
                        if (color_of(qy, qx) != ch) continue;
                        acc += mosaic[qy * w + qx];
                        cnt++;
                    }
                }
                out[(ch * h + py) * w + px] = acc / cnt;
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("mu_law endpoints and closed form") {
    TonemapParams p{5000.0};
    CHECK(mu_law(Tensor::constant({1}, {0.0}), p).item() == 0.0);
    CHECK(mu_law(Tensor::constant({1}, {1.0}), p).item() == doctest::Approx(1.0).epsilon(1e-15));
    double expected = std::log(2501.0) / std::log(5001.0);
    CHECK(mu_law(Tensor::constant({1}, {0.5}), p).item() ==
          doctest::Approx(expected).epsilon(1e-15));
    CHECK_THROWS_AS(mu_law(Tensor::constant({1}, {1.5}), p), DomainError);
    CHECK_THROWS_AS(mu_law(Tensor::constant({1}, {-0.1}), p), DomainError);
}

TEST_CASE("mu_law monotone and in range") {
    TonemapParams p{5000.0};
    RngStream rng(3, "mu-monotone");
    double prev_x = 0.0, prev_y = 0.0;
    for (int i = 0; i < 64; i++) {
        double x = prev_x + rng.uniform(1e-4, 0.015);
        double y = mu_law(Tensor::constant({1}, {std::min(x, 1.0)}), p).item();
        CHECK(y > prev_y);
        CHECK(y >= 0.0);
        CHECK(y <= 1.0 + 1e-12);
        prev_x = std::min(x, 1.0);
        prev_y = y;
    }
}

TEST_CASE("mu_law inverse round trip") {
    TonemapParams p{5000.0};
    CHECK(mu_law_inverse(Tensor::constant({1}, {0.0}), p).item() == 0.0);
    CHECK(mu_law_inverse(Tensor::constant({1}, {1.0}), p).item() ==
          doctest::Approx(1.0).epsilon(1e-14));
    RngStream rng(5, "mu-roundtrip");
    std::vector<double> xs(64);
    for (auto& v : xs) v = rng.uniform();
    Tensor x = Tensor::constant({64}, xs);
    Tensor back = mu_law_inverse(mu_law(x, p), p);
    for (int i = 0; i < 64; i++) {
        CHECK(std::fabs(back.values()[i] - xs[i]) < 1e-10);
    }
}

TEST_CASE("mu_law gradient, including the x=0 edge") {
    TonemapParams p{5000.0};
    RngStream rng(7, "mu-grad");
    Tensor x = random_unit({1, 4, 4}, rng);
    double err = gradcheck(
        [p](const std::vector<Tensor>& xs) { return sum(square(mu_law(xs[0], p))); }, {x});
    CHECK(err < 1e-6);

    // Analytic derivative at zero is mu/ln(1+mu); compare to a one-sided difference.
    Tensor zero = Tensor::variable({1}, {0.0});
    backward(sum(mu_law(zero, p)));
    double analytic = zero.grad()[0];
    CHECK(analytic == doctest::Approx(p.mu / std::log1p(p.mu)).epsilon(1e-12));
    double h = 1e-9;
    double one_sided = mu_law(Tensor::constant({1}, {h}), p).item() / h;
    CHECK(analytic == doctest::Approx(one_sided).epsilon(1e-4));
}

TEST_CASE("demosaic constants and linearity") {
    Tensor c = Tensor::constant({1, 4, 4}, 0.37);
    Tensor rgb = demosaic_bilinear(c, BayerPattern::RGGB);
    REQUIRE(rgb.shape() == Shape{3, 4, 4});
    for (double v : rgb.values()) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));

    RngStream rng(11, "demosaic-linearity");
    std::vector<double> m(36);
    for (auto& v : m) v = rng.uniform();
    for (double a : {0.25, 0.5, 1.0}) {
        std::vector<double> scaled(m);
        for (auto& v : scaled) v *= a;
        Tensor full = demosaic_bilinear(Tensor::constant({1, 6, 6}, m), BayerPattern::RGGB);
        Tensor part = demosaic_bilinear(Tensor::constant({1, 6, 6}, scaled), BayerPattern::RGGB);
        for (std::size_t i = 0; i < full.size(); i++) {
            CHECK(part.values()[i] == doctest::Approx(a * full.values()[i]).epsilon(1e-12));
        }
    }

    CHECK_THROWS_AS(demosaic_bilinear(Tensor::constant({1, 5, 4}, 0.0), BayerPattern::RGGB),
                    ShapeMismatchError);
}

TEST_CASE("demosaic matches the neighbor-averaging oracle") {
    RngStream rng(13, "demosaic-oracle");
    for (int trial = 0; trial < 8; trial++) {
        int h = 4 + 2 * (trial % 3), w = 4 + 2 * (trial % 2);
        std::vector<double> m(static_cast<std::size_t>(h) * w);
        for (auto& v : m) v = rng.uniform();
        Tensor got = demosaic_bilinear(Tensor::constant({1, h, w}, m), BayerPattern::RGGB);
        auto want = demosaic_oracle(m, h, w);
        for (std::size_t i = 0; i < want.size(); i++) {
            CHECK(got.values()[i] == doctest::Approx(want[i]).epsilon(1e-15));
        }
    }
}

TEST_CASE("demosaic covers every Bayer pattern") {
    RngStream rng(17, "demosaic-patterns");
    std::vector<double> m(16);
    for (auto& v : m) v = rng.uniform();
    for (auto p : {BayerPattern::RGGB, BayerPattern::BGGR, BayerPattern::GRBG,
                   BayerPattern::GBRG}) {
        Tensor rgb = demosaic_bilinear(Tensor::constant({1, 4, 4}, m), p);
        REQUIRE(rgb.shape() == Shape{3, 4, 4});
        for (double v : rgb.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("domain transfer dispatch") {
    TonemapParams p{5000.0};
    HdrImage zero{Tensor::constant({3, 4, 4}, 0.0), PixelFormat::SrgbLinear};
    for (double v : domain_transfer(zero, p).values()) CHECK(v == 0.0);

    HdrImage raw{Tensor::constant({1, 4, 4}, 0.3), PixelFormat::RawBayer, BayerPattern::RGGB};
    Tensor t = domain_transfer(raw, p);
    REQUIRE(t.shape() == Shape{3, 4, 4});
    double want = mu_law(Tensor::constant({1}, {0.3}), p).item();
    for (double v : t.values()) CHECK(v == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("domain transfer gradcheck through the RAW chain") {
    TonemapParams p{5000.0};
    RngStream rng(19, "raw-gradcheck");
    Tensor mosaic = random_unit({1, 8, 8}, rng);
    double err = gradcheck(
        [p](const std::vector<Tensor>& xs) {
            HdrImage img{xs[0], PixelFormat::RawBayer, BayerPattern::RGGB};
            return sum(domain_transfer(img, p));
        },
        {mosaic});
    CHECK(err < 1e-5);
}

TEST_CASE("range preservation") {
    TonemapParams p{5000.0};
    RngStream rng(23, "range");
    Tensor x = random_unit({3, 6, 6}, rng, 0.0, 1.0);
    HdrImage img{x.detach(), PixelFormat::SrgbLinear};
    for (double v : domain_transfer(img, p).values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-12);
    }
}
