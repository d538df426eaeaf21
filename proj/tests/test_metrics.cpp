#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "hdrdistill/metrics.hpp"
#include "hdrdistill/rng.hpp"

using namespace hdrdistill;

namespace {

Tensor rand_img(const Shape& shape, RngStream& rng, double lo = 0.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::constant(shape, std::move(v));
}

// Direct windowed SSIM: explicit 2-D 11x11 Gaussian window per position,
// no separability tricks.
double ssim_oracle(const Tensor& ta, const Tensor& tb) {
    const int c = ta.dim(0), h = ta.dim(1), w = ta.dim(2);
    auto a = ta.values();
    auto b = tb.values();
    double win[11][11];
    double norm = 0.0;
    for (int i = 0; i < 11; i++) {
        for (int j = 0; j < 11; j++) {
            double dy = i - 5.0, dx = j - 5.0;
            win[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
            norm += win[i][j];
        }
    }
    for (auto& row : win)
        for (auto& v : row) v /= norm;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (int ch = 0; ch < c; ch++) {
        const double* pa = a.data() + static_cast<std::size_t>(ch) * h * w;
        const double* pb = b.data() + static_cast<std::size_t>(ch) * h * w;
        double acc = 0.0;
        int count = 0;
        for (int y = 0; y + 11 <= h; y++) {
            for (int x = 0; x + 11 <= w; x++) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (int i = 0; i < 11; i++) {
                    for (int j = 0; j < 11; j++) {
                        double va = pa[(y + i) * w + x + j];
                        double vb = pb[(y + i) * w + x + j];
                        mx += win[i][j] * va;
                        my += win[i][j] * vb;
                        xx += win[i][j] * va * va;
                        yy += win[i][j] * vb * vb;
                        xy += win[i][j] * va * vb;
                    }
                }
                double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
                acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                count++;
            }
        }
        total += acc / count;
    }
    return total / c;
}

}  // namespace

TEST_CASE("psnr basics") {
    Tensor a = Tensor::constant({1, 4, 4}, 0.5);
    CHECK(psnr(a, a) == 99.0);

    // MSE 1e-4 -> 40 dB; MSE 0.01 -> 20 dB.
    std::vector<double> b(16, 0.5);
    b[0] = 0.5 + std::sqrt(16.0 * 1e-4);
    CHECK(psnr(a, Tensor::constant({1, 4, 4}, b)) == doctest::Approx(40.0).epsilon(1e-12));
    std::vector<double> c(16, 0.5);
    for (auto& v : c) v = 0.4;
    CHECK(psnr(a, Tensor::constant({1, 4, 4}, c)) == doctest::Approx(20.0).epsilon(1e-12));

    CHECK_THROWS_AS(psnr(a, Tensor::constant({1, 2, 2}, 0.0)), ShapeMismatchError);
}

TEST_CASE("psnr symmetry") {
    RngStream rng(3, "psnr-sym");
    Tensor a = rand_img({3, 8, 8}, rng);
    Tensor b = rand_img({3, 8, 8}, rng);
    CHECK(psnr(a, b) == psnr(b, a));
    TonemapParams tm{5000.0};
    CHECK(psnr_mu(a, b, tm) == psnr_mu(b, a, tm));
}

TEST_CASE("psnr_mu composes tonemap with psnr") {
    TonemapParams tm{5000.0};
    RngStream rng(5, "psnr-mu");
    Tensor a = rand_img({3, 6, 6}, rng);
    Tensor b = rand_img({3, 6, 6}, rng);
    CHECK(psnr_mu(a, a, tm) == 99.0);
    double direct = psnr(mu_law(a, tm), mu_law(b, tm));
    CHECK(psnr_mu(a, b, tm) == direct);

    // Monotonicity: shrinking the tonemapped error never lowers psnr_mu.
    Tensor mid = Tensor::constant({3, 6, 6}, 0.5);
    Tensor near = Tensor::constant({3, 6, 6}, 0.52);
    Tensor far = Tensor::constant({3, 6, 6}, 0.6);
    CHECK(psnr_mu(mid, near, tm) > psnr_mu(mid, far, tm));
}

TEST_CASE("ssim identical and inverted") {
    RngStream rng(7, "ssim-basic");
    Tensor a = rand_img({1, 16, 16}, rng);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    Tensor inv = 1.0 - a;
    CHECK(ssim(a, inv.detach()) < 1.0);
    CHECK(ssim(a, inv.detach()) == ssim(inv.detach(), a));
}

TEST_CASE("ssim matches the direct-window oracle") {
    RngStream rng(11, "ssim-oracle");
    for (int t = 0; t < 4; t++) {
        Tensor a = rand_img({3, 16, 16}, rng);
        std::vector<double> noisy = a.values();
        for (auto& v : noisy) {
            v = std::min(1.0, std::max(0.0, v + 0.08 * rng.normal()));
        }
        Tensor b = Tensor::constant({3, 16, 16}, noisy);
        CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-6));
    }
}

TEST_CASE("metrics csv") {
    std::vector<MetricsRecord> rs{{"s0", 30.5, 33.25, 0.91}, {"s1", 28.0, 31.0, 0.88}};
    std::string path = "/tmp/hdrdistill_metrics_test.csv";
    write_metrics_csv(path, rs);
    std::ifstream is(path);
    std::string header, row0;
    std::getline(is, header);
    std::getline(is, row0);
    CHECK(header == "sample_id,psnr_l,psnr_mu,ssim");
    CHECK(row0.rfind("s0,", 0) == 0);
    double pl, pm, ss;
    REQUIRE(std::sscanf(row0.c_str(), "s0,%lf,%lf,%lf", &pl, &pm, &ss) == 3);
    CHECK(pl == 30.5);
    CHECK(pm == 33.25);
    CHECK(ss == 0.91);
    std::remove(path.c_str());
}
