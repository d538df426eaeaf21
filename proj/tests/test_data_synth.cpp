#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "hdrdistill/data_synth.hpp"
#include "hdrdistill/metrics.hpp"
#include "hdrdistill/rng.hpp"

using namespace hdrdistill;

namespace {

SceneConfig small_cfg() {
    SceneConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    cfg.n_frames = 3;
    return cfg;
}

}  // namespace

TEST_CASE("scene generation basics") {
    SceneConfig cfg = small_cfg();
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 44ull}) {
        SyntheticScene s = generate_scene(cfg, seed);
        CHECK(s.n_instances >= cfg.min_instances);
        CHECK(s.n_instances <= cfg.max_instances);
        // Every pixel labeled exactly once, labels contiguous from 0.
        std::set<int> seen(s.instances.begin(), s.instances.end());
        CHECK(*seen.rbegin() == s.n_instances);
        for (int lbl = 1; lbl <= s.n_instances; lbl++) CHECK(seen.count(lbl));
        // Values normalized into [0,1].
        auto v = s.hdr_gt.data.values();
        double mx = *std::max_element(v.begin(), v.end());
        double mn = *std::min_element(v.begin(), v.end());
        CHECK(mx == doctest::Approx(1.0));
        CHECK(mn >= 0.0);
        // Exposure times strictly increasing.
        for (std::size_t i = 1; i < s.exposure_times.size(); i++) {
            CHECK(s.exposure_times[i] > s.exposure_times[i - 1]);
        }
    }
}

TEST_CASE("scene determinism per seed") {
    SceneConfig cfg = small_cfg();
    SyntheticScene a = generate_scene(cfg, 99);
    SyntheticScene b = generate_scene(cfg, 99);
    CHECK(a.hdr_gt.data.values() == b.hdr_gt.data.values());
    CHECK(a.instances == b.instances);
    CHECK(a.motion == b.motion);
    SyntheticScene c = generate_scene(cfg, 100);
    CHECK(a.hdr_gt.data.values() != c.hdr_gt.data.values());
}

TEST_CASE("dynamic range before normalization") {
    SceneConfig cfg = small_cfg();
    // Radiance spans >= 3 decades: after normalizing the max to 1, the
    // background should sit at or below 1e-3 relative.
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 20; seed++) {
        SyntheticScene s = generate_scene(cfg, seed);
        auto v = s.hdr_gt.data.values();
        double mn = *std::min_element(v.begin(), v.end());
        if (mn <= 1e-3) ok++;
    }
    CHECK(ok == 20);
}

TEST_CASE("exposure simulation degenerate pipeline") {
    SceneConfig cfg = small_cfg();
    cfg.noise_sigma = 0.0;
    cfg.max_shift = 0;
    SyntheticScene s = generate_scene(cfg, 7);
    s.exposure_times = {1.0, 1.0, 1.0};
    SdrStack stack = simulate_exposures(s);
    auto gt = s.hdr_gt.data.values();
    auto frame = stack.frames[0].values();
    for (std::size_t i = 0; i < gt.size(); i++) {
        CHECK(frame[i] == doctest::Approx(std::round(gt[i] * 255.0) / 255.0).epsilon(1e-12));
    }
}

TEST_CASE("exposure linearity before quantization") {
    SceneConfig cfg = small_cfg();
    cfg.noise_sigma = 0.0;
    cfg.max_shift = 0;
    cfg.quantize_8bit = false;
    SyntheticScene s = generate_scene(cfg, 11);
    s.exposure_times = {0.125, 0.25, 1.0};
    SdrStack stack = simulate_exposures(s);
    auto f0 = stack.frames[0].values();
    auto f1 = stack.frames[1].values();
    for (std::size_t i = 0; i < f0.size(); i++) {
        if (f1[i] < 0.999) {  // unclipped in the longer exposure
            CHECK(f1[i] == doctest::Approx(2.0 * f0[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("saturation asymmetry across exposures") {
    SceneConfig cfg = small_cfg();
    int wins = 0;
    std::size_t long_sat_total = 0, short_sat_total = 0;
    for (std::uint64_t seed = 0; seed < 100; seed++) {
        SyntheticScene s = generate_scene(cfg, seed);
        SdrStack stack = simulate_exposures(s);
        auto count_sat = [](const Tensor& f) {
            std::size_t n = 0;
            for (double v : f.values()) n += v >= 1.0 ? 1 : 0;
            return n;
        };
        std::size_t short_sat = count_sat(stack.frames.front());
        std::size_t long_sat = count_sat(stack.frames.back());
        long_sat_total += long_sat;
        short_sat_total += short_sat;
        if (long_sat > short_sat) wins++;
    }
    CHECK(long_sat_total > short_sat_total);
    CHECK(wins >= 95);  // near-universal, not just on average
}

TEST_CASE("bayer mosaic round trip") {
    SceneConfig cfg = small_cfg();
    cfg.noise_sigma = 0.0;

    // Constant image survives mosaic + demosaic exactly.
    Tensor c = Tensor::constant({3, 8, 8}, 0.42);
    Tensor rt = demosaic_bilinear(mosaic_image(c, BayerPattern::RGGB), BayerPattern::RGGB);
    for (double v : rt.values()) CHECK(v == doctest::Approx(0.42).epsilon(1e-15));

    SyntheticScene s = generate_scene(cfg, 3);
    SdrStack raw = to_raw_bayer(simulate_exposures(s), BayerPattern::RGGB);
    CHECK(raw.frames[0].dim(0) == 1);
    CHECK(raw.format == PixelFormat::RawBayer);
}

TEST_CASE("demosaic round trip on smooth scenes exceeds 35 dB") {
    RngStream rng(5, "smooth-roundtrip");
    double worst = 1e9;
    for (int t = 0; t < 20; t++) {
        // Smooth low-frequency field: sums of gentle gradients.
        int n = 32;
        std::vector<double> img(3 * n * n);
        double ax = rng.uniform(-0.4, 0.4), ay = rng.uniform(-0.4, 0.4);
        for (int c = 0; c < 3; c++) {
            double base = rng.uniform(0.2, 0.6);
            double px = rng.uniform(-0.25, 0.25), py = rng.uniform(-0.25, 0.25);
            for (int y = 0; y < n; y++) {
                for (int x = 0; x < n; x++) {
                    double v = base + px * x / n + py * y / n +
                               0.1 * std::sin(ax * x / 4.0) * std::cos(ay * y / 4.0);
                    img[(c * n + y) * n + x] = std::min(0.95, std::max(0.05, v));
                }
            }
        }
        Tensor t_img = Tensor::constant({3, n, n}, img);
        Tensor rt = demosaic_bilinear(mosaic_image(t_img, BayerPattern::RGGB),
                                      BayerPattern::RGGB);
        worst = std::min(worst, psnr(rt, t_img));
    }
    CHECK(worst > 35.0);
}

TEST_CASE("scene file round trip") {
    SceneConfig cfg = small_cfg();
    SyntheticScene s = generate_scene(cfg, 17);
    SdrStack stack = simulate_exposures(s);
    std::string path = "/tmp/hdrdistill_scene_test.scn";
    save_scene(path, s, stack);
    LoadedScene loaded = load_scene(path);
    CHECK(loaded.height == 32);
    CHECK(loaded.stack.frames.size() == stack.frames.size());
    CHECK(loaded.instances == s.instances);
    auto a = stack.frames[1].values();
    auto b = loaded.stack.frames[1].values();
    for (std::size_t i = 0; i < a.size(); i++) {
        CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-6));  // f32 storage
    }
    std::remove(path.c_str());
}
