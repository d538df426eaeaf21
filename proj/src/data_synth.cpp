#include "hdrdistill/data_synth.hpp"

#include <algorithm>
#include <cmath>

#include "hdrdistill/raster_io.hpp"
#include "hdrdistill/rng.hpp"

namespace hdrdistill {

namespace {

int bayer_color(BayerPattern p, int y, int x) {
    int yy = y & 1, xx = x & 1;
    switch (p) {
        case BayerPattern::RGGB: return yy == 0 ? (xx == 0 ? 0 : 1) : (xx == 0 ? 1 : 2);
        case BayerPattern::BGGR: return yy == 0 ? (xx == 0 ? 2 : 1) : (xx == 0 ? 1 : 0);
        case BayerPattern::GRBG: return yy == 0 ? (xx == 0 ? 1 : 0) : (xx == 0 ? 2 : 1);
        default: return yy == 0 ? (xx == 0 ? 1 : 2) : (xx == 0 ? 0 : 1);
    }
}

struct ShapeSpec {
    bool ellipse;
    double cy, cx, ry, rx;
    double radiance;
    double ramp;       // along-x radiance tilt inside the shape
    double rgb[3];
};

bool inside(const ShapeSpec& s, int y, int x) {
    double dy = (y - s.cy) / s.ry;
    double dx = (x - s.cx) / s.rx;
    return s.ellipse ? dy * dy + dx * dx <= 1.0
                     : std::fabs(dy) <= 1.0 && std::fabs(dx) <= 1.0;
}

// One attempt at a scene; fails when occlusion erased a shape.
bool try_generate(const SceneConfig& cfg, std::uint64_t seed, std::uint64_t salt,
                  SyntheticScene& out) {
    RngStream rng(seed, "scene-" + std::to_string(salt));
    const int h = cfg.height, w = cfg.width;
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    int n_shapes = rng.uniform_int(cfg.min_instances, cfg.max_instances);

    // Background: dim smooth gradient, bottom of the dynamic range.
    double floor_log = -cfg.radiance_decades - 0.2;
    double bg_base = std::pow(10.0, rng.uniform(floor_log, floor_log + 0.5));
    double gx = rng.uniform(-0.5, 0.5), gy = rng.uniform(-0.5, 0.5);
    double bg_rgb[3];
    for (auto& v : bg_rgb) v = rng.uniform(0.4, 1.0);

    std::vector<ShapeSpec> shapes(n_shapes);
    for (int i = 0; i < n_shapes; i++) {
        ShapeSpec& s = shapes[i];
        s.ellipse = rng.bernoulli();
        s.cy = rng.uniform(0.15, 0.85) * h;
        s.cx = rng.uniform(0.15, 0.85) * w;
        s.ry = rng.uniform(0.10, 0.30) * h;
        s.rx = rng.uniform(0.10, 0.30) * w;
        // First shape pinned near the top of the range so the span is real.
        double lg = i == 0 ? rng.uniform(-0.3, 0.0) : rng.uniform(-cfg.radiance_decades + 0.6, 0.0);
        s.radiance = std::pow(10.0, lg);
        s.ramp = rng.uniform(-0.3, 0.3);
        for (auto& v : s.rgb) v = rng.uniform(0.25, 1.0);
    }

    std::vector<int> labels(hw, 0);
    std::vector<double> data(3 * hw);
    double max_v = 0.0;
    for (int y = 0; y < h; y++) {
        for (int x = 0; x < w; x++) {
            std::size_t p = static_cast<std::size_t>(y) * w + x;
            double rad = bg_base * (1.0 + gx * (2.0 * x / w - 1.0) + gy * (2.0 * y / h - 1.0) * 0.5);
            rad = std::max(rad, bg_base * 0.3);
            const double* rgb = bg_rgb;
            for (int i = 0; i < n_shapes; i++) {
                if (inside(shapes[i], y, x)) {
                    labels[p] = i + 1;
                    rad = shapes[i].radiance * (1.0 + shapes[i].ramp * (x - shapes[i].cx) /
                                                          std::max(1.0, shapes[i].rx));
                    rad = std::max(rad, shapes[i].radiance * 0.5);
                    rgb = shapes[i].rgb;
                }
            }
            for (int c = 0; c < 3; c++) {
                double v = rad * rgb[c];
                data[c * hw + p] = v;
                max_v = std::max(max_v, v);
            }
        }
    }

    std::vector<std::size_t> counts(n_shapes + 1, 0);
    for (int lbl : labels) counts[lbl]++;
    for (int i = 1; i <= n_shapes; i++) {
        if (counts[i] < 8) return false;  // fully occluded or sliver shape
    }
    double min_v = max_v;
    for (double v : data) min_v = std::min(min_v, v);
    if (max_v < min_v * std::pow(10.0, cfg.radiance_decades)) return false;  // span too small

    for (auto& v : data) v /= max_v;

    out.height = h;
    out.width = w;
    out.seed = seed;
    out.n_instances = n_shapes;
    out.instances = std::move(labels);
    out.hdr_gt = HdrImage{Tensor::constant({3, h, w}, std::move(data)),
                          PixelFormat::SrgbLinear, cfg.pattern};
    out.noise_sigma = cfg.noise_sigma;
    out.quantize_8bit = cfg.quantize_8bit;

    out.exposure_times.resize(cfg.n_frames);
    for (int i = 0; i < cfg.n_frames; i++) out.exposure_times[i] = std::pow(cfg.exposure_ratio, i);

    out.motion.assign(cfg.n_frames, {0, 0});
    int ref = cfg.n_frames / 2;
    for (int i = 0; i < cfg.n_frames; i++) {
        if (i == ref) continue;
        out.motion[i] = {rng.uniform_int(-cfg.max_shift, cfg.max_shift),
                         rng.uniform_int(-cfg.max_shift, cfg.max_shift)};
    }
    return true;
}

}  // namespace

SyntheticScene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
    SyntheticScene scene;
    for (std::uint64_t salt = 0;; salt++) {
        if (try_generate(cfg, seed, salt, scene)) return scene;
    }
}

SdrStack simulate_exposures(const SyntheticScene& scene) {
    const int h = scene.height, w = scene.width;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    auto hdr = scene.hdr_gt.data.values();
    RngStream noise(scene.seed, "exposure-noise");

    SdrStack stack;
    stack.exposure_times = scene.exposure_times;
    stack.format = PixelFormat::SrgbLinear;
    stack.pattern = scene.hdr_gt.pattern;
    for (std::size_t f = 0; f < scene.exposure_times.size(); f++) {
        double t = scene.exposure_times[f];
        auto [dy, dx] = scene.motion[f];
        std::vector<double> frame(3 * hw);
        for (int c = 0; c < 3; c++) {
            for (int y = 0; y < h; y++) {
                int sy = std::min(h - 1, std::max(0, y - dy));
                for (int x = 0; x < w; x++) {
                    int sx = std::min(w - 1, std::max(0, x - dx));
                    double v = hdr[c * hw + static_cast<std::size_t>(sy) * w + sx] * t;
                    if (scene.noise_sigma > 0.0) v += scene.noise_sigma * noise.normal();
                    v = std::min(1.0, std::max(0.0, v));
                    if (scene.quantize_8bit) v = std::round(v * 255.0) / 255.0;
                    frame[c * hw + static_cast<std::size_t>(y) * w + x] = v;
                }
            }
        }
        stack.frames.push_back(Tensor::constant({3, h, w}, std::move(frame)));
    }
    return stack;
}

Tensor mosaic_image(const Tensor& rgb, BayerPattern pattern) {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3) {
        throw ShapeMismatchError("mosaic expects [3,H,W], got " + shape_str(rgb.shape()));
    }
    int h = rgb.dim(1), w = rgb.dim(2);
    if (h % 2 || w % 2) throw ShapeMismatchError("mosaic needs even spatial dims");
    auto v = rgb.values();
    std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(hw);
    for (int y = 0; y < h; y++) {
        for (int x = 0; x < w; x++) {
            std::size_t p = static_cast<std::size_t>(y) * w + x;
            out[p] = v[bayer_color(pattern, y, x) * hw + p];
        }
    }
    return Tensor::constant({1, h, w}, std::move(out));
}

SdrStack to_raw_bayer(const SdrStack& stack, BayerPattern pattern) {
    SdrStack raw;
    raw.exposure_times = stack.exposure_times;
    raw.format = PixelFormat::RawBayer;
    raw.pattern = pattern;
    for (const auto& f : stack.frames) raw.frames.push_back(mosaic_image(f, pattern));
    return raw;
}

HdrImage scene_target(const SyntheticScene& scene, PixelFormat format, BayerPattern pattern) {
    if (format == PixelFormat::SrgbLinear) return scene.hdr_gt;
    return HdrImage{mosaic_image(scene.hdr_gt.data, pattern), PixelFormat::RawBayer, pattern};
}

// ---------------------------------------------------------------------------
// persistence

void save_scene(const std::string& path, const SyntheticScene& scene, const SdrStack& stack) {
    const int h = scene.height, w = scene.width;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const int c = stack.frames.empty() ? 3 : stack.frames[0].dim(0);
    const std::uint32_t n = static_cast<std::uint32_t>(stack.frames.size());

    Raster r;
    r.magic = "SCN1";
    r.k = n;
    r.c = static_cast<std::uint32_t>(c);
    r.h = static_cast<std::uint32_t>(h);
    r.w = static_cast<std::uint32_t>(w);
    r.payload.reserve(n + n * c * hw + 4 * hw);
    for (double t : stack.exposure_times) r.payload.push_back(static_cast<float>(t));
    for (const auto& f : stack.frames) {
        for (double v : f.values()) r.payload.push_back(static_cast<float>(v));
    }
    for (double v : scene.hdr_gt.data.values()) r.payload.push_back(static_cast<float>(v));
    for (int lbl : scene.instances) r.payload.push_back(static_cast<float>(lbl));
    write_raster(path, r);
}

LoadedScene load_scene(const std::string& path) {
    Raster r = read_raster(path, "SCN1");
    const std::size_t hw = static_cast<std::size_t>(r.h) * r.w;
    const std::size_t expect = r.k + static_cast<std::size_t>(r.k) * r.c * hw + 4 * hw;
    if (r.payload.size() != expect) throw FormatError("scene payload size mismatch");

    LoadedScene out;
    out.height = static_cast<int>(r.h);
    out.width = static_cast<int>(r.w);
    std::size_t pos = 0;
    out.stack.format = r.c == 1 ? PixelFormat::RawBayer : PixelFormat::SrgbLinear;
    for (std::uint32_t i = 0; i < r.k; i++) out.stack.exposure_times.push_back(r.payload[pos++]);
    for (std::uint32_t i = 0; i < r.k; i++) {
        std::vector<double> frame(r.c * hw);
        for (auto& v : frame) v = r.payload[pos++];
        out.stack.frames.push_back(
            Tensor::constant({static_cast<int>(r.c), out.height, out.width}, std::move(frame)));
    }
    std::vector<double> gt(3 * hw);
    for (auto& v : gt) v = r.payload[pos++];
    out.gt_rgb = Tensor::constant({3, out.height, out.width}, std::move(gt));
    out.instances.resize(hw);
    for (auto& lbl : out.instances) lbl = static_cast<int>(r.payload[pos++]);
    return out;
}

}  // namespace hdrdistill
