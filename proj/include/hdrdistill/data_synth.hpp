#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hdrdistill/domain_transfer.hpp"
#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

struct SceneConfig {
    int height = 64;
    int width = 64;
    int n_frames = 3;
    PixelFormat format = PixelFormat::SrgbLinear;
    BayerPattern pattern = BayerPattern::RGGB;
    int min_instances = 3;
    int max_instances = 10;
    double radiance_decades = 3.0;  // dynamic range before normalization
    double noise_sigma = 0.04;      // read noise on the simulated SDR frames
    int max_shift = 3;              // per-frame integer motion, pixels
    double exposure_ratio = 4.0;
    bool quantize_8bit = true;
};

// Ground truth plus everything needed to re-simulate its exposures.
struct SyntheticScene {
    HdrImage hdr_gt;             // [3,H,W] linear radiance in [0,1]
    std::vector<int> instances;  // H*W labels; 0 background, 1..n shapes
    int n_instances = 0;
    std::vector<double> exposure_times;           // strictly increasing
    std::vector<std::pair<int, int>> motion;      // per-frame (dy, dx)
    double noise_sigma = 0.0;
    bool quantize_8bit = true;
    std::uint64_t seed = 0;
    int height = 0, width = 0;
};

struct SdrStack {
    std::vector<Tensor> frames;  // [C,H,W] constants
    std::vector<double> exposure_times;
    PixelFormat format = PixelFormat::SrgbLinear;
    BayerPattern pattern = BayerPattern::RGGB;
};

SyntheticScene generate_scene(const SceneConfig& cfg, std::uint64_t seed);

// frame_i = quantize(clip(shift(hdr, motion_i) * t_i + noise, 0, 1)).
// Short exposures come out dark and noisy, long ones clipped and displaced.
SdrStack simulate_exposures(const SyntheticScene& scene);

Tensor mosaic_image(const Tensor& rgb, BayerPattern pattern);  // [3,H,W] -> [1,H,W]
SdrStack to_raw_bayer(const SdrStack& stack, BayerPattern pattern);

// Ground truth in the format the reconstruction pipeline trains against.
HdrImage scene_target(const SyntheticScene& scene, PixelFormat format, BayerPattern pattern);

// "SCN1" container: {magic, n_frames, C, H, W}, then exposure times, frame
// planes, the RGB ground truth and the instance label plane, all f32.
struct LoadedScene {
    SdrStack stack;
    Tensor gt_rgb;               // [3,H,W]
    std::vector<int> instances;  // H*W labels
    int height = 0, width = 0;
};
void save_scene(const std::string& path, const SyntheticScene& scene, const SdrStack& stack);
LoadedScene load_scene(const std::string& path);

}  // namespace hdrdistill
