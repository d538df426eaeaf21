#pragma once

#include <cstdint>
#include <string>

#include "hdrdistill/data_synth.hpp"
#include "hdrdistill/histogram.hpp"
#include "hdrdistill/objectives.hpp"

namespace hdrdistill {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Every knob of a run in one serializable record. The file format is flat
// `key = value` lines with '#' comments; unknown keys are rejected.
struct TrainConfig {
    std::uint64_t seed = 1;
    int image_size = 64;
    int n_frames = 3;
    std::string format = "srgb";  // srgb | raw
    std::string bayer = "rggb";   // rggb | bggr | grbg | gbrg
    int epochs = 30;
    int batch_size = 8;

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double lr = 2e-4;
    double adam_eps = 1e-8;

    double lambda_perc = 1e-2;
    double lambda1 = 1e-3;
    double lambda2 = 100.0;

    int hist_bins = 256;
    double hist_min = 0.0;
    double hist_max = 255.0;
    double hist_sigma = 400.0;
    std::string hist_mask_mode = "in_mask";  // in_mask | product

    double mu = 5000.0;
    int k_masks = 50;
    int skam_stages = 3;

    int orm_width = 12;
    int spgrm_width = 12;
    int skam_latent = 8;
    int phi_width = 8;
    int fpn_out = 12;  // must match spgrm_width

    int train_scenes = 200;
    int test_scenes = 50;
    double noise_sigma = 0.04;
    int max_shift = 3;
    double exposure_ratio = 4.0;
    int min_instances = 3;
    int max_instances = 10;

    std::string output_dir = "out";

    void validate() const;

    PixelFormat pixel_format() const;
    BayerPattern bayer_pattern() const;
    MaskedHistogramMode mask_mode() const;
    HistogramSpec hist_spec() const { return {hist_bins, hist_min, hist_max, hist_sigma}; }
    TonemapParams tonemap() const { return {mu}; }
    LossWeights weights() const { return {lambda_perc, lambda1, lambda2}; }
    SceneConfig scene_config() const;
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path);
std::string serialize_config(const TrainConfig& cfg);

}  // namespace hdrdistill
