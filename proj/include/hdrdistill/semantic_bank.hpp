#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "hdrdistill/data_synth.hpp"
#include "hdrdistill/layers.hpp"
#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

// Instance masks plus the four-level feature pyramid the teacher consumes.
// masks is [K,H,W] with {0,1} entries, padded with empty planes up to K;
// features run coarse to fine with spatial sizes H/16, H/8, H/4, H/2.
struct SegmentationPriors {
    Tensor masks;
    std::vector<Tensor> features;

    SegmentationPriors() { count_construction(); }
    SegmentationPriors(const SegmentationPriors& o) : masks(o.masks), features(o.features) {
        count_construction();
    }
    SegmentationPriors(SegmentationPriors&& o) noexcept
        : masks(std::move(o.masks)), features(std::move(o.features)) {
        count_construction();
    }
    SegmentationPriors& operator=(const SegmentationPriors&) = default;
    SegmentationPriors& operator=(SegmentationPriors&&) = default;

    static long constructions() { return constructions_.load(); }

  private:
    static void count_construction() { constructions_.fetch_add(1); }
    inline static std::atomic<long> constructions_{0};
};

struct SkbConfig {
    int k_masks = 50;
    std::vector<int> feature_channels = {256, 128, 64, 32};  // coarse to fine
};

// Frozen random conv pyramid standing in for a pretrained segmenter's
// feature head. Deterministic per (config, seed); weights never train.
struct SemanticBank {
    SkbConfig cfg;
    std::vector<ConvParam> level_convs;

    static SemanticBank create(const SkbConfig& cfg, std::uint64_t seed);
};

// Masks from the scene's ground-truth instances, features from the frozen
// pyramid applied to the tonemapped reference image.
SegmentationPriors synth_priors(const SyntheticScene& scene, const SemanticBank& bank,
                                const TonemapParams& tonemap);

// File-based injection point for real segmenter outputs. Masks binarize at
// 0.5 and are padded/truncated to k_masks (with a warning on mismatch).
SegmentationPriors load_priors(const std::string& mask_file, const std::string& feature_file,
                               int k_masks);
void save_priors(const SegmentationPriors& priors, const std::string& mask_file,
                 const std::string& feature_file);

// Top-down pyramid fusion: start at the coarsest level, upsample x2, add the
// lateral projection of the next level, merge with a 3x3 conv; finally resize
// to target and project. All convs are bias-free so zero features fuse to
// zero.
struct FpnParams {
    std::vector<ConvParam> lateral;  // one 1x1 per level
    std::vector<ConvParam> merge;    // one 3x3 per top-down step
    ConvParam out_proj;              // 1x1 after the final resize
    int c_out = 0;

    static FpnParams create(const std::vector<int>& level_channels, int c_out, RngStream& rng);
    ParamGroup collect(const std::string& prefix) const;
    static FpnParams from_group(const ParamGroup& group, const std::string& prefix,
                                int levels);
};

Tensor fpn_fuse(const SegmentationPriors& priors, const FpnParams& params, int target_h,
                int target_w);

}  // namespace hdrdistill
