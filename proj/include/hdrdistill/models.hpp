#pragma once

#include <atomic>
#include <utility>
#include <vector>

#include "hdrdistill/data_synth.hpp"
#include "hdrdistill/layers.hpp"
#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

// Student: 6-layer conv stack over the channel-concatenated SDR frames, tanh
// activations, squashed into [0,1] through the inverse tonemap of a sigmoid —
// the net predicts in the compressed domain, where the loss surface treats
// shadows and highlights evenly. Feature taps after layers 2, 4 and 6.
struct OrmParams {
    std::vector<ConvParam> layers;
    int width = 0, in_ch = 0, out_ch = 0;
    double squash_mu = 5000.0;

    static OrmParams create(int in_ch, int out_ch, int width, RngStream& rng,
                            double squash_mu = 5000.0);
    ParamGroup collect(const std::string& prefix) const;
    static OrmParams from_group(const ParamGroup& group, const std::string& prefix);
};

// stacked is [2*n*C,H,W]: the frames plus their exposure-normalized
// companions, the usual input convention for multi-exposure fusion nets.
std::pair<Tensor, std::vector<Tensor>> orm_forward(const Tensor& stacked, const OrmParams& p);
std::pair<HdrImage, std::vector<Tensor>> orm_forward(const SdrStack& stack, const OrmParams& p);

Tensor orm_input(const SdrStack& stack);
Tensor stack_frames(const SdrStack& stack);

// Channel-wise transposed attention guided by the fused prior: Q from p_f,
// K/V from the feature map, each via pointwise 1x1 then depthwise 3x3 convs;
// attention is Softmax(K Q^T / gamma) over a CxC map, output re-projected and
// added back to the input.
struct PriorFusionParams {
    ConvParam q_pw, q_dw, k_pw, k_dw, v_pw, v_dw, out_pw;
    Tensor gamma;  // trainable scalar, init 1

    static PriorFusionParams create(int channels, RngStream& rng);
    static PriorFusionParams zeros(int channels);
};

Tensor prior_fusion_block(const Tensor& f_k, const Tensor& p_f, const PriorFusionParams& p);

struct FusionModuleParams {
    ConvParam pre, post;
    PriorFusionParams pfb;
};

// Teacher: exactly three Semantic Guided Fusion Modules (conv -> prior fusion
// -> conv), a residual connection to the input, output clamped to [0,1].
// Taps are the three module outputs.
struct SpgrmParams {
    std::vector<FusionModuleParams> modules;
    int width = 0;

    SpgrmParams() { constructions_.fetch_add(1); }
    SpgrmParams(const SpgrmParams&) = delete;
    SpgrmParams(SpgrmParams&&) = default;
    SpgrmParams& operator=(SpgrmParams&&) = default;

    static SpgrmParams create(int width, RngStream& rng);
    static SpgrmParams zeros(int width);
    ParamGroup collect(const std::string& prefix) const;
    static SpgrmParams from_group(const ParamGroup& group, const std::string& prefix);

    static long constructions() { return constructions_.load(); }

  private:
    inline static std::atomic<long> constructions_{0};
};

std::pair<Tensor, std::vector<Tensor>> spgrm_forward(const Tensor& h_s, const Tensor& p_f,
                                                     const SpgrmParams& p);

}  // namespace hdrdistill
