#pragma once

#include <atomic>
#include <cstdint>
#include <utility>
#include <vector>

#include "hdrdistill/layers.hpp"
#include "hdrdistill/rng.hpp"
#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

struct StageCountMismatchError : std::runtime_error {
    explicit StageCountMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};

// One alignment stage: two-layer encoders for student and teacher taps into a
// shared latent width, and a two-layer decoder back to the teacher tap space.
// The codecs are linear, so identity weights make the stage an exact identity.
struct SkamStageParams {
    ConvParam enc_s1, enc_s2;
    ConvParam enc_t1, enc_t2;
    ConvParam dec1, dec2;

    SkamStageParams() { constructions_.fetch_add(1); }
    SkamStageParams(const SkamStageParams&) = delete;
    SkamStageParams(SkamStageParams&&) = default;
    SkamStageParams& operator=(SkamStageParams&&) = default;

    static SkamStageParams create(int in_s, int in_t, int latent, RngStream& rng);
    static SkamStageParams identity(int channels);
    ParamGroup collect(const std::string& prefix) const;
    static SkamStageParams from_group(const ParamGroup& group, const std::string& prefix);

    static long constructions() { return constructions_.load(); }

  private:
    inline static std::atomic<long> constructions_{0};
};

struct BinaryMask {
    Tensor mask;  // {0,1} entries
    std::uint64_t seed = 0;
};

// i.i.d. Bernoulli(0.5) entries; the complementary mask is 1 - mask.
BinaryMask sample_mask(const Shape& shape, RngStream& rng);

// Eq: F_E = Decoder(enc_S(F_S) (1-M) + enc_T(F_T) M), loss = MSE(F_E, F_T).
// F_T enters as a constant view; both encoders and the decoder receive
// gradients, F_T itself does not. Returns (F_E, loss).
std::pair<Tensor, Tensor> skam_forward(const Tensor& f_s, const Tensor& f_t,
                                       const SkamStageParams& p, const BinaryMask& mask);
std::pair<Tensor, Tensor> skam_forward(const Tensor& f_s, const Tensor& f_t,
                                       const SkamStageParams& p, RngStream& rng);

// Sum of per-stage losses; masks are drawn sequentially from rng, one per
// stage, before any stage is evaluated.
Tensor multi_stage_loss(const std::vector<Tensor>& taps_s, const std::vector<Tensor>& taps_t,
                        const std::vector<SkamStageParams>& stages, RngStream& rng);

}  // namespace hdrdistill
