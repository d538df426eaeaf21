#pragma once

#include <vector>

#include "hdrdistill/layers.hpp"

namespace hdrdistill {

struct AdamHyper {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;  // one slot per parameter tensor
    long step = 0;

    void init(const ParamGroup& params);
    bool initialized() const { return !m.empty(); }
};

// Standard bias-corrected Adam over every tensor in the group. Tensors with
// no gradient this step are treated as zero-gradient.
void adam_step(ParamGroup& params, AdamState& state, const AdamHyper& hp);

// Optimizer-state round-tripping through the checkpoint container.
ParamGroup adam_state_tensors(const AdamState& state, const ParamGroup& params,
                              const std::string& prefix);
void load_adam_state(AdamState& state, const ParamGroup& params, const ParamGroup& stored,
                     const std::string& prefix);

}  // namespace hdrdistill
