#include "hdrdistill/optim.hpp"

#include <cmath>

#include "hdrdistill/raster_io.hpp"

namespace hdrdistill {

void AdamState::init(const ParamGroup& params) {
    m.clear();
    v.clear();
    step = 0;
    for (const auto& [name, t] : params.items) {
        m.emplace_back(t.size(), 0.0);
        v.emplace_back(t.size(), 0.0);
    }
}

void adam_step(ParamGroup& params, AdamState& state, const AdamHyper& hp) {
    if (!state.initialized()) state.init(params);
    if (state.m.size() != params.items.size()) {
        throw ShapeMismatchError("adam state does not match parameter group");
    }
    state.step++;
    double bc1 = 1.0 - std::pow(hp.beta1, state.step);
    double bc2 = 1.0 - std::pow(hp.beta2, state.step);
    for (std::size_t i = 0; i < params.items.size(); i++) {
        Tensor& t = params.items[i].second;
        std::vector<double>& mi = state.m[i];
        std::vector<double>& vi = state.v[i];
        if (mi.size() != t.size()) {
            throw ShapeMismatchError("adam slot size mismatch for " + params.items[i].first);
        }
        std::vector<double>& p = t.raw_values();
        if (t.has_grad()) {
            auto g = t.grad();
            for (std::size_t j = 0; j < p.size(); j++) {
                mi[j] = hp.beta1 * mi[j] + (1.0 - hp.beta1) * g[j];
                vi[j] = hp.beta2 * vi[j] + (1.0 - hp.beta2) * g[j] * g[j];
                double mhat = mi[j] / bc1;
                double vhat = vi[j] / bc2;
                p[j] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
            }
        } else {
            for (std::size_t j = 0; j < p.size(); j++) {
                mi[j] = hp.beta1 * mi[j];
                vi[j] = hp.beta2 * vi[j];
                double mhat = mi[j] / bc1;
                double vhat = vi[j] / bc2;
                p[j] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
            }
        }
    }
}

ParamGroup adam_state_tensors(const AdamState& state, const ParamGroup& params,
                              const std::string& prefix) {
    ParamGroup out;
    out.add(prefix + ".step",
            Tensor::constant({1}, {static_cast<double>(state.step)}));
    for (std::size_t i = 0; i < params.items.size(); i++) {
        const auto& name = params.items[i].first;
        int n = static_cast<int>(state.m[i].size());
        out.add(prefix + ".m." + name, Tensor::constant({n}, state.m[i]));
        out.add(prefix + ".v." + name, Tensor::constant({n}, state.v[i]));
    }
    return out;
}

void load_adam_state(AdamState& state, const ParamGroup& params, const ParamGroup& stored,
                     const std::string& prefix) {
    state.init(params);
    const Tensor* step = stored.find(prefix + ".step");
    if (!step) throw CheckpointError("missing optimizer state " + prefix + ".step");
    state.step = static_cast<long>(step->item());
    for (std::size_t i = 0; i < params.items.size(); i++) {
        const auto& name = params.items[i].first;
        const Tensor* m = stored.find(prefix + ".m." + name);
        const Tensor* v = stored.find(prefix + ".v." + name);
        if (!m || !v) throw CheckpointError("missing optimizer slots for " + name);
        state.m[i] = m->values();
        state.v[i] = v->values();
    }
}

}  // namespace hdrdistill
