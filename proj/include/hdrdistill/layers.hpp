#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hdrdistill/rng.hpp"
#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

// One convolution's parameters plus its fixed geometry.
struct ConvParam {
    Tensor w;  // [O, C/groups, k, k]
    Tensor b;  // [O], or undefined for bias-free layers
    int stride = 1;
    int padding = 1;
    int groups = 1;
};

inline Tensor apply(const ConvParam& p, const Tensor& x) {
    return conv2d(x, p.w, p.b, p.stride, p.padding, p.groups);
}

// Scaled-normal weights, zero bias. Frozen layers get constant tensors so no
// gradient can ever reach them.
inline ConvParam make_conv(int in_ch, int out_ch, int k, RngStream& rng, bool bias = true,
                           int groups = 1, bool trainable = true) {
    ConvParam p;
    p.padding = (k - 1) / 2;
    p.groups = groups;
    int fan_in = (in_ch / groups) * k * k;
    double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(static_cast<std::size_t>(out_ch) * (in_ch / groups) * k * k);
    for (auto& v : w) v = scale * rng.normal();
    Shape ws{out_ch, in_ch / groups, k, k};
    p.w = trainable ? Tensor::variable(ws, std::move(w)) : Tensor::constant(ws, std::move(w));
    if (bias) {
        p.b = trainable ? Tensor::variable({out_ch}, 0.0) : Tensor::constant({out_ch}, 0.0);
    }
    return p;
}

inline ConvParam zero_conv(int in_ch, int out_ch, int k, bool bias = true, int groups = 1) {
    ConvParam p;
    p.padding = (k - 1) / 2;
    p.groups = groups;
    p.w = Tensor::variable({out_ch, in_ch / groups, k, k}, 0.0);
    if (bias) p.b = Tensor::variable({out_ch}, 0.0);
    return p;
}

// Ordered, named collection of parameter tensors; the unit the optimizer and
// the checkpoint format work with.
struct ParamGroup {
    std::vector<std::pair<std::string, Tensor>> items;

    void add(const std::string& name, const Tensor& t) {
        if (t.defined()) items.emplace_back(name, t);
    }
    void add(const std::string& prefix, const ConvParam& c) {
        add(prefix + ".w", c.w);
        add(prefix + ".b", c.b);
    }
    void merge(const std::string& prefix, const ParamGroup& other) {
        for (const auto& [name, t] : other.items) items.emplace_back(prefix + name, t);
    }
    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }
    void zero_grad() {
        for (auto& [n, t] : items) t.zero_grad();
    }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items) n += t.size();
        return n;
    }
};

}  // namespace hdrdistill
