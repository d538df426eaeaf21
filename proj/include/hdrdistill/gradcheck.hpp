#pragma once

#include <functional>
#include <vector>

#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

// Scalar function of a set of leaf tensors. Called repeatedly with the same
// tensors while their values are perturbed in place, so it must rebuild its
// graph from scratch on every call.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Central-difference check of the analytic gradient of f at xs, over every
// coordinate of xs[arg]. Returns max over coordinates of
// |analytic - fd| / max(1, |analytic|).
double gradcheck_wrt(const ScalarFn& f, std::vector<Tensor> xs, std::size_t arg,
                     double h = 1e-5);

// Same, over every requires_grad leaf in xs.
double gradcheck(const ScalarFn& f, std::vector<Tensor> xs, double h = 1e-5);

}  // namespace hdrdistill
