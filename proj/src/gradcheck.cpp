#include "hdrdistill/gradcheck.hpp"

#include <cmath>

namespace hdrdistill {

namespace {

double check_one(const ScalarFn& f, std::vector<Tensor>& xs, std::size_t arg,
                 const std::vector<double>& analytic, double h) {
    double worst = 0.0;
    std::vector<double>& v = xs[arg].raw_values();
    for (std::size_t i = 0; i < v.size(); i++) {
        double saved = v[i];
        v[i] = saved + h;
        double lp = f(xs).item();
        v[i] = saved - h;
        double lm = f(xs).item();
        v[i] = saved;
        double fd = (lp - lm) / (2.0 * h);
        double err = std::fabs(analytic[i] - fd) / std::max(1.0, std::fabs(analytic[i]));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace

double gradcheck_wrt(const ScalarFn& f, std::vector<Tensor> xs, std::size_t arg, double h) {
    for (auto& x : xs) x.zero_grad();
    Tensor loss = f(xs);
    backward(loss);
    if (!xs[arg].requires_grad()) throw std::logic_error("gradcheck arg does not require grad");
    std::vector<double> analytic = xs[arg].grad();
    return check_one(f, xs, arg, analytic, h);
}

double gradcheck(const ScalarFn& f, std::vector<Tensor> xs, double h) {
    for (auto& x : xs) x.zero_grad();
    Tensor loss = f(xs);
    backward(loss);
    std::vector<std::vector<double>> analytic(xs.size());
    for (std::size_t i = 0; i < xs.size(); i++) {
        if (xs[i].requires_grad()) analytic[i] = xs[i].grad();
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < xs.size(); i++) {
        if (!xs[i].requires_grad()) continue;
        worst = std::max(worst, check_one(f, xs, i, analytic[i], h));
    }
    return worst;
}

}  // namespace hdrdistill
