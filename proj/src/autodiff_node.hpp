#pragma once

// Graph internals shared by the op implementations. Not installed; everything
// outside src/ goes through tensor.hpp.

#include <algorithm>
#include <memory>
#include <vector>

#include "hdrdistill/tensor.hpp"

namespace hdrdistill {

namespace detail {

// Graph buffers are recycled through a per-thread free list; nodes churn fast
// and identically sized tensors dominate, so this removes nearly all
// allocation and first-touch traffic from the training step. Acquired
// buffers hold stale data: every op overwrites its output in full (reductions
// that accumulate zero their output first).
std::shared_ptr<std::vector<double>> acquire_buffer(std::size_t n);

struct Node {
    Shape shape;
    std::shared_ptr<std::vector<double>> values;  // shared so reshape/detach are zero-copy
    std::shared_ptr<std::vector<double>> grad;    // allocated on first use, zero-filled
    bool requires_grad = false;
    bool consumed = false;  // a backward() pass already ran through this root
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return values ? values->size() : 0; }
    const double* data() const { return values->data(); }
    bool has_grad() const { return grad && grad->size() == size(); }

    void ensure_grad() {
        if (!has_grad()) {
            grad = acquire_buffer(size());
            std::fill(grad->begin(), grad->end(), 0.0);
        }
    }
    double* grad_data() {
        ensure_grad();
        return grad->data();
    }
};

std::shared_ptr<Node> make_node(Shape shape, std::vector<std::shared_ptr<Node>> inputs);

}  // namespace detail

Tensor wrap_node(std::shared_ptr<detail::Node> node);
const std::shared_ptr<detail::Node>& unwrap_node(const Tensor& t);

}  // namespace hdrdistill
