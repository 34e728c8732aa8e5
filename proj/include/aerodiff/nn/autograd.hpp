#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "aerodiff/tensor.hpp"

namespace aerodiff::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the recorded computation. Parents and the backward closure are
// only populated while gradient recording is enabled.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(const Tensor& grad_out)> backward;

    Tensor& grad_buffer();
};

// Shared handle to a node. Copies alias the same value and gradient.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& value_mut() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad_buffer() { return node_->grad_buffer(); }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool defined() const noexcept { return static_cast<bool>(node_); }

    // Accumulates d(this)/d(leaf) into every reachable leaf. This must be a scalar.
    void backward();
    void zero_grad();

    const NodePtr& node() const noexcept { return node_; }

private:
    NodePtr node_;
};

bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Builds a result node; records parents and the closure only when some parent
// requires a gradient and recording is enabled.
Var make_result(Tensor value, std::initializer_list<Var> parents, std::function<void(const Tensor&)> backward);

// Gradient sink for a parent inside a backward closure (null if not needed).
Tensor* grad_sink(const Var& v);

}  // namespace aerodiff::nn
