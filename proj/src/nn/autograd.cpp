#include "aerodiff/nn/autograd.hpp"

#include <unordered_set>

#include "aerodiff/error.hpp"

namespace aerodiff::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

void Var::backward() {
    require(node_ && node_->value.size() == 1, ErrorKind::Numerical, "backward() needs a scalar output");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(n->grad);
    }
    // Intermediate gradients are not needed after the sweep.
    for (Node* n : order)
        if (n->backward) n->grad = Tensor();
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::initializer_list<Var> parents, std::function<void(const Tensor&)> backward) {
    Var out(std::move(value));
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const Var& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    Node& n = *out.node();
    n.requires_grad = true;
    for (const Var& p : parents)
        if (p.requires_grad()) n.parents.push_back(p.node());
    n.backward = std::move(backward);
    return out;
}

Tensor* grad_sink(const Var& v) { return v.requires_grad() ? &v.node()->grad_buffer() : nullptr; }

}  // namespace aerodiff::nn
