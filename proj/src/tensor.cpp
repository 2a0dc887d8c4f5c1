#include "nafrssr/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace nafrssr {

namespace {
thread_local bool t_grad_enabled = true;
}

std::string Shape::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
}

Tensor::Tensor(Shape shape, bool requires_grad) : Tensor(shape, std::vector<double>(shape.numel(), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (!shape.valid()) throw std::invalid_argument("tensor: every dimension must be >= 1, got " + shape.str());
    if (values.size() != shape.numel())
        throw std::invalid_argument("tensor: " + std::to_string(values.size()) + " values for shape " + shape.str());
    node_ = std::make_shared<detail::Node>();
    node_->shape = shape;
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    return Tensor(shape, std::vector<double>(shape.numel(), value), requires_grad);
}

Tensor Tensor::from_node(detail::NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
}

void Tensor::set_requires_grad(bool value) {
    if (!node_->leaf) throw std::logic_error("set_requires_grad: only leaves can change gradient tracking");
    node_->requires_grad = value;
}

std::span<const double> Tensor::grad() const { return node_->grad_buffer(); }

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data, false); }

void Tensor::backward() const {
    if (!node_) throw std::logic_error("backward: undefined tensor");
    if (numel() != 1) throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape().str());
    if (node_->released)
        throw std::logic_error("backward: graph already consumed; run the forward pass again");
    if (!node_->requires_grad) throw std::logic_error("backward: loss does not depend on any tensor requiring grad");

    // Post-order DFS over interior nodes gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (node->leaf) {
            stack.pop_back();
            continue;
        }
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    if (node_->leaf) {
        node_->grad_buffer()[0] += 1.0;
        return;
    }
    node_->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node& node = **it;
        if (node.grad.size() == node.data.size() && node.backward) node.backward(node);
    }
    for (detail::Node* node : order) {
        node->backward = nullptr;
        node->inputs.clear();
        node->inputs.shrink_to_fit();
        node->grad.clear();
        node->grad.shrink_to_fit();
        node->released = true;
    }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!t_grad_enabled) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, const char* op,
                   std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->data = std::move(data);
    node->op = op;
    bool record = t_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                      return t.defined() && t.requires_grad();
                  });
    if (record) {
        node->leaf = false;
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (const Tensor& t : inputs) {
            if (t.defined()) {
                node->inputs.push_back(t.node());
            } else {
                // Keep input positions stable for optional operands.
                auto placeholder = std::make_shared<Node>();
                node->inputs.push_back(std::move(placeholder));
            }
        }
        node->backward = std::move(backward);
    }
    return Tensor::from_node(std::move(node));
}

}  // namespace detail

}  // namespace nafrssr
