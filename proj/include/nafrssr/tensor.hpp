#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nafrssr {

/// Batch/channel/height/width extents of a dense tensor.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
    std::size_t offset(int in, int ic, int ih, int iw) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw;
    }
    bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded value. Leaves own trainable or constant data; interior nodes
// additionally keep their inputs and a closure that pushes the node's
// gradient into the inputs' gradient buffers.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
    bool released = false;
    const char* op = "leaf";
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward;

    std::vector<double>& grad_buffer() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
    // Gradient buffer of input i, or nullptr when that input needs no gradient.
    double* input_grad(std::size_t i) {
        Node& in = *inputs[i];
        return in.requires_grad ? in.grad_buffer().data() : nullptr;
    }
};

}  // namespace detail

/// Dense 4-D real array in (n, c, h, w) row-major order with optional
/// gradient tracking. Copies share storage; use detach() for a deep copy.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false) { return Tensor(shape, requires_grad); }
    static Tensor full(Shape shape, double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    // Writable view. Mutating a tensor that is an input of a recorded graph
    // invalidates that graph's gradients.
    std::span<double> mutable_data() { return node_->data; }

    double at(int n, int c, int h, int w) const { return node_->data[shape().offset(n, c, h, w)]; }
    double& at(int n, int c, int h, int w) { return node_->data[shape().offset(n, c, h, w)]; }
    double item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool value);
    bool is_leaf() const { return node_->leaf; }

    // Accumulated gradient (zeros if nothing has flowed into this tensor).
    std::span<const double> grad() const;
    void zero_grad();

    Tensor detach() const;

    // Runs reverse-mode differentiation from this scalar, accumulating into
    // every reachable leaf that requires a gradient, then frees the graph.
    void backward() const;

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }
    const char* op_name() const { return node_->op; }

    const detail::NodePtr& node() const { return node_; }
    static Tensor from_node(detail::NodePtr node);

  private:
    detail::NodePtr node_;
};

bool grad_enabled();

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

namespace detail {

// True when an op over these inputs must record a backward closure.
bool should_record(std::initializer_list<const Tensor*> inputs);

// Wraps freshly computed data as an op result; records the closure only when
// should_record() holds for the given inputs.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, const char* op,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace nafrssr
