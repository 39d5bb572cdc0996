#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major
// tensors. Every op that consumes a tensor requiring grad records a node on
// the thread-local tape; backward() replays the tape in reverse.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ofield::ad {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised by every op whose operands do not conform.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(const std::string& op, const Shape& a, const Shape& b);
    ShapeError(const std::string& op, const std::string& what);
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return !backward; }
    // Zero-filled gradient buffer of an input, or nullptr when it takes no grad.
    T* grad_buffer();
};

template <typename T>
class Tape {
public:
    static Tape& current();

    void record(std::shared_ptr<Node<T>> node) { nodes_.push_back(std::move(node)); }
    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    const std::vector<std::shared_ptr<Node<T>>>& nodes() const { return nodes_; }

private:
    std::vector<std::shared_ptr<Node<T>>> nodes_;
};

bool grad_enabled();

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor();
    BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);
    explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static BasicTensor zeros(Shape shape, bool requires_grad = false);
    static BasicTensor full(Shape shape, T value, bool requires_grad = false);
    static BasicTensor scalar(T value, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t dim(int axis) const;
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

    std::span<const T> values() const { return node_->value; }
    std::span<T> mutable_values() { return node_->value; }
    T item() const;
    T at(std::initializer_list<int64_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    BasicTensor& set_requires_grad(bool flag);
    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient after backward(); a tensor never reached reads as all-zero.
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    void zero_grad();

    BasicTensor detach() const;
    BasicTensor clone() const;

    const std::shared_ptr<Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
void backward(const BasicTensor<T>& loss);

// Element-wise with standard right-aligned broadcasting.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> scale(const BasicTensor<T>& x, T factor);
template <typename T> BasicTensor<T> add_scalar(const BasicTensor<T>& x, T offset);
template <typename T> BasicTensor<T> neg(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> square(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> softplus(const BasicTensor<T>& x);
// Gradient passes where lo <= x <= hi.
template <typename T> BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi);

// [M,K] x [K,N] -> [M,N]
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x·w + bias in one node; x [m,k], w [k,n], bias [n].
template <typename T> BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias);

// x: [N,C,H,W], weight: [O,C,k,k], bias: [O] (may be empty). Zero padding k/2,
// so stride 1 keeps the spatial size and stride 2 halves it (rounding up).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride);
// Nearest-neighbour x2 on the last two axes.
template <typename T> BasicTensor<T> upsample2x(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis);
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, int64_t begin, int64_t end);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int>& order);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x, int axis, bool keepdim = false);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x, int axis, bool keepdim = false);
template <typename T> BasicTensor<T> cumsum(const BasicTensor<T>& x, int axis);

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }
template <typename T>
BasicTensor<T> operator/(const BasicTensor<T>& a, const BasicTensor<T>& b) { return div(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a) { return neg(a); }

}  // namespace ofield::ad
