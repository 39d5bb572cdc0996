#include "ofield/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ofield::ad {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + to_string(a) + " and " +
                            to_string(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& what)
    : std::invalid_argument(op + ": " + what) {}

namespace {
thread_local bool g_grad_enabled = true;

#if defined(__GLIBC__)
// Activation buffers of a training step are tens of MB and freed every step.
// Keep them on the heap instead of mmap/munmap so pages are not re-faulted.
const bool g_heap_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
    return true;
}();
#endif
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
T* Node<T>::grad_buffer() {
    if (!requires_grad) return nullptr;
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
}

template <typename T>
Tape<T>& Tape<T>::current() {
    thread_local Tape tape;
    return tape;
}

// ---------------------------------------------------------------------------
// BasicTensor

template <typename T>
BasicTensor<T>::BasicTensor() : node_(std::make_shared<Node<T>>()) {
    node_->value.assign(1, T(0));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
    for (int64_t d : shape)
        if (d < 0) throw ShapeError("tensor", "negative dimension in " + to_string(shape));
    if (static_cast<int64_t>(values.size()) != ofield::ad::numel(shape))
        throw ShapeError("tensor", "data length " + std::to_string(values.size()) +
                                       " does not match shape " + to_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
    const int64_t n = ofield::ad::numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                       requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
    return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
int64_t BasicTensor<T>::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("dim", "axis out of range for " + to_string(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item", "tensor of shape " + to_string(shape()) + " is not scalar");
    return node_->value[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<int64_t> index) const {
    if (static_cast<int>(index.size()) != rank())
        throw ShapeError("at", "index rank does not match " + to_string(shape()));
    int64_t flat = 0;
    int axis = 0;
    for (int64_t i : index) {
        const int64_t d = node_->shape[static_cast<std::size_t>(axis++)];
        if (i < 0 || i >= d) throw ShapeError("at", "index out of range for " + to_string(shape()));
        flat = flat * d + i;
    }
    return node_->value[static_cast<std::size_t>(flat)];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
    return node_->grad;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T(0));
    return node_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
    return BasicTensor(node_->shape, node_->value, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    return BasicTensor(node_->shape, node_->value, node_->requires_grad);
}

// ---------------------------------------------------------------------------
// Op plumbing

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                           std::vector<NodePtr<T>> inputs, std::function<void(Node<T>&)> bw) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->op = op;
    bool needs = false;
    if (grad_enabled())
        for (const auto& in : inputs) needs = needs || in->requires_grad;
    if (needs) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::move(bw);
        Tape<T>::current().record(node);
    }
    return BasicTensor<T>(std::move(node));
}

int normalize_axis(const char* op, int axis, int rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank)
        throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for rank " +
                                 std::to_string(rank));
    return axis;
}

// Right-aligned broadcast of two shapes; per-output-axis strides are zero
// along broadcast axes.
struct Broadcast {
    Shape out;
    std::vector<int64_t> stride_a;
    std::vector<int64_t> stride_b;
    bool same = false;
    bool b_scalar = false;

    Broadcast(const char* op, const Shape& a, const Shape& b) {
        if (a == b) {
            out = a;
            same = true;
            return;
        }
        const std::size_t r = std::max(a.size(), b.size());
        out.assign(r, 1);
        stride_a.assign(r, 0);
        stride_b.assign(r, 0);
        int64_t sa = 1, sb = 1;
        for (std::size_t k = 0; k < r; ++k) {
            const std::size_t axis = r - 1 - k;
            const int64_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
            const int64_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
            if (da != db && da != 1 && db != 1) throw ShapeError(op, a, b);
            out[axis] = std::max(da, db);
            stride_a[axis] = da == 1 ? 0 : sa;
            stride_b[axis] = db == 1 ? 0 : sb;
            sa *= da;
            sb *= db;
        }
        b_scalar = ofield::ad::numel(b) == 1 && ofield::ad::numel(a) == ofield::ad::numel(out);
    }

    // f(out_index, a_index, b_index)
    template <typename F>
    void run(F&& f) const {
        const int64_t n = ofield::ad::numel(out);
        if (same) {
            for (int64_t i = 0; i < n; ++i) f(i, i, i);
            return;
        }
        if (b_scalar) {
            for (int64_t i = 0; i < n; ++i) f(i, i, int64_t{0});
            return;
        }
        const std::size_t r = out.size();
        if (r == 0) {
            f(0, 0, 0);
            return;
        }
        const int64_t inner = out[r - 1];
        const int64_t ia = stride_a[r - 1], ib = stride_b[r - 1];
        if (inner == 0) return;
        const int64_t outer = n / inner;
        std::vector<int64_t> idx(r, 0);
        int64_t oa = 0, ob = 0, oi = 0;
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t k = 0; k < inner; ++k) f(oi + k, oa + k * ia, ob + k * ib);
            oi += inner;
            for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
                const auto du = static_cast<std::size_t>(d);
                ++idx[du];
                oa += stride_a[du];
                ob += stride_b[du];
                if (idx[du] < out[du]) break;
                oa -= stride_a[du] * out[du];
                ob -= stride_b[du] * out[du];
                idx[du] = 0;
            }
        }
    }
};

template <typename T, typename Fwd, typename DA, typename DB>
BasicTensor<T> binary(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b, Fwd fwd,
                      DA da, DB db) {
    Broadcast plan(op, a.shape(), b.shape());
    std::vector<T> out(static_cast<std::size_t>(ofield::ad::numel(plan.out)));
    const T* av = a.values().data();
    const T* bv = b.values().data();
    plan.run([&](int64_t o, int64_t i, int64_t j) { out[o] = fwd(av[i], bv[j]); });
    return make_result<T>(op, plan.out, std::move(out), {a.node(), b.node()},
                          [plan, da, db](Node<T>& self) {
                              Node<T>& na = *self.inputs[0];
                              Node<T>& nb = *self.inputs[1];
                              T* ga = na.grad_buffer();
                              T* gb = nb.grad_buffer();
                              const T* g = self.grad.data();
                              const T* x = na.value.data();
                              const T* y = nb.value.data();
                              if (ga)
                                  plan.run([&](int64_t o, int64_t i, int64_t j) {
                                      ga[i] += g[o] * da(x[i], y[j]);
                                  });
                              if (gb)
                                  plan.run([&](int64_t o, int64_t i, int64_t j) {
                                      gb[j] += g[o] * db(x[i], y[j]);
                                  });
                          });
}

// dfdx receives (x, y) where y is the forward output.
template <typename T, typename Fwd, typename Dx>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& x, Fwd fwd, Dx dfdx) {
    const auto xv = x.values();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    return make_result<T>(op, x.shape(), std::move(out), {x.node()}, [dfdx](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        T* gx = in.grad_buffer();
        if (!gx) return;
        const std::size_t n = self.value.size();
        for (std::size_t i = 0; i < n; ++i)
            gx[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
    });
}

// Splits a shape around one axis: [outer, axis, inner].
struct AxisSplit {
    int64_t outer = 1, len = 1, inner = 1;
    AxisSplit(const Shape& s, int axis) {
        for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
        len = s[static_cast<std::size_t>(axis)];
        for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
    int64_t n, c, h, w, o, k, stride, pad, ho, wo;
};

// cols: [C*k*k, Ho*Wo] for a single image.
template <typename T>
void im2col(const T* img, const ConvGeom& g, T* cols) {
    const int64_t plane = g.ho * g.wo;
    for (int64_t c = 0; c < g.c; ++c)
        for (int64_t ky = 0; ky < g.k; ++ky)
            for (int64_t kx = 0; kx < g.k; ++kx) {
                T* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
                const T* src = img + c * g.h * g.w;
                for (int64_t y = 0; y < g.ho; ++y) {
                    const int64_t iy = y * g.stride + ky - g.pad;
                    T* dst = row + y * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, T(0));
                        continue;
                    }
                    for (int64_t x = 0; x < g.wo; ++x) {
                        const int64_t ix = x * g.stride + kx - g.pad;
                        dst[x] = (ix < 0 || ix >= g.w) ? T(0) : src[iy * g.w + ix];
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* img) {
    const int64_t plane = g.ho * g.wo;
    for (int64_t c = 0; c < g.c; ++c)
        for (int64_t ky = 0; ky < g.k; ++ky)
            for (int64_t kx = 0; kx < g.k; ++kx) {
                const T* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
                T* dst = img + c * g.h * g.w;
                for (int64_t y = 0; y < g.ho; ++y) {
                    const int64_t iy = y * g.stride + ky - g.pad;
                    if (iy < 0 || iy >= g.h) continue;
                    for (int64_t x = 0; x < g.wo; ++x) {
                        const int64_t ix = x * g.stride + kx - g.pad;
                        if (ix >= 0 && ix < g.w) dst[iy * g.w + ix] += row[y * g.wo + x];
                    }
                }
            }
}

}  // namespace

// ---------------------------------------------------------------------------
// backward

template <typename T>
void backward(const BasicTensor<T>& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward", "loss must be scalar, got " + to_string(loss.shape()));
    auto& tape = Tape<T>::current();
    if (!loss.requires_grad() || loss.node()->is_leaf() || tape.empty())
        throw std::logic_error("backward: loss is not recorded on the tape");
    const auto& nodes = tape.nodes();
    for (const auto& n : nodes) n->grad.clear();
    loss.node()->grad.assign(1, T(1));
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        Node<T>& n = **it;
        if (!n.grad.empty() && n.backward) n.backward(n);
    }
}

// ---------------------------------------------------------------------------
// Element-wise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    return binary<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
    return unary<T>(
        "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T offset) {
    return unary<T>(
        "add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> neg(const BasicTensor<T>& x) {
    return unary<T>(
        "neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
    return unary<T>(
        "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& x) {
    return unary<T>(
        "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& x) {
    return unary<T>(
        "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    return unary<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
    return unary<T>(
        "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    return unary<T>(
        "sigmoid", x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
    return unary<T>(
        "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> softplus(const BasicTensor<T>& x) {
    return unary<T>(
        "softplus", x,
        [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](T v, T) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        });
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& x, T lo, T hi) {
    return unary<T>(
        "clamp", x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul", a.shape(), b.shape());
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(static_cast<std::size_t>(m * n));
    MapMat<T>(out.data(), m, n).noalias() =
        CMapMat<T>(a.values().data(), m, k) * CMapMat<T>(b.values().data(), k, n);
    return make_result<T>("matmul", Shape{m, n}, std::move(out), {a.node(), b.node()},
                          [m, k, n](Node<T>& self) {
                              Node<T>& na = *self.inputs[0];
                              Node<T>& nb = *self.inputs[1];
                              CMapMat<T> g(self.grad.data(), m, n);
                              if (T* ga = na.grad_buffer())
                                  MapMat<T>(ga, m, k).noalias() +=
                                      g * CMapMat<T>(nb.value.data(), k, n).transpose();
                              if (T* gb = nb.grad_buffer())
                                  MapMat<T>(gb, k, n).noalias() +=
                                      CMapMat<T>(na.value.data(), m, k).transpose() * g;
                          });
}

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& bias) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) throw ShapeError("affine", x.shape(), w.shape());
    if (bias.rank() != 1 || bias.dim(0) != w.dim(1)) throw ShapeError("affine", w.shape(), bias.shape());
    const int64_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    std::vector<T> out(static_cast<std::size_t>(m * n));
    MapMat<T> o(out.data(), m, n);
    o.noalias() = CMapMat<T>(x.values().data(), m, k) * CMapMat<T>(w.values().data(), k, n);
    o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.values().data(), n);
    return make_result<T>("affine", Shape{m, n}, std::move(out), {x.node(), w.node(), bias.node()},
                          [m, k, n](Node<T>& self) {
                              Node<T>& nx = *self.inputs[0];
                              Node<T>& nw = *self.inputs[1];
                              Node<T>& nb = *self.inputs[2];
                              CMapMat<T> g(self.grad.data(), m, n);
                              if (T* gx = nx.grad_buffer())
                                  MapMat<T>(gx, m, k).noalias() += g * CMapMat<T>(nw.value.data(), k, n).transpose();
                              if (T* gw = nw.grad_buffer())
                                  MapMat<T>(gw, k, n).noalias() += CMapMat<T>(nx.value.data(), m, k).transpose() * g;
                              if (T* gb = nb.grad_buffer())
                                  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, n) += g.colwise().sum();
                          });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride) {
    if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) ||
        weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0)
        throw ShapeError("conv2d", x.shape(), weight.shape());
    if (stride != 1 && stride != 2) throw ShapeError("conv2d", "stride must be 1 or 2");
    const bool has_bias = bias.numel() > 0 && bias.rank() > 0;
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
        throw ShapeError("conv2d", weight.shape(), bias.shape());

    ConvGeom g{};
    g.n = x.dim(0);
    g.c = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.o = weight.dim(0);
    g.k = weight.dim(2);
    g.stride = stride;
    g.pad = g.k / 2;
    g.ho = (g.h + 2 * g.pad - g.k) / stride + 1;
    g.wo = (g.w + 2 * g.pad - g.k) / stride + 1;
    const int64_t plane = g.ho * g.wo;
    const int64_t patch = g.c * g.k * g.k;
    const bool direct = g.k == 1 && stride == 1;

    std::vector<T> out(static_cast<std::size_t>(g.n * g.o * plane));
    std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(patch * plane));
    CMapMat<T> wmat(weight.values().data(), g.o, patch);
    for (int64_t b = 0; b < g.n; ++b) {
        const T* img = x.values().data() + b * g.c * g.h * g.w;
        const T* colp = img;
        if (!direct) {
            im2col(img, g, cols.data());
            colp = cols.data();
        }
        MapMat<T> dst(out.data() + b * g.o * plane, g.o, plane);
        dst.noalias() = wmat * CMapMat<T>(colp, patch, plane);
        if (has_bias)
            for (int64_t o = 0; o < g.o; ++o) dst.row(o).array() += bias.values()[static_cast<std::size_t>(o)];
    }

    std::vector<NodePtr<T>> inputs{x.node(), weight.node()};
    if (has_bias) inputs.push_back(bias.node());
    return make_result<T>(
        "conv2d", Shape{g.n, g.o, g.ho, g.wo}, std::move(out), std::move(inputs),
        [g, plane, patch, direct, has_bias](Node<T>& self) {
            Node<T>& nx = *self.inputs[0];
            Node<T>& nw = *self.inputs[1];
            T* gx = nx.grad_buffer();
            T* gw = nw.grad_buffer();
            T* gbias = has_bias ? self.inputs[2]->grad_buffer() : nullptr;
            CMapMat<T> wmat(nw.value.data(), g.o, patch);
            std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(patch * plane));
            std::vector<T> dcols(direct || !gx ? 0 : static_cast<std::size_t>(patch * plane));
            for (int64_t b = 0; b < g.n; ++b) {
                CMapMat<T> dout(self.grad.data() + b * g.o * plane, g.o, plane);
                const T* img = nx.value.data() + b * g.c * g.h * g.w;
                if (gbias)
                    for (int64_t o = 0; o < g.o; ++o) gbias[o] += dout.row(o).sum();
                if (gw) {
                    const T* colp = img;
                    if (!direct) {
                        im2col(img, g, cols.data());
                        colp = cols.data();
                    }
                    MapMat<T>(gw, g.o, patch).noalias() +=
                        dout * CMapMat<T>(colp, patch, plane).transpose();
                }
                if (gx) {
                    T* gimg = gx + b * g.c * g.h * g.w;
                    if (direct) {
                        MapMat<T>(gimg, patch, plane).noalias() += wmat.transpose() * dout;
                    } else {
                        MapMat<T>(dcols.data(), patch, plane).noalias() = wmat.transpose() * dout;
                        col2im_add(dcols.data(), g, gimg);
                    }
                }
            }
        });
}

template <typename T>
BasicTensor<T> upsample2x(const BasicTensor<T>& x) {
    if (x.rank() < 2) throw ShapeError("upsample2x", "rank must be at least 2");
    Shape s = x.shape();
    const int64_t h = s[s.size() - 2], w = s[s.size() - 1];
    const int64_t planes = x.numel() / std::max<int64_t>(h * w, 1);
    s[s.size() - 2] = 2 * h;
    s[s.size() - 1] = 2 * w;
    std::vector<T> out(static_cast<std::size_t>(ofield::ad::numel(s)));
    const T* in = x.values().data();
    for (int64_t p = 0; p < planes; ++p)
        for (int64_t y = 0; y < 2 * h; ++y)
            for (int64_t xx = 0; xx < 2 * w; ++xx)
                out[static_cast<std::size_t>((p * 2 * h + y) * 2 * w + xx)] =
                    in[(p * h + y / 2) * w + xx / 2];
    return make_result<T>("upsample2x", s, std::move(out), {x.node()},
                          [planes, h, w](Node<T>& self) {
                              T* gx = self.inputs[0]->grad_buffer();
                              if (!gx) return;
                              for (int64_t p = 0; p < planes; ++p)
                                  for (int64_t y = 0; y < 2 * h; ++y)
                                      for (int64_t xx = 0; xx < 2 * w; ++xx)
                                          gx[(p * h + y / 2) * w + xx / 2] +=
                                              self.grad[static_cast<std::size_t>(
                                                  (p * 2 * h + y) * 2 * w + xx)];
                          });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat", "no inputs");
    const Shape& first = parts.front().shape();
    axis = normalize_axis("concat", axis, static_cast<int>(first.size()));
    Shape out_shape = first;
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) throw ShapeError("concat", first, s);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis && s[i] != first[i]) throw ShapeError("concat", first, s);
        out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
    }
    const AxisSplit split(out_shape, axis);
    std::vector<T> out(static_cast<std::size_t>(ofield::ad::numel(out_shape)));
    std::vector<int64_t> offsets;
    std::vector<NodePtr<T>> inputs;
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t len = p.shape()[static_cast<std::size_t>(axis)];
        const int64_t chunk = len * split.inner;
        const T* src = p.values().data();
        for (int64_t o = 0; o < split.outer; ++o)
            std::copy(src + o * chunk, src + (o + 1) * chunk,
                      out.begin() + (o * split.len + off) * split.inner);
        offsets.push_back(off);
        inputs.push_back(p.node());
        off += len;
    }
    return make_result<T>("concat", out_shape, std::move(out), std::move(inputs),
                          [split, offsets, axis](Node<T>& self) {
                              for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                                  Node<T>& in = *self.inputs[i];
                                  T* g = in.grad_buffer();
                                  if (!g) continue;
                                  const int64_t chunk =
                                      in.shape[static_cast<std::size_t>(axis)] * split.inner;
                                  for (int64_t o = 0; o < split.outer; ++o) {
                                      const T* src = self.grad.data() +
                                                     (o * split.len + offsets[i]) * split.inner;
                                      T* dst = g + o * chunk;
                                      for (int64_t j = 0; j < chunk; ++j) dst[j] += src[j];
                                  }
                              }
                          });
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, int axis, int64_t begin, int64_t end) {
    axis = normalize_axis("slice", axis, x.rank());
    const AxisSplit split(x.shape(), axis);
    if (begin < 0 || end > split.len || begin >= end)
        throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                      ") invalid for " + to_string(x.shape()));
    Shape s = x.shape();
    s[static_cast<std::size_t>(axis)] = end - begin;
    const int64_t chunk = (end - begin) * split.inner;
    std::vector<T> out(static_cast<std::size_t>(split.outer * chunk));
    const T* src = x.values().data();
    for (int64_t o = 0; o < split.outer; ++o)
        std::copy(src + (o * split.len + begin) * split.inner,
                  src + (o * split.len + begin) * split.inner + chunk, out.begin() + o * chunk);
    return make_result<T>("slice", s, std::move(out), {x.node()},
                          [split, begin, chunk](Node<T>& self) {
                              T* g = self.inputs[0]->grad_buffer();
                              if (!g) return;
                              for (int64_t o = 0; o < split.outer; ++o) {
                                  T* dst = g + (o * split.len + begin) * split.inner;
                                  const T* src = self.grad.data() + o * chunk;
                                  for (int64_t j = 0; j < chunk; ++j) dst[j] += src[j];
                              }
                          });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
    if (ofield::ad::numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape);
    std::vector<T> out(x.values().begin(), x.values().end());
    return make_result<T>("reshape", std::move(shape), std::move(out), {x.node()},
                          [](Node<T>& self) {
                              T* g = self.inputs[0]->grad_buffer();
                              if (!g) return;
                              for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                          });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<int>& order) {
    const int r = x.rank();
    if (static_cast<int>(order.size()) != r) throw ShapeError("permute", "order rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int a : order) {
        if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)])
            throw ShapeError("permute", "order is not a permutation");
        seen[static_cast<std::size_t>(a)] = true;
    }
    const Shape& in = x.shape();
    std::vector<int64_t> in_stride(static_cast<std::size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i)
        in_stride[static_cast<std::size_t>(i)] =
            in_stride[static_cast<std::size_t>(i + 1)] * in[static_cast<std::size_t>(i + 1)];
    Shape out_shape(static_cast<std::size_t>(r));
    std::vector<int64_t> src_stride(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        out_shape[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        src_stride[static_cast<std::size_t>(i)] = in_stride[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    }
    // Source offset for every output element, shared with backward.
    const int64_t n = x.numel();
    auto index = std::make_shared<std::vector<int64_t>>(static_cast<std::size_t>(n));
    {
        std::vector<int64_t> idx(static_cast<std::size_t>(r), 0);
        int64_t off = 0;
        for (int64_t o = 0; o < n; ++o) {
            (*index)[static_cast<std::size_t>(o)] = off;
            for (int d = r - 1; d >= 0; --d) {
                const auto du = static_cast<std::size_t>(d);
                ++idx[du];
                off += src_stride[du];
                if (idx[du] < out_shape[du]) break;
                off -= src_stride[du] * out_shape[du];
                idx[du] = 0;
            }
        }
    }
    std::vector<T> out(static_cast<std::size_t>(n));
    const T* src = x.values().data();
    for (int64_t o = 0; o < n; ++o) out[static_cast<std::size_t>(o)] = src[(*index)[static_cast<std::size_t>(o)]];
    return make_result<T>("permute", out_shape, std::move(out), {x.node()},
                          [index](Node<T>& self) {
                              T* g = self.inputs[0]->grad_buffer();
                              if (!g) return;
                              for (std::size_t o = 0; o < index->size(); ++o)
                                  g[(*index)[o]] += self.grad[o];
                          });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
    T acc = T(0);
    for (T v : x.values()) acc += v;
    return make_result<T>("sum", Shape{}, std::vector<T>{acc}, {x.node()}, [](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        T* g = in.grad_buffer();
        if (!g) return;
        for (std::size_t i = 0; i < in.value.size(); ++i) g[i] += self.grad[0];
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
    if (x.numel() == 0) throw ShapeError("mean", "empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, int axis, bool keepdim) {
    axis = normalize_axis("sum", axis, x.rank());
    const AxisSplit split(x.shape(), axis);
    Shape s = x.shape();
    if (keepdim)
        s[static_cast<std::size_t>(axis)] = 1;
    else
        s.erase(s.begin() + axis);
    std::vector<T> out(static_cast<std::size_t>(split.outer * split.inner), T(0));
    const T* src = x.values().data();
    for (int64_t o = 0; o < split.outer; ++o)
        for (int64_t l = 0; l < split.len; ++l) {
            const T* row = src + (o * split.len + l) * split.inner;
            T* dst = out.data() + o * split.inner;
            for (int64_t i = 0; i < split.inner; ++i) dst[i] += row[i];
        }
    return make_result<T>("sum_axis", s, std::move(out), {x.node()}, [split](Node<T>& self) {
        T* g = self.inputs[0]->grad_buffer();
        if (!g) return;
        for (int64_t o = 0; o < split.outer; ++o)
            for (int64_t l = 0; l < split.len; ++l) {
                T* dst = g + (o * split.len + l) * split.inner;
                const T* src = self.grad.data() + o * split.inner;
                for (int64_t i = 0; i < split.inner; ++i) dst[i] += src[i];
            }
    });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, int axis, bool keepdim) {
    const int64_t len = x.dim(axis);
    if (len == 0) throw ShapeError("mean", "empty axis");
    return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(len));
}

template <typename T>
BasicTensor<T> cumsum(const BasicTensor<T>& x, int axis) {
    axis = normalize_axis("cumsum", axis, x.rank());
    const AxisSplit split(x.shape(), axis);
    std::vector<T> out(x.values().begin(), x.values().end());
    for (int64_t o = 0; o < split.outer; ++o)
        for (int64_t l = 1; l < split.len; ++l) {
            T* row = out.data() + (o * split.len + l) * split.inner;
            const T* prev = row - split.inner;
            for (int64_t i = 0; i < split.inner; ++i) row[i] += prev[i];
        }
    return make_result<T>("cumsum", x.shape(), std::move(out), {x.node()}, [split](Node<T>& self) {
        T* g = self.inputs[0]->grad_buffer();
        if (!g) return;
        // Reverse cumulative sum of the incoming gradient.
        std::vector<T> acc(static_cast<std::size_t>(split.inner));
        for (int64_t o = 0; o < split.outer; ++o) {
            std::fill(acc.begin(), acc.end(), T(0));
            for (int64_t l = split.len - 1; l >= 0; --l) {
                const std::size_t base = static_cast<std::size_t>((o * split.len + l) * split.inner);
                for (int64_t i = 0; i < split.inner; ++i) {
                    acc[static_cast<std::size_t>(i)] += self.grad[base + static_cast<std::size_t>(i)];
                    g[base + static_cast<std::size_t>(i)] += acc[static_cast<std::size_t>(i)];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Instantiation

#define OFIELD_INSTANTIATE(T)                                                              \
    template struct Node<T>;                                                               \
    template class Tape<T>;                                                                \
    template class BasicTensor<T>;                                                         \
    template void backward<T>(const BasicTensor<T>&);                                      \
    template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> sub<T>(const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> div<T>(const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> scale<T>(const BasicTensor<T>&, T);                            \
    template BasicTensor<T> add_scalar<T>(const BasicTensor<T>&, T);                       \
    template BasicTensor<T> neg<T>(const BasicTensor<T>&);                                 \
    template BasicTensor<T> square<T>(const BasicTensor<T>&);                              \
    template BasicTensor<T> exp<T>(const BasicTensor<T>&);                                 \
    template BasicTensor<T> log<T>(const BasicTensor<T>&);                                 \
    template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                \
    template BasicTensor<T> leaky_relu<T>(const BasicTensor<T>&, T);                       \
    template BasicTensor<T> sigmoid<T>(const BasicTensor<T>&);                             \
    template BasicTensor<T> tanh<T>(const BasicTensor<T>&);                                \
    template BasicTensor<T> softplus<T>(const BasicTensor<T>&);                            \
    template BasicTensor<T> clamp<T>(const BasicTensor<T>&, T, T);                         \
    template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);       \
    template BasicTensor<T> affine<T>(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
    template BasicTensor<T> conv2d<T>(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                      const BasicTensor<T>&, int);                         \
    template BasicTensor<T> upsample2x<T>(const BasicTensor<T>&);                          \
    template BasicTensor<T> concat<T>(const std::vector<BasicTensor<T>>&, int);            \
    template BasicTensor<T> slice<T>(const BasicTensor<T>&, int, int64_t, int64_t);        \
    template BasicTensor<T> reshape<T>(const BasicTensor<T>&, Shape);                      \
    template BasicTensor<T> permute<T>(const BasicTensor<T>&, const std::vector<int>&);    \
    template BasicTensor<T> sum<T>(const BasicTensor<T>&);                                 \
    template BasicTensor<T> mean<T>(const BasicTensor<T>&);                                \
    template BasicTensor<T> sum<T>(const BasicTensor<T>&, int, bool);                      \
    template BasicTensor<T> mean<T>(const BasicTensor<T>&, int, bool);                     \
    template BasicTensor<T> cumsum<T>(const BasicTensor<T>&, int);

OFIELD_INSTANTIATE(float)
OFIELD_INSTANTIATE(double)

#undef OFIELD_INSTANTIATE

}  // namespace ofield::ad
