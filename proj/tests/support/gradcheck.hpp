#pragma once

// Test-only finite-difference oracle and random graph builder.

#include "ofield/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace ofield::testing {

using ad::Shape;
using ad::Tensor64;

struct GradCheckResult {
    double max_rel_error = 0.0;
    int64_t coordinates = 0;
};

inline double rel_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of a scalar function against central differences.
/// `f` must build its graph from the given leaves every call.
template <typename T>
GradCheckResult gradcheck(const std::function<ad::BasicTensor<T>(const std::vector<ad::BasicTensor<T>>&)>& f,
                          std::vector<ad::BasicTensor<T>> leaves, double h, double floor = 1e-3,
                          int64_t max_coords_per_leaf = -1) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();
    }
    ad::Tape<T>::current().clear();
    auto loss = f(leaves);
    ad::backward(loss);
    std::vector<std::vector<T>> analytic;
    for (auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());
    ad::Tape<T>::current().clear();

    GradCheckResult r;
    ad::NoGradGuard guard;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto values = leaves[li].mutable_values();
        const int64_t n = static_cast<int64_t>(values.size());
        const int64_t stride = (max_coords_per_leaf > 0 && n > max_coords_per_leaf)
                                   ? (n + max_coords_per_leaf - 1) / max_coords_per_leaf
                                   : 1;
        for (int64_t i = 0; i < n; i += stride) {
            const T saved = values[static_cast<std::size_t>(i)];
            values[static_cast<std::size_t>(i)] = saved + static_cast<T>(h);
            const double up = f(leaves).item();
            values[static_cast<std::size_t>(i)] = saved - static_cast<T>(h);
            const double down = f(leaves).item();
            values[static_cast<std::size_t>(i)] = saved;
            const double numeric = (up - down) / (2.0 * h);
            r.max_rel_error = std::max(
                r.max_rel_error, rel_error(analytic[li][static_cast<std::size_t>(i)], numeric, floor));
            ++r.coordinates;
        }
    }
    return r;
}

inline std::vector<Tensor64> random_leaves(std::mt19937_64& rng, const std::vector<Shape>& shapes) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Tensor64> out;
    for (const auto& s : shapes) {
        std::vector<double> v(static_cast<std::size_t>(ad::numel(s)));
        for (double& x : v) x = u(rng);
        out.emplace_back(s, std::move(v), true);
    }
    return out;
}

/// Leaf shapes for random_graph(seed, ...).
inline std::vector<Shape> random_graph_shapes() {
    return {{3, 4}, {3, 4}, {4, 3}, {2, 1, 3, 3}, {2}};
}

/// Builds a random composition of the primitive op set with at most
/// `max_nodes` recorded nodes. Structural choices depend only on `seed`, so
/// repeated calls with perturbed leaf values rebuild the same graph.
inline Tensor64 random_graph(uint64_t seed, const std::vector<Tensor64>& leaves, int max_nodes = 50) {
    namespace a = ofield::ad;
    std::mt19937_64 rng(seed);
    auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
    std::vector<Tensor64> pool{leaves[0], leaves[1], leaves[2]};
    const Tensor64& conv_w = leaves[3];
    const Tensor64& conv_b = leaves[4];
    int nodes = 0;
    auto limit = [](const Tensor64& t) {
        Tensor64 r = t;
        if (r.dim(0) > 6) r = a::slice(r, 0, 0, 6);
        if (r.dim(1) > 6) r = a::slice(r, 1, 0, 6);
        return r;
    };
    // Each op costs at most 3 nodes plus 2 for size limiting and 1 for flattening;
    // the final weighting adds 3.
    while (nodes + 6 <= max_nodes - 3) {
        const Tensor64 x = pool[pick(pool.size())];
        const Tensor64 y = pool[pick(pool.size())];
        Tensor64 out;
        int cost = 1;
        switch (pick(20)) {
            case 0:
                out = x.shape() == y.shape() ? a::add(x, y) : a::add(x, a::mean(x, 0, true));
                cost = 3;
                break;
            case 1: out = x.shape() == y.shape() ? a::sub(x, y) : a::sub(x, a::sum(x, 1, true)); cost = 2; break;
            case 2: out = x.shape() == y.shape() ? a::mul(x, y) : a::mul(x, x); break;
            case 3:
                out = x.shape() == y.shape() ? a::div(x, a::add_scalar(a::square(y), 1.0))
                                             : a::div(x, a::add_scalar(a::square(x), 2.0));
                cost = 3;
                break;
            case 4: out = a::exp(a::tanh(x)); cost = 2; break;
            case 5: out = a::sigmoid(x); break;
            case 6: out = a::tanh(x); break;
            case 7: out = a::softplus(x); break;
            case 8: out = a::relu(x); break;
            case 9: out = a::leaky_relu(x, 0.2); break;
            case 10: out = a::square(x); break;
            case 11:
                out = x.dim(1) == y.dim(1) ? a::matmul(x, a::permute(y, {1, 0}))
                                           : a::matmul(a::permute(x, {1, 0}), x);
                cost = 2;
                break;
            case 12:
                if (x.dim(1) == y.dim(1)) out = a::concat<double>({x, y}, 0);
                else if (x.dim(0) == y.dim(0)) out = a::concat<double>({x, y}, 1);
                else out = a::concat<double>({x, x}, 1);
                break;
            case 13: out = x.dim(1) > 1 ? a::slice(x, 1, 1, x.dim(1)) : a::slice(x, 0, 0, 1); break;
            case 14: out = a::cumsum(x, static_cast<int>(pick(2))); break;
            case 15: out = a::sum(x, static_cast<int>(pick(2)), true); break;
            case 16: {
                const int stride = 1 + static_cast<int>(pick(2));
                auto img = a::reshape(x, {1, 1, x.dim(0), x.dim(1)});
                auto c = a::conv2d(img, conv_w, conv_b, stride);
                out = a::reshape(c, {2 * c.dim(2), c.dim(3)});
                cost = 3;
                break;
            }
            case 17: {
                auto img = a::reshape(x, {1, x.dim(0), x.dim(1)});
                auto u = a::upsample2x(img);
                out = a::reshape(u, {u.dim(1), u.dim(2)});
                cost = 3;
                break;
            }
            case 18: out = a::clamp(x, -0.5, 0.5); break;
            default: out = a::add_scalar(a::scale(x, 0.7), 0.1); cost = 2; break;
        }
        const bool big = out.dim(0) > 6 || out.dim(1) > 6;
        out = limit(out);
        nodes += cost + (big ? 2 : 0) + 1;
        pool.push_back(out);
    }
    // Random positive weighting of every derived tensor so all branches reach the loss.
    std::vector<Tensor64> flat;
    std::vector<double> weights;
    for (std::size_t i = 3; i < pool.size(); ++i) {
        flat.push_back(a::reshape(pool[i], {pool[i].numel()}));
        for (int64_t k = 0; k < pool[i].numel(); ++k)
            weights.push_back(0.5 + static_cast<double>(rng() % 1000) / 1000.0);
    }
    const auto n = static_cast<int64_t>(weights.size());
    Tensor64 loss = a::sum(a::mul(a::concat(flat, 0), Tensor64({n}, std::move(weights))));
    return loss;
}

}  // namespace ofield::testing
