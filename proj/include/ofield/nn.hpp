#pragma once

// Small layer helpers shared by the networks.

#include "ofield/autodiff.hpp"
#include "ofield/optim.hpp"

#include <cstdint>
#include <string>

namespace ofield::nn {

enum class Init { kHe, kXavier, kZero };

/// Fills a tensor with uniform draws from a counter-based stream keyed by
/// (seed, name), so initialization is independent of creation order.
template <typename T>
ad::BasicTensor<T> init_tensor(const ad::Shape& shape, int64_t fan_in, int64_t fan_out, Init init, uint64_t seed,
                               const std::string& name);

template <typename T>
struct Linear {
    ad::BasicTensor<T> weight;  // [in, out]
    ad::BasicTensor<T> bias;    // [out]

    static Linear create(ad::ParameterSet<T>& params, const std::string& name, int64_t in, int64_t out, Init init,
                         uint64_t seed);
    ad::BasicTensor<T> operator()(const ad::BasicTensor<T>& x) const;
};

template <typename T>
struct Conv {
    ad::BasicTensor<T> weight;  // [out, in, k, k]
    ad::BasicTensor<T> bias;    // [out]
    int stride = 1;

    static Conv create(ad::ParameterSet<T>& params, const std::string& name, int64_t in, int64_t out, int k,
                       int stride, Init init, uint64_t seed);
    ad::BasicTensor<T> operator()(const ad::BasicTensor<T>& x) const;
};

uint64_t name_hash(const std::string& s);

}  // namespace ofield::nn
