#include "ofield/nn.hpp"

#include "ofield/rng.hpp"

#include <cmath>

namespace ofield::nn {

uint64_t name_hash(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
}

template <typename T>
ad::BasicTensor<T> init_tensor(const ad::Shape& shape, int64_t fan_in, int64_t fan_out, Init init, uint64_t seed,
                               const std::string& name) {
    std::vector<T> v(static_cast<std::size_t>(ad::numel(shape)), T(0));
    if (init != Init::kZero) {
        const double bound = init == Init::kHe ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                               : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        CounterRng rng(hash_key({seed, name_hash(name)}));
        for (T& x : v) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    }
    return ad::BasicTensor<T>(shape, std::move(v), true);
}

template <typename T>
Linear<T> Linear<T>::create(ad::ParameterSet<T>& params, const std::string& name, int64_t in, int64_t out, Init init,
                            uint64_t seed) {
    Linear l;
    l.weight = init_tensor<T>({in, out}, in, out, init, seed, name + ".weight");
    l.bias = ad::BasicTensor<T>::zeros({out}, true);
    params.add(name + ".weight", l.weight);
    params.add(name + ".bias", l.bias);
    return l;
}

template <typename T>
ad::BasicTensor<T> Linear<T>::operator()(const ad::BasicTensor<T>& x) const {
    return ad::affine(x, weight, bias);
}

template <typename T>
Conv<T> Conv<T>::create(ad::ParameterSet<T>& params, const std::string& name, int64_t in, int64_t out, int k,
                        int stride, Init init, uint64_t seed) {
    Conv c;
    c.weight = init_tensor<T>({out, in, k, k}, in * k * k, out * k * k, init, seed, name + ".weight");
    c.bias = ad::BasicTensor<T>::zeros({out}, true);
    c.stride = stride;
    params.add(name + ".weight", c.weight);
    params.add(name + ".bias", c.bias);
    return c;
}

template <typename T>
ad::BasicTensor<T> Conv<T>::operator()(const ad::BasicTensor<T>& x) const {
    return ad::conv2d(x, weight, bias, stride);
}

template ad::BasicTensor<float> init_tensor<float>(const ad::Shape&, int64_t, int64_t, Init, uint64_t, const std::string&);
template ad::BasicTensor<double> init_tensor<double>(const ad::Shape&, int64_t, int64_t, Init, uint64_t, const std::string&);
template struct Linear<float>;
template struct Linear<double>;
template struct Conv<float>;
template struct Conv<double>;

}  // namespace ofield::nn
