#include "ofield/field.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ofield {

void FieldConfig::validate() const {
    if (pos_bands <= 0 || dir_bands <= 0 || width <= 0 || depth <= 0)
        throw std::invalid_argument("field: bands, width and depth must be positive");
    if (features < 4) throw std::invalid_argument("field: feature dimension must be at least 4");
}

int encoded_size(int bands) { return 3 + 6 * bands; }

std::vector<double> positional_encode(const std::array<double, 3>& v, int bands) {
    std::vector<double> out(v.begin(), v.end());
    out.reserve(static_cast<std::size_t>(encoded_size(bands)));
    for (int l = 0; l < bands; ++l) {
        const double f = std::ldexp(std::numbers::pi, l);
        for (double x : v) out.push_back(std::sin(f * x));
        for (double x : v) out.push_back(std::cos(f * x));
    }
    return out;
}

template <typename T>
ad::BasicTensor<T> positional_encode(const ad::BasicTensor<T>& v, int bands) {
    if (v.rank() != 2 || v.dim(1) != 3) throw ad::ShapeError("positional_encode", v.shape(), {0, 3});
    const int64_t m = v.dim(0);
    const int width = encoded_size(bands);
    std::vector<T> out(static_cast<std::size_t>(m * width));
    const auto src = v.values();
    for (int64_t i = 0; i < m; ++i) {
        T* row = out.data() + i * width;
        const T* x = src.data() + i * 3;
        row[0] = x[0];
        row[1] = x[1];
        row[2] = x[2];
        for (int a = 0; a < 3; ++a) {
            // Double-angle recurrence from the base band; error stays near 2^bands ulp of a double.
            double sn = std::sin(std::numbers::pi * static_cast<double>(x[a]));
            double cs = std::cos(std::numbers::pi * static_cast<double>(x[a]));
            for (int l = 0; l < bands; ++l) {
                row[3 + 6 * l + a] = static_cast<T>(sn);
                row[6 + 6 * l + a] = static_cast<T>(cs);
                const double s2 = 2.0 * sn * cs;
                cs = (cs - sn) * (cs + sn);
                sn = s2;
            }
        }
    }
    return ad::BasicTensor<T>({m, width}, std::move(out));
}

template <typename T>
FieldNetwork<T>::FieldNetwork(const FieldConfig& config, const std::string& prefix, uint64_t seed) : config_(config) {
    config_.validate();
    const int w = config.width;
    int in = encoded_size(config.pos_bands);
    for (int i = 0; i < config.depth; ++i) {
        trunk_.push_back(nn::Linear<T>::create(params_, prefix + ".trunk" + std::to_string(i), in, w, nn::Init::kHe, seed));
        in = w;
    }
    sigma_head_ = nn::Linear<T>::create(params_, prefix + ".sigma", w, 1, nn::Init::kXavier, seed);
    bottleneck_ = nn::Linear<T>::create(params_, prefix + ".bottleneck", w, w, nn::Init::kXavier, seed);
    dir_layer_ = nn::Linear<T>::create(params_, prefix + ".dir", w + encoded_size(config.dir_bands), w / 2,
                                       nn::Init::kHe, seed);
    feature_head_ = nn::Linear<T>::create(params_, prefix + ".feature", w / 2, config.features, nn::Init::kXavier, seed);
}

template <typename T>
ad::BasicTensor<T> FieldNetwork<T>::trunk(const ad::BasicTensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != 3) throw ad::ShapeError("field_forward", x.shape(), {0, 3});
    ad::BasicTensor<T> h = positional_encode(x, config_.pos_bands);
    for (const auto& layer : trunk_) h = ad::relu(layer(h));
    return h;
}

template <typename T>
ad::BasicTensor<T> FieldNetwork<T>::density(const ad::BasicTensor<T>& x) const {
    return ad::softplus(sigma_head_(trunk(x)));
}

template <typename T>
FieldOutput<T> FieldNetwork<T>::forward(const ad::BasicTensor<T>& x, const ad::BasicTensor<T>& d) const {
    if (d.shape() != x.shape()) throw ad::ShapeError("field_forward", x.shape(), d.shape());
    const ad::BasicTensor<T> h = trunk(x);
    FieldOutput<T> out;
    out.sigma = ad::softplus(sigma_head_(h));
    const ad::BasicTensor<T> g =
        ad::relu(dir_layer_(ad::concat<T>({bottleneck_(h), positional_encode(d, config_.dir_bands)}, 1)));
    out.features = feature_head_(g);
    return out;
}

template ad::BasicTensor<float> positional_encode<float>(const ad::BasicTensor<float>&, int);
template ad::BasicTensor<double> positional_encode<double>(const ad::BasicTensor<double>&, int);
template class FieldNetwork<float>;
template class FieldNetwork<double>;

}  // namespace ofield
