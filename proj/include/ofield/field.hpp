#pragma once

// Radiance field: positional encoding and an MLP mapping (x, d) to a
// C-dimensional radiance feature and a non-negative density.

#include "ofield/nn.hpp"

#include <array>
#include <vector>

namespace ofield {

struct FieldConfig {
    int pos_bands = 8;  // L_x
    int dir_bands = 2;  // L_d
    int width = 64;
    int depth = 4;
    int features = 8;   // C

    void validate() const;
};

/// [v, sin(2⁰πv), cos(2⁰πv), …, sin(2^{L−1}πv), cos(2^{L−1}πv)].
std::vector<double> positional_encode(const std::array<double, 3>& v, int bands);
int encoded_size(int bands);

/// Row-wise encoding of an [M,3] tensor; the result carries no gradient.
template <typename T>
ad::BasicTensor<T> positional_encode(const ad::BasicTensor<T>& v, int bands);

template <typename T>
struct FieldOutput {
    ad::BasicTensor<T> features;  // [M, C]
    ad::BasicTensor<T> sigma;     // [M, 1]
};

template <typename T>
class FieldNetwork {
public:
    FieldNetwork() = default;
    FieldNetwork(const FieldConfig& config, const std::string& prefix, uint64_t seed);

    /// x normalized to [−1,1]³, d unit; both [M,3].
    FieldOutput<T> forward(const ad::BasicTensor<T>& x, const ad::BasicTensor<T>& d) const;
    /// Density only; never touches the direction branch.
    ad::BasicTensor<T> density(const ad::BasicTensor<T>& x) const;

    const FieldConfig& config() const { return config_; }
    ad::ParameterSet<T>& parameters() { return params_; }
    const ad::ParameterSet<T>& parameters() const { return params_; }

private:
    ad::BasicTensor<T> trunk(const ad::BasicTensor<T>& x) const;

    FieldConfig config_;
    ad::ParameterSet<T> params_;
    std::vector<nn::Linear<T>> trunk_;
    nn::Linear<T> sigma_head_;
    nn::Linear<T> bottleneck_;
    nn::Linear<T> dir_layer_;
    nn::Linear<T> feature_head_;
};

}  // namespace ofield
