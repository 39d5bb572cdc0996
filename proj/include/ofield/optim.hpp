#pragma once

#include "ofield/autodiff.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ofield::ad {

/// An ordered list of named learnable tensors.
template <typename T>
struct ParameterSet {
    std::vector<std::pair<std::string, BasicTensor<T>>> entries;

    void add(std::string name, BasicTensor<T> tensor) {
        entries.emplace_back(std::move(name), std::move(tensor));
    }
    void append(const ParameterSet& other) {
        entries.insert(entries.end(), other.entries.begin(), other.entries.end());
    }
    std::vector<BasicTensor<T>> tensors() const;
    void zero_grad();
    int64_t count() const;
};

struct OptimizerConfig {
    enum class Kind { kSgd, kAdam };
    Kind kind = Kind::kAdam;
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config = {});

    static Optimizer sgd(double learning_rate);
    static Optimizer adam(double learning_rate = 5e-4);

    /// Applies one update to every parameter and zeroes its gradient.
    /// Throws std::logic_error when a parameter has no populated gradient.
    void step(const std::vector<BasicTensor<T>>& params);

    int64_t step_count() const { return step_count_; }
    const OptimizerConfig& config() const { return config_; }

    // Moment buffers in parameter order, for checkpointing.
    std::vector<std::vector<T>>& first_moments() { return m_; }
    std::vector<std::vector<T>>& second_moments() { return v_; }
    void set_step_count(int64_t n) { step_count_ = n; }

private:
    OptimizerConfig config_;
    int64_t step_count_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
};

}  // namespace ofield::ad
