#include "ofield/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ofield::ad {

template <typename T>
std::vector<BasicTensor<T>> ParameterSet<T>::tensors() const {
    std::vector<BasicTensor<T>> out;
    out.reserve(entries.size());
    for (const auto& [name, t] : entries) out.push_back(t);
    return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& [name, t] : entries) t.zero_grad();
}

template <typename T>
int64_t ParameterSet<T>::count() const {
    int64_t n = 0;
    for (const auto& [name, t] : entries) n += t.numel();
    return n;
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig config) : config_(config) {
    if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("optimizer: learning rate must be positive");
}

template <typename T>
Optimizer<T> Optimizer<T>::sgd(double learning_rate) {
    OptimizerConfig c;
    c.kind = OptimizerConfig::Kind::kSgd;
    c.learning_rate = learning_rate;
    return Optimizer(c);
}

template <typename T>
Optimizer<T> Optimizer<T>::adam(double learning_rate) {
    OptimizerConfig c;
    c.learning_rate = learning_rate;
    return Optimizer(c);
}

template <typename T>
void Optimizer<T>::step(const std::vector<BasicTensor<T>>& params) {
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params[i].has_grad())
            throw std::logic_error("optimizer: parameter " + std::to_string(i) + " " +
                                   to_string(params[i].shape()) + " has no gradient");

    if (config_.kind == OptimizerConfig::Kind::kAdam && m_.size() != params.size()) {
        m_.assign(params.size(), {});
        v_.assign(params.size(), {});
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(static_cast<std::size_t>(params[i].numel()), T(0));
            v_[i].assign(static_cast<std::size_t>(params[i].numel()), T(0));
        }
    }
    ++step_count_;

    const double lr = config_.learning_rate;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        BasicTensor<T> p = params[i];
        auto value = p.mutable_values();
        auto grad = p.mutable_grad();
        if (config_.kind == OptimizerConfig::Kind::kSgd) {
            for (std::size_t j = 0; j < value.size(); ++j) value[j] -= static_cast<T>(lr) * grad[j];
        } else {
            auto& m = m_[i];
            auto& v = v_[i];
            if (m.size() != value.size()) throw std::logic_error("optimizer: parameter list changed shape");
            for (std::size_t j = 0; j < value.size(); ++j) {
                const double g = grad[j];
                m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g);
                v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g * g);
                const double mhat = m[j] / c1;
                const double vhat = v[j] / c2;
                value[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + config_.epsilon));
            }
        }
        std::fill(grad.begin(), grad.end(), T(0));
    }
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace ofield::ad
