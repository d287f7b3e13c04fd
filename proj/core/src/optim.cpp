#include "resadapt/optim.hpp"

#include "resadapt/errors.hpp"

namespace resadapt {

template <typename T>
OptimizerState<T>::OptimizerState(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {
    set_learning_rate(learning_rate);
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
}

template <typename T>
void OptimizerState<T>::set_learning_rate(double lr) {
    if (!(lr >= 0.0)) {
        throw ConfigError("learning rate must be non-negative");
    }
    lr_ = lr;
}

template <typename T>
std::span<T> OptimizerState<T>::velocity(const std::string& name, std::size_t size) {
    auto [it, inserted] = velocity_.try_emplace(name, size, T{0});
    if (it->second.size() != size) {
        throw ConfigError("velocity buffer for " + name + " has size " + std::to_string(it->second.size()) +
                          ", parameter has " + std::to_string(size));
    }
    return it->second;
}

template <typename T>
void sgd_step(std::span<const ParamGroup<T>> groups, OptimizerState<T>& opt) {
    const T lr = T(opt.learning_rate());
    const T mu = T(opt.momentum());
    for (const auto& group : groups) {
        if (group.values.size() != group.grads.size()) {
            throw ConfigError("sgd_step: " + group.name + " has " + std::to_string(group.values.size()) +
                              " values but " + std::to_string(group.grads.size()) + " gradients");
        }
        if (group.weight_decay < 0.0) {
            throw ConfigError("sgd_step: negative weight decay for " + group.name);
        }
        const T wd = T(group.weight_decay);
        auto v = opt.velocity(group.name, group.values.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = mu * v[i] + group.grads[i] + wd * group.values[i];
            group.values[i] -= lr * v[i];
        }
    }
}

template class OptimizerState<float>;
template class OptimizerState<double>;
template void sgd_step<float>(std::span<const ParamGroup<float>>, OptimizerState<float>&);
template void sgd_step<double>(std::span<const ParamGroup<double>>, OptimizerState<double>&);

}  // namespace resadapt
