#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace resadapt {

template <typename T>
struct ParamGroup {
    std::string name;
    std::span<T> values;
    std::span<const T> grads;
    double weight_decay = 0.0;
};

/// SGD with heavy-ball momentum. Velocity buffers are created zeroed on first use.
template <typename T>
class OptimizerState {
public:
    OptimizerState(double learning_rate, double momentum);

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr);
    double momentum() const { return momentum_; }

    std::span<T> velocity(const std::string& name, std::size_t size);
    const std::map<std::string, std::vector<T>>& velocities() const { return velocity_; }

private:
    double lr_;
    double momentum_;
    std::map<std::string, std::vector<T>> velocity_;
};

/// v <- mu v + g + wd p ; p <- p - lr v, for each group.
template <typename T>
void sgd_step(std::span<const ParamGroup<T>> groups, OptimizerState<T>& opt);

}  // namespace resadapt
