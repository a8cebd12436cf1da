#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fan/tensor.hpp"

namespace fan {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// RMSProp with one mean-square accumulator per parameter:
//   acc   <- alpha*acc + (1-alpha)*g^2
//   param <- param - lr*g/(sqrt(acc)+eps)
template <typename T>
class RmsProp {
public:
    RmsProp(T learning_rate, T alpha = T(0.99), T epsilon = T(1e-8))
        : lr_(learning_rate), alpha_(alpha), eps_(epsilon) {
        if (learning_rate <= T(0)) throw ConfigError("rmsprop learning rate must be positive");
        if (alpha <= T(0) || alpha >= T(1)) throw ConfigError("rmsprop alpha must be in (0,1)");
    }

    void set_learning_rate(T lr) { lr_ = lr; }
    T learning_rate() const { return lr_; }
    T alpha() const { return alpha_; }
    T epsilon() const { return eps_; }

    void step(NamedTensors<T>& params) {
        if (acc_.empty()) {
            acc_.reserve(params.size());
            for (auto& [name, p] : params)
                acc_.emplace_back(name, Tensor<T>::zeros(p.shape()));
        }
        if (acc_.size() != params.size())
            throw ConfigError("rmsprop state does not match parameter list");
        for (size_t i = 0; i < params.size(); ++i) {
            auto& [name, p] = params[i];
            Tensor<T>& acc = acc_[i].second;
            const T* g = p.grad();
            T* a = acc.data();
            T* v = p.data();
            const int64_t n = p.numel();
            for (int64_t j = 0; j < n; ++j) {
                if (!std::isfinite(static_cast<double>(g[j])))
                    throw NumericError(strcat_("training diverged: non-finite gradient in ",
                                               name));
                a[j] = alpha_ * a[j] + (T(1) - alpha_) * g[j] * g[j];
                v[j] -= lr_ * g[j] / (std::sqrt(a[j]) + eps_);
            }
        }
    }

    NamedTensors<T>& accumulators() { return acc_; }
    const NamedTensors<T>& accumulators() const { return acc_; }

private:
    T lr_, alpha_, eps_;
    NamedTensors<T> acc_;
};

}  // namespace fan
