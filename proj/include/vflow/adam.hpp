#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vflow/params.hpp"
#include "vflow/tensor.hpp"

namespace vflow {

// Bias-corrected Adam over a ParamSet. Moment buffers are lazily created to
// match parameter shapes on the first step.
template <typename S>
class AdamStateT {
  public:
    explicit AdamStateT(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (lr <= 0) throw ConfigError("adam: learning rate must be positive");
    }

    int64_t step_count() const { return step_; }
    double lr() const { return lr_; }
    void set_lr(double lr) {
        if (lr <= 0) throw ConfigError("adam: learning rate must be positive");
        lr_ = lr;
    }

    // One update. grads[i] pairs with params.tensor(i); a non-finite gradient
    // refuses the whole update and names the parameter.
    void step(ParamSetT<S>& params, const std::vector<TensorT<S>>& grads) {
        if (grads.size() != params.size()) {
            throw ContractError("adam: got " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
        }
        for (size_t i = 0; i < params.size(); ++i) {
            if (!params.tensor(i).same_shape(grads[i])) {
                throw ShapeError("adam: gradient shape " + shape_str(grads[i].shape()) +
                                 " does not match parameter " + params.name(i) + " " +
                                 shape_str(params.tensor(i).shape()));
            }
            if (!grads[i].all_finite()) {
                throw NumericError("adam: non-finite gradient for parameter " + params.name(i));
            }
        }
        if (m_.empty()) {
            for (size_t i = 0; i < params.size(); ++i) {
                m_.emplace_back(params.tensor(i).shape());
                v_.emplace_back(params.tensor(i).shape());
            }
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (size_t i = 0; i < params.size(); ++i) {
            TensorT<S>& p = params.tensor(i);
            const TensorT<S>& g = grads[i];
            TensorT<S>& m = m_[i];
            TensorT<S>& v = v_[i];
            for (int64_t j = 0; j < p.numel(); ++j) {
                const double gj = static_cast<double>(g[j]);
                const double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * gj;
                const double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * gj * gj;
                m[j] = static_cast<S>(mj);
                v[j] = static_cast<S>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                p[j] = static_cast<S>(static_cast<double>(p[j]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

  private:
    double lr_, beta1_, beta2_, eps_;
    int64_t step_ = 0;
    std::vector<TensorT<S>> m_;
    std::vector<TensorT<S>> v_;
};

using AdamState = AdamStateT<float>;

}  // namespace vflow
