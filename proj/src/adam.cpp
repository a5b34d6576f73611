#include "apo/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace apo {

AdamState::AdamState(AdamConfig config, std::span<Parameter* const> params) : cfg_(config) {
    if (!(cfg_.learning_rate > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
    for (const Parameter* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void AdamState::step(std::span<Parameter* const> params, std::span<const Tensor* const> active) {
    if (params.size() != m_.size()) throw std::invalid_argument("adam: parameter count changed");
    if (!active.empty() && active.size() != params.size()) throw std::invalid_argument("adam: mask count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Parameter& p = *params[k];
        if (p.grad.shape() != m_[k].shape() || p.value.shape() != m_[k].shape()) {
            throw std::invalid_argument("adam: shape mismatch for " + p.name);
        }
        if (!p.grad.all_finite()) throw std::domain_error("non-finite gradient");
        if (!active.empty() && active[k] && active[k]->shape() != p.value.shape()) {
            throw std::invalid_argument("adam: mask shape mismatch for " + p.name);
        }
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        const Tensor* mask = active.empty() ? nullptr : active[k];
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            if (mask && (*mask)[i] == 0.0) continue;
            const double g = p.grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }
}

}  // namespace apo
