#include "recon/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace recon {

Adam::Adam(const std::vector<const Tensor*>& params, AdamConfig cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (const Tensor* p : params) slots_.push_back({Tensor::zeros(p->shape), Tensor::zeros(p->shape)});
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    std::vector<std::string> names;
    names.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) names.push_back("param" + std::to_string(i));
    step(params, grads, names);
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                const std::vector<std::string>& names) {
    if (params.size() != slots_.size() || grads.size() != slots_.size())
        throw std::invalid_argument("optimizer step: parameter/gradient count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(slots_[i].m))
            throw std::invalid_argument("optimizer step: shape changed for " + names[i]);
        if (!grads[i]->same_shape(*params[i]))
            throw std::invalid_argument("optimizer step: gradient shape mismatch for " + names[i]);
        if (!grads[i]->all_finite())
            throw std::runtime_error("non-finite gradient for parameter " + names[i]);
    }
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        Slot& s = slots_[i];
        for (size_t k = 0; k < p.data.size(); ++k) {
            s.m.data[k] = cfg_.beta1 * s.m.data[k] + (1.0 - cfg_.beta1) * g.data[k];
            s.v.data[k] = cfg_.beta2 * s.v.data[k] + (1.0 - cfg_.beta2) * g.data[k] * g.data[k];
            double mhat = s.m.data[k] / bc1;
            double vhat = s.v.data[k] / bc2;
            p.data[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace recon
