#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recon/tensor.hpp"

namespace recon {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment slots mirror the parameter shapes; the
// step counter only ever advances.
class Adam {
public:
    Adam(const std::vector<const Tensor*>& params, AdamConfig cfg);

    // params[i] is updated in place from grads[i]. Non-finite gradients abort
    // with the parameter's name.
    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
              const std::vector<std::string>& names);
    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);

    int64_t step_count() const { return step_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }

private:
    struct Slot {
        Tensor m, v;
    };
    std::vector<Slot> slots_;
    AdamConfig cfg_;
    int64_t step_ = 0;
};

}  // namespace recon
