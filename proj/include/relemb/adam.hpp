#pragma once

#include <cstdint>
#include <map>

#include "relemb/params.hpp"

namespace relemb::nn {

struct AdamConfig {
    double learning_rate = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Global-norm gradient clipping; 0 disables it (the default).
    double clip_norm = 0.0;
};

// Adaptive-moment optimizer. Updates are applied in place; one Adam instance
// owns the moment state for one parameter set (matching by name).
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return step_; }

    // One optimizer step over every entry of `grads`. Parameters missing a
    // gradient are left untouched. Shape mismatches are rejected.
    void update(ParamSet& params, const GradTable& grads);

private:
    struct Moments {
        Tensor m;
        Tensor v;
    };

    AdamConfig cfg_;
    std::int64_t step_ = 0;
    std::map<std::string, Moments> state_;
};

} // namespace relemb::nn
