#include "relemb/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace relemb::nn {

void Adam::update(ParamSet& params, const GradTable& grads) {
    for (const auto& [name, g] : grads) {
        const Tensor& p = params.get(name);
        if (!p.same_shape(g))
            throw std::invalid_argument("Adam::update: gradient shape " + g.shape_str() +
                                        " does not match parameter '" + name + "' " +
                                        p.shape_str());
    }

    double clip_scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, g] : grads)
            for (std::size_t i = 0; i < g.size(); ++i) sq += g[i] * g[i];
        double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) clip_scale = cfg_.clip_norm / norm;
    }

    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

    for (const auto& [name, g] : grads) {
        Tensor& p = params.get(name);
        auto it = state_.find(name);
        if (it == state_.end()) {
            Moments mom;
            mom.m = Tensor(p.rows(), p.cols());
            mom.v = Tensor(p.rows(), p.cols());
            it = state_.emplace(name, std::move(mom)).first;
        }
        Tensor& m = it->second.m;
        Tensor& v = it->second.v;
        for (std::size_t i = 0; i < p.size(); ++i) {
            double gi = g[i] * clip_scale;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

} // namespace relemb::nn
