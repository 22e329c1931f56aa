#include "megc/optimizer.hpp"

#include <stdexcept>

namespace megc {

double lr_at_epoch(int epoch, const Schedule& s) {
    if (epoch < 0 || epoch >= s.total_epochs) {
        throw std::invalid_argument("lr_at_epoch: epoch " + std::to_string(epoch) +
                                    " outside [0," + std::to_string(s.total_epochs) + ")");
    }
    if (epoch < s.warmup_epochs) {
        return s.base_lr * static_cast<double>(epoch + 1) / s.warmup_epochs;
    }
    double lr = s.base_lr;
    for (int m : s.milestones) {
        if (epoch >= m) lr *= s.decay;
    }
    return lr;
}

SgdOptimizer::SgdOptimizer(std::vector<Param*> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    velocity_.reserve(params_.size());
    for (Param* p : params_) velocity_.emplace_back(p->value.shape());
}

void SgdOptimizer::step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        Tensor& v = velocity_[i];
        const double wd = p.decay_exempt ? 0.0 : cfg_.weight_decay;
        for (std::int64_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad[j] + wd * p.value[j];
            v[j] = cfg_.momentum * v[j] + g;
            const double d = cfg_.nesterov ? g + cfg_.momentum * v[j] : v[j];
            p.value[j] -= lr * d;
        }
    }
}

}  // namespace megc
