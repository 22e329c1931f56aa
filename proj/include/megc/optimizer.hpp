#pragma once

#include "megc/tape.hpp"

#include <vector>

namespace megc {

/// Warmup then step decay: linear ramp to base_lr over the warmup epochs,
/// multiplied by `decay` at each milestone afterwards.
struct Schedule {
    double base_lr = 0.01;
    int warmup_epochs = 5;
    std::vector<int> milestones = {35, 55};
    double decay = 0.1;
    int total_epochs = 65;
};

double lr_at_epoch(int epoch, const Schedule& s);

struct OptimizerConfig {
    double momentum = 0.9;
    double weight_decay = 0.0004;
    bool nesterov = true;
};

/// SGD with Nesterov momentum. L2 decay is folded into the gradient except
/// for decay-exempt parameters (alpha, beta, biases).
class SgdOptimizer {
  public:
    SgdOptimizer(std::vector<Param*> params, OptimizerConfig cfg);

    void step(double lr);

  private:
    std::vector<Param*> params_;
    std::vector<Tensor> velocity_;
    OptimizerConfig cfg_;
};

}  // namespace megc
