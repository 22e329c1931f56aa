#pragma once

#include "megc/tape.hpp"
#include "megc/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace megc {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h);

/// |a-n| / max(|a|, |n|, 1e-3); the floor turns near-zero gradients into an
/// absolute 1e-7-scale comparison, below finite-difference noise.
double rel_error(double analytic, double numeric);
double max_rel_error(const Tensor& analytic, const Tensor& numeric);

struct GradCheckEntry {
    std::string group;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double worst() const;
    const GradCheckEntry* worst_entry() const;
    bool passed(double tolerance) const;
};

/// Analytic vs finite-difference gradients for every differentiable op, one
/// full me-GC layer, and the tiny end-to-end model (K=2, channels 4->4->8,
/// r=2, T=8, N=5, batch 2). Deterministic in the seed.
GradCheckReport run_gradient_suite(std::uint64_t seed, double fd_step = 1e-5);

}  // namespace megc
