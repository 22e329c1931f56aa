#pragma once

#include "megc/tensor.hpp"

#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace megc {

class Tape;

/// Learnable tensor with a gradient accumulator of identical shape.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool decay_exempt = false;

    Param() = default;
    Param(std::string name_, Tensor init, bool decay_exempt_ = false)
        : name(std::move(name_)),
          value(std::move(init)),
          grad(value.shape()),
          decay_exempt(decay_exempt_) {}

    Param(const Param&) = delete;
    Param& operator=(const Param&) = delete;
    Param(Param&&) = default;
    Param& operator=(Param&&) = default;

    void zero_grad() { grad.set_zero(); }
};

/// Handle to a node on a Tape. Cheap to copy; valid for the tape's lifetime.
struct Value {
    Tape* tape = nullptr;
    int id = -1;
};

/// Reverse-mode differentiation tape. Nodes are recorded in forward order,
/// which is a topological order of the DAG, so the backward sweep visits
/// each node exactly once by walking the records in reverse.
///
/// Single-threaded: one forward/backward at a time per instance.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, int node_id)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf holding a copy of `v`; no gradient is reported for it.
    Value constant(Tensor v);

    /// Leaf bound to `p`; backward() accumulates into p.grad.
    Value leaf(Param& p);

    /// Records an op result. `parents` are the op inputs; `fn` pulls the
    /// node's grad back into its parents' grads (accumulating).
    Value emplace(Tensor value, std::vector<int> parents, BackwardFn fn);

    const Tensor& val(Value v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    /// Gradient buffer of a node, allocated on first touch during backward.
    Tensor& grad(int id);
    const std::vector<int>& parents(int id) const {
        return nodes_[static_cast<size_t>(id)].parents;
    }

    /// Reverse sweep from a scalar loss. Internal node grads are reset per
    /// call; Param grads accumulate across calls until zero_grad.
    void backward(Value loss);

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_live = false;
        std::vector<int> parents;
        BackwardFn backward;
        Param* bound = nullptr;
    };

    // deque keeps val()/grad() references stable while later ops record
    std::deque<Node> nodes_;
};

}  // namespace megc
