#include "megc/tape.hpp"

namespace megc {

Value Tape::constant(Tensor v) {
    nodes_.push_back(Node{std::move(v), Tensor{}, false, {}, nullptr, nullptr});
    return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::leaf(Param& p) {
    nodes_.push_back(Node{p.value, Tensor{}, false, {}, nullptr, &p});
    return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::emplace(Tensor value, std::vector<int> parents, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, false, std::move(parents), std::move(fn), nullptr});
    return Value{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_live) {
        n.grad = Tensor(n.value.shape());
        n.grad_live = true;
    }
    return n.grad;
}

void Tape::backward(Value loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: value from another tape");
    const Node& top = nodes_[static_cast<size_t>(loss.id)];
    if (top.value.size() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " +
                         shape_string(top.value.shape()));
    }

    for (auto& n : nodes_) n.grad_live = false;
    grad(loss.id)[0] = 1.0;

    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad_live) continue;  // not reachable from the loss
        if (n.backward) n.backward(*this, id);
        if (n.bound) {
            Tensor& g = n.bound->grad;
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    }
}

}  // namespace megc
