#include "megc/gradcheck.hpp"

#include "megc/graph.hpp"
#include "megc/layers.hpp"
#include "megc/model.hpp"
#include "megc/ops.hpp"
#include "megc/rng.hpp"

#include <algorithm>
#include <cmath>

namespace megc {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: step must be > 0");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double up = f(probe);
        probe[i] = saved - h;
        const double down = f(probe);
        probe[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

double rel_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    return std::abs(analytic - numeric) / denom;
}

double max_rel_error(const Tensor& analytic, const Tensor& numeric) {
    if (!analytic.same_shape(numeric)) {
        throw ShapeError("max_rel_error: shapes differ: " + shape_string(analytic.shape()) +
                         " vs " + shape_string(numeric.shape()));
    }
    double worst = 0.0;
    for (std::int64_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, rel_error(analytic[i], numeric[i]));
    }
    return worst;
}

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_error);
    return w;
}

const GradCheckEntry* GradCheckReport::worst_entry() const {
    const GradCheckEntry* w = nullptr;
    for (const auto& e : entries) {
        if (!w || e.max_rel_error > w->max_rel_error) w = &e;
    }
    return w;
}

bool GradCheckReport::passed(double tolerance) const { return worst() <= tolerance; }

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double radius = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-radius, radius);
    return t;
}

/// loss = sum(w .* x); test-only reduction to a scalar.
Value weighted_sum(Value x, const Tensor& w) {
    Tape& t = *x.tape;
    if (!t.val(x).same_shape(w)) throw ShapeError("weighted_sum: weight shape mismatch");
    const double s = t.val(x).vector().dot(w.vector());
    return t.emplace(Tensor::scalar(s), {x.id}, [w](Tape& t, int id) {
        t.grad(t.parents(id)[0]).vector() += t.grad(id)[0] * w.vector();
    });
}

/// Compares tape gradients of `inputs` against central differences of the
/// scalar built by `make_loss` on a fresh tape per evaluation.
void check_inputs(GradCheckReport& report, const std::string& group,
                  const std::vector<Param*>& inputs, const std::function<Value(Tape&)>& make_loss,
                  double h) {
    Tape tape;
    for (Param* p : inputs) p->zero_grad();
    tape.backward(make_loss(tape));
    std::vector<Tensor> analytic;
    analytic.reserve(inputs.size());
    for (Param* p : inputs) analytic.push_back(p->grad);

    for (size_t i = 0; i < inputs.size(); ++i) {
        Param* p = inputs[i];
        const Tensor saved = p->value;
        auto f = [&](const Tensor& candidate) {
            p->value = candidate;
            Tape t2;
            const double loss = t2.val(make_loss(t2))[0];
            return loss;
        };
        const Tensor numeric = finite_diff_grad(f, saved, h);
        p->value = saved;
        report.entries.push_back(
            GradCheckEntry{group + "/" + p->name, max_rel_error(analytic[i], numeric)});
    }
}

void check_elementwise_ops(GradCheckReport& report, Rng& rng, double h) {
    Param x("x", random_tensor({3, 4}, rng));
    Param y("y", random_tensor({3, 4}, rng));
    Param s("s", Tensor::scalar(rng.uniform(-1.0, 1.0)));
    const Tensor w = random_tensor({3, 4}, rng);
    const Tensor w3 = random_tensor({3, 4, 4}, rng);

    check_inputs(report, "add", {&x, &y}, [&](Tape& t) {
        return weighted_sum(add(t.leaf(x), t.leaf(y)), w);
    }, h);
    check_inputs(report, "sub", {&x, &y}, [&](Tape& t) {
        return weighted_sum(sub(t.leaf(x), t.leaf(y)), w);
    }, h);
    check_inputs(report, "scale", {&x}, [&](Tape& t) {
        return weighted_sum(scale(t.leaf(x), -0.7), w);
    }, h);
    check_inputs(report, "mul_scalar", {&x, &s}, [&](Tape& t) {
        return weighted_sum(mul_scalar(t.leaf(x), t.leaf(s)), w);
    }, h);
    check_inputs(report, "tanh_map", {&x}, [&](Tape& t) {
        return weighted_sum(tanh_map(t.leaf(x)), w);
    }, h);
    check_inputs(report, "pairwise_diff", {&x, &y}, [&](Tape& t) {
        return weighted_sum(pairwise_diff(t.leaf(x), t.leaf(y)), w3);
    }, h);
}

void check_structural_ops(GradCheckReport& report, Rng& rng, double h) {
    Param x("x", random_tensor({2, 6, 3}, rng));
    const Tensor w_slice = random_tensor({6, 3}, rng);
    const Tensor w_stack = random_tensor({2, 2, 6, 3}, rng);
    const Tensor w_sub = random_tensor({2, 3, 3}, rng);
    const Tensor w_meant = random_tensor({2, 3}, rng);
    const Tensor w_meantj = random_tensor({2}, rng);
    const Tensor w_sum = random_tensor({6, 3}, rng);

    check_inputs(report, "slice_first", {&x}, [&](Tape& t) {
        return weighted_sum(slice_first(t.leaf(x), 1), w_slice);
    }, h);
    check_inputs(report, "stack_first", {&x}, [&](Tape& t) {
        Value v = t.leaf(x);
        return weighted_sum(stack_first({v, v}), w_stack);
    }, h);
    check_inputs(report, "subsample_time", {&x}, [&](Tape& t) {
        return weighted_sum(subsample_time(t.leaf(x), 2), w_sub);
    }, h);
    check_inputs(report, "mean_over_time", {&x}, [&](Tape& t) {
        return weighted_sum(mean_over_time(t.leaf(x)), w_meant);
    }, h);
    check_inputs(report, "global_mean_time_joints", {&x}, [&](Tape& t) {
        return weighted_sum(global_mean_time_joints(t.leaf(x)), w_meantj);
    }, h);
    check_inputs(report, "sum_first", {&x}, [&](Tape& t) {
        return weighted_sum(sum_first(t.leaf(x)), w_sum);
    }, h);
}

void check_linear_ops(GradCheckReport& report, Rng& rng, double h) {
    Param x("x", random_tensor({3, 4, 2}, rng));
    Param w("w", random_tensor({5, 3}, rng));
    Param b("b", random_tensor({5}, rng));
    const Tensor wsum = random_tensor({5, 4, 2}, rng);
    check_inputs(report, "pointwise_conv", {&x, &w, &b}, [&](Tape& t) {
        return weighted_sum(pointwise_conv(t.leaf(x), t.leaf(w), t.leaf(b)), wsum);
    }, h);

    Param xa("x", random_tensor({4}, rng));
    Param wa("w", random_tensor({3, 4}, rng));
    Param ba("b", random_tensor({3}, rng));
    const Tensor wsa = random_tensor({3}, rng);
    check_inputs(report, "affine", {&xa, &wa, &ba}, [&](Tape& t) {
        return weighted_sum(affine(t.leaf(xa), t.leaf(wa), t.leaf(ba)), wsa);
    }, h);

    Param xt("x", random_tensor({2, 8, 3}, rng));
    Param w1("w1", random_tensor({2, 2, 5}, rng));
    Param b1("b1", random_tensor({2}, rng));
    Param w2("w2", random_tensor({2, 2, 5}, rng));
    Param b2("b2", random_tensor({2}, rng));
    const Tensor wtc = random_tensor({2, 8, 3}, rng);
    check_inputs(report, "temporal_conv", {&xt, &w1, &b1, &w2, &b2}, [&](Tape& t) {
        std::vector<TcBranchRef> branches = {
            TcBranchRef{t.leaf(w1), t.leaf(b1), 1, 1},
            TcBranchRef{t.leaf(w2), t.leaf(b2), 2, 1},
        };
        return weighted_sum(temporal_conv(t.leaf(xt), branches), wtc);
    }, h);

    const Tensor wtc2 = random_tensor({2, 4, 3}, rng);
    check_inputs(report, "temporal_conv_stride2", {&xt, &w1, &b1}, [&](Tape& t) {
        std::vector<TcBranchRef> branches = {TcBranchRef{t.leaf(w1), t.leaf(b1), 1, 2}};
        return weighted_sum(temporal_conv(t.leaf(xt), branches), wtc2);
    }, h);
}

void check_graph_ops(GradCheckReport& report, Rng& rng, double h) {
    Param f("f", random_tensor({2, 3, 4, 5}, rng));
    Param a("a", random_tensor({2, 3, 5, 5}, rng));
    const Tensor w = random_tensor({2, 3, 4, 5}, rng);
    check_inputs(report, "contract_graph", {&f, &a}, [&](Tape& t) {
        return weighted_sum(contract_graph(t.leaf(f), t.leaf(a)), w);
    }, h);

    Param x("x", random_tensor({3, 4, 4}, rng));
    Param alpha("alpha", Tensor::scalar(0.8));
    Tensor a_static = random_tensor({1, 4, 4}, rng);
    const Tensor wb = random_tensor({3, 4, 4}, rng);
    check_inputs(report, "broadcast_add_static", {&x, &alpha}, [&](Tape& t) {
        return weighted_sum(broadcast_add_static(t.leaf(x), a_static, t.leaf(alpha)), wb);
    }, h);
}

void check_norm_loss_ops(GradCheckReport& report, Rng& rng, double h) {
    Param x("x", random_tensor({2, 2, 3, 4, 2}, rng));
    Param gamma("gamma", random_tensor({3, 2}, rng, 0.5));
    Param beta("beta", random_tensor({3, 2}, rng, 0.5));
    const Tensor w = random_tensor({2, 2, 3, 4, 2}, rng);

    check_inputs(report, "batch_norm_train", {&x, &gamma, &beta}, [&](Tape& t) {
        NormStats fresh;  // stats updates must not leak between evaluations
        return weighted_sum(
            temporal_batch_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), fresh, true), w);
    }, h);

    NormStats frozen;
    frozen.running_mean = random_tensor({3, 2}, rng, 0.3);
    frozen.running_var = Tensor::full({3, 2}, 1.0);
    for (std::int64_t i = 0; i < frozen.running_var.size(); ++i) {
        frozen.running_var[i] = 0.5 + rng.uniform();
    }
    frozen.initialized = true;
    check_inputs(report, "batch_norm_eval", {&x, &gamma, &beta}, [&](Tape& t) {
        return weighted_sum(
            temporal_batch_norm(t.leaf(x), t.leaf(gamma), t.leaf(beta), frozen, false), w);
    }, h);

    Param drop_in("x", random_tensor({4, 5}, rng));
    const Tensor wd = random_tensor({4, 5}, rng);
    check_inputs(report, "dropout", {&drop_in}, [&](Tape& t) {
        Rng mask_rng(1234);  // same mask for every evaluation
        return weighted_sum(dropout(t.leaf(drop_in), 0.4, true, mask_rng), wd);
    }, h);

    Param logits("logits", random_tensor({3, 4}, rng));
    const std::vector<int> labels = {2, 0, 3};
    check_inputs(report, "softmax_cross_entropy", {&logits}, [&](Tape& t) {
        return softmax_cross_entropy(t.leaf(logits), labels);
    }, h);
}

void check_layer(GradCheckReport& report, Rng& rng, double h) {
    const SkeletonGraph graph = preset_graph("chain5");
    const Tensor a_static = static_adjacency(graph);
    Rng init = rng.fork(11);
    MeGcLayer layer("layer", 4, 6, 2, 2, a_static, true, init);
    Param x("x", random_tensor({2, 4, 8, 5}, rng));
    const Tensor w = random_tensor({2, 6, 4, 5}, rng);

    std::vector<Param*> inputs = {&x};
    layer.collect_params(inputs);
    check_inputs(report, "me_gc_layer", inputs, [&](Tape& t) {
        return weighted_sum(layer_forward(t.leaf(x), layer), w);
    }, h);
}

void check_model(GradCheckReport& report, Rng& rng, double h) {
    ModelConfig cfg;
    cfg.plan = chain_plan(4, {{4, 1}, {8, 1}});
    cfg.layers = 2;
    cfg.reduction = 2;
    cfg.num_classes = 3;
    cfg.joint_preset = "chain5";
    cfg.joints = 5;
    cfg.input_channels = 4;
    cfg.dropout = 0.5;
    cfg.init_seed = 99;
    const SkeletonGraph graph = preset_graph("chain5");
    MeGcnModel model(cfg, graph);

    const Tensor batch = random_tensor({2, 2, 4, 8, 5}, rng);
    const std::vector<int> labels = {1, 2};

    auto make_loss = [&](Tape& t) {
        Rng forward_rng(4242);  // fixed dropout masks across evaluations
        return model.forward(t, batch, labels, true, forward_rng).loss;
    };
    check_inputs(report, "tiny_model", model.parameters(), make_loss, h);
}

}  // namespace

GradCheckReport run_gradient_suite(std::uint64_t seed, double fd_step) {
    GradCheckReport report;
    Rng rng(seed);
    check_elementwise_ops(report, rng, fd_step);
    check_structural_ops(report, rng, fd_step);
    check_linear_ops(report, rng, fd_step);
    check_graph_ops(report, rng, fd_step);
    check_norm_loss_ops(report, rng, fd_step);
    check_layer(report, rng, fd_step);
    check_model(report, rng, fd_step);
    return report;
}

}  // namespace megc
