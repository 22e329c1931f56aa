#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "megc/config.hpp"
#include "megc/csv.hpp"
#include "megc/optimizer.hpp"
#include "megc/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace megc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    fs::path dir = fs::temp_directory_path() / ("megc_mt_" + std::to_string(::getpid()) + "_" +
                                                std::to_string(counter++));
    fs::create_directories(dir);
    return dir;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.model.plan = chain_plan(3, {{4, 1}, {8, 2}});
    cfg.model.layers = 2;
    cfg.model.reduction = 2;
    cfg.model.num_classes = 4;
    cfg.model.joint_preset = "chain5";
    cfg.model.joints = 5;
    cfg.model.input_channels = 3;
    cfg.model.dropout = 0.5;
    cfg.model.init_seed = 3;
    cfg.schedule.base_lr = 0.02;
    cfg.schedule.warmup_epochs = 1;
    cfg.schedule.milestones = {4};
    cfg.schedule.total_epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 7;
    cfg.frames = 0;
    cfg.center = false;
    return cfg;
}

PreparedDataset synth_prepared(int per_class, int t0, std::uint64_t seed_base) {
    PreparedDataset data;
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < per_class; ++i) {
            const SkeletonSequence s =
                synth_generate(seed_base + static_cast<std::uint64_t>(c * 100 + i), c, t0, 5);
            data.samples.push_back(s.data);
            data.labels.push_back(c);
        }
    }
    return data;
}

Tensor random_batch(int b, int c0, int t, int n, std::uint64_t seed) {
    Rng rng(seed);
    Tensor x({b, 2, c0, t, n});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    return x;
}

}  // namespace

TEST_CASE("config text round trip") {
    TrainConfig cfg = tiny_config();
    cfg.model.mutual_mte = {true, false};
    cfg.model.variant = Variant::late_fusion;
    const std::string text = serialize_train_config(cfg);
    const TrainConfig back = parse_train_config(text);
    CHECK(serialize_train_config(back) == text);
    CHECK(back.model.plan.size() == 2);
    CHECK(back.model.plan[1].stride == 2);
    CHECK(back.model.mutual_mte == std::vector<bool>{true, false});
    CHECK(back.model.variant == Variant::late_fusion);
    CHECK(back.schedule.milestones == std::vector<int>{4});
}

TEST_CASE("config parser reports unknown keys with line numbers") {
    try {
        parse_train_config("num_classes = 4\nnum_clases = 4\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line_number == 2);
        CHECK(std::string(e.what()).find("num_clases") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_train_config("batch_size == 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("batch_size = 3\nbatch_size = 4\n"), ConfigError);
}

TEST_CASE("config overrides") {
    TrainConfig cfg = tiny_config();
    apply_override(cfg, "batch_size=16");
    CHECK(cfg.batch_size == 16);
    apply_override(cfg, "channels=4,4,8s2");
    CHECK(cfg.model.plan.size() == 3);
    CHECK_THROWS_AS(apply_override(cfg, "nope=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(cfg, "banana"), ConfigError);
}

TEST_CASE("model config validation") {
    TrainConfig cfg = tiny_config();
    cfg.model.plan[1].c_in = 6;  // breaks the chain
    CHECK_THROWS_WITH_AS(validate_model_config(cfg.model), doctest::Contains("chain"),
                         std::invalid_argument);

    TrainConfig bad = tiny_config();
    bad.model.reduction = 3;
    bad.model.plan = chain_plan(3, {{4, 1}});  // 4 % 3 != 0 and 4 > 3
    bad.model.layers = 1;
    CHECK_THROWS_AS(validate_model_config(bad.model), std::invalid_argument);
}

TEST_CASE("published defaults") {
    const OptimizerConfig opt;
    CHECK(opt.momentum == 0.9);
    CHECK(opt.weight_decay == 0.0004);
    CHECK(opt.nesterov);

    const Schedule sched;
    CHECK(sched.base_lr == 0.01);
    CHECK(sched.warmup_epochs == 5);
    CHECK(sched.milestones == std::vector<int>{35, 55});
    CHECK(sched.total_epochs == 65);

    const ModelConfig model = default_model_config(11, "ntu25");
    CHECK(model.layers == 10);
    CHECK(model.reduction == 8);
    CHECK(model.dropout == 0.5);
    CHECK(model.plan.front().c_in == 3);
    CHECK(model.plan.front().c_out == 64);
    CHECK(model.plan[4].stride == 2);   // 64 -> 128
    CHECK(model.plan[7].stride == 2);   // 128 -> 256
    CHECK(model.plan.back().c_out == 256);
    validate_model_config(model);
}

TEST_CASE("learning rate is nonincreasing after warmup") {
    Schedule s;
    s.base_lr = 0.04;
    s.warmup_epochs = 3;
    s.milestones = {10, 20, 40};
    s.total_epochs = 50;
    for (int e = s.warmup_epochs; e + 1 < s.total_epochs; ++e) {
        CHECK(lr_at_epoch(e + 1, s) <= lr_at_epoch(e, s));
    }
}

TEST_CASE("learning rate schedule matches the published settings") {
    const Schedule s;  // base 0.01, warmup 5, milestones {35,55}, decay 0.1, 65 epochs
    CHECK(lr_at_epoch(2, s) == doctest::Approx(0.006).epsilon(1e-12));
    CHECK(lr_at_epoch(10, s) == 0.01);
    CHECK(lr_at_epoch(34, s) == 0.01);
    CHECK(lr_at_epoch(35, s) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(lr_at_epoch(40, s) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(lr_at_epoch(54, s) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(lr_at_epoch(55, s) == doctest::Approx(0.0001).epsilon(1e-12));
    CHECK(lr_at_epoch(60, s) == doctest::Approx(0.0001).epsilon(1e-12));
    CHECK(lr_at_epoch(64, s) == doctest::Approx(0.0001).epsilon(1e-12));
    CHECK_THROWS_AS(lr_at_epoch(65, s), std::invalid_argument);
    CHECK_THROWS_AS(lr_at_epoch(-1, s), std::invalid_argument);
}

TEST_CASE("sgd steps") {
    SUBCASE("zero gradient with zero velocity leaves parameters alone") {
        Param p("p", Tensor({2}, {1.0, -2.0}));
        SgdOptimizer opt({&p}, OptimizerConfig{0.9, 0.0, true});
        opt.step(0.1);
        CHECK(p.value[0] == 1.0);
        CHECK(p.value[1] == -2.0);
    }
    SUBCASE("vanilla step without momentum or decay") {
        Param p("p", Tensor({1}, {2.0}));
        p.grad[0] = 0.5;
        SgdOptimizer opt({&p}, OptimizerConfig{0.0, 0.0, false});
        opt.step(0.1);
        CHECK(p.value[0] == doctest::Approx(2.0 - 0.1 * 0.5).epsilon(1e-15));
    }
    SUBCASE("two nesterov steps follow the velocity recursion") {
        // v1 = g, d1 = g + mu v1 = 1.9 g; v2 = mu v1 + g = 1.9 g,
        // d2 = g + mu v2 = 2.71 g
        Param p("p", Tensor({1}, {0.0}));
        SgdOptimizer opt({&p}, OptimizerConfig{0.9, 0.0, true});
        const double g = 2.0, lr = 0.1;
        p.grad[0] = g;
        opt.step(lr);
        CHECK(p.value[0] == doctest::Approx(-lr * 1.9 * g).epsilon(1e-14));
        p.zero_grad();
        p.grad[0] = g;
        opt.step(lr);
        CHECK(p.value[0] == doctest::Approx(-lr * (1.9 + 2.71) * g).epsilon(1e-14));
    }
    SUBCASE("decay-exempt parameters skip weight decay") {
        Param a("a", Tensor({1}, {1.0}), false);
        Param b("b", Tensor({1}, {1.0}), true);
        SgdOptimizer opt({&a, &b}, OptimizerConfig{0.0, 0.1, false});
        opt.step(1.0);
        CHECK(a.value[0] == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(b.value[0] == 1.0);
    }
}

TEST_CASE("all five variants produce finite logits") {
    TrainConfig cfg = tiny_config();
    const SkeletonGraph graph = preset_graph("chain5");
    const Tensor batch = random_batch(3, 3, 8, 5, 21);
    for (Variant v : {Variant::me_gcn, Variant::baseline, Variant::baseline_tc,
                      Variant::early_fusion, Variant::late_fusion}) {
        auto model = build_variant(v, cfg.model, graph);
        // prime normalization stats, then eval
        Tape tape;
        Rng rng(1);
        model->forward_logits(tape, batch, true, rng);
        const Tensor logits = model->predict(batch);
        CHECK(logits.shape() == std::vector<int>{3, 4});
        CHECK(logits.all_finite());
        if (v == Variant::early_fusion) {
            CHECK(model->effective_input_channels() == 6);
            CHECK(model->entity_streams() == 1);
            CHECK(model->config().plan.front().c_in == 6);
        }
    }
}

TEST_CASE("beta-frozen me_gcn matches late_fusion with identical weights") {
    TrainConfig cfg = tiny_config();
    cfg.model.dropout = 0.0;
    const SkeletonGraph graph = preset_graph("chain5");
    auto full = build_variant(Variant::me_gcn, cfg.model, graph);
    auto late = build_variant(Variant::late_fusion, cfg.model, graph);

    // randomize the mutual model, then copy by name into the late model
    Rng rng(5);
    for (auto& [name, tensor] : full->state_tensors()) {
        for (std::int64_t i = 0; i < tensor->size(); ++i) (*tensor)[i] = rng.uniform(-0.5, 0.5);
        if (name.find(".beta") != std::string::npos && name.find("input_norm") == std::string::npos) {
            tensor->set_zero();  // frozen betas
        }
    }
    auto late_state = late->state_tensors();
    auto full_state = full->state_tensors();
    REQUIRE(late_state.size() == full_state.size());
    for (size_t i = 0; i < late_state.size(); ++i) {
        REQUIRE(late_state[i].first == full_state[i].first);
        *late_state[i].second = *full_state[i].second;
    }

    const Tensor warm = random_batch(4, 3, 8, 5, 31);
    {
        Tape ta, tb;
        Rng ra(1), rb(1);
        full->forward_logits(ta, warm, true, ra);
        late->forward_logits(tb, warm, true, rb);
    }
    for (int trial = 0; trial < 3; ++trial) {
        const Tensor batch = random_batch(2, 3, 8, 5, 100 + static_cast<std::uint64_t>(trial));
        const Tensor a = full->predict(batch);
        const Tensor b = late->predict(batch);
        CHECK(a.max_abs_diff(b) <= 1e-12);
    }
}

TEST_CASE("inference head is linear in the entity sum") {
    // identical entity features: head(2x) == head over the stacked pair
    Rng rng(6);
    Tensor one({3, 4, 5});
    for (std::int64_t i = 0; i < one.size(); ++i) one[i] = rng.uniform(-1.0, 1.0);
    Param fc_w("w", Tensor({2, 3}, {0.5, -1.0, 0.25, 0.1, 0.2, -0.7}));
    Param fc_b("b", Tensor({2}, {0.05, -0.2}));

    Tape tape;
    Value x = tape.constant(one);
    Value paired = stack_first({x, x});
    Value head = affine(global_mean_time_joints(sum_first(paired)), tape.leaf(fc_w),
                        tape.leaf(fc_b));
    Value doubled = affine(global_mean_time_joints(scale(x, 2.0)), tape.leaf(fc_w),
                           tape.leaf(fc_b));
    CHECK(tape.val(head).max_abs_diff(tape.val(doubled)) <= 1e-14);
}

TEST_CASE("inference head matches manual pooling and matrix multiply") {
    Rng rng(61);
    const int e = 2, c = 3, t = 4, n = 2, k = 2;
    Tensor x({e, c, t, n});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    Param fc_w("w", Tensor({k, c}));
    Param fc_b("b", Tensor({k}, {0.1, -0.3}));
    for (std::int64_t i = 0; i < fc_w.value.size(); ++i) fc_w.value[i] = rng.uniform(-1.0, 1.0);

    Tape tape;
    Value logits = affine(global_mean_time_joints(sum_first(tape.constant(x))), tape.leaf(fc_w),
                          tape.leaf(fc_b));

    for (int ki = 0; ki < k; ++ki) {
        double expect = fc_b.value[ki];
        for (int ci = 0; ci < c; ++ci) {
            double pooled = 0.0;
            for (int ei = 0; ei < e; ++ei)
                for (int ti = 0; ti < t; ++ti)
                    for (int ni = 0; ni < n; ++ni) pooled += x.at({ei, ci, ti, ni});
            pooled /= t * n;  // entity sum first, then mean over frames and joints
            expect += fc_w.value.at({ki, ci}) * pooled;
        }
        CHECK(tape.val(logits)[ki] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("zero features with zero fc bias give zero logits") {
    Tape tape;
    Param fc_w("w", Tensor({3, 2}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0}));
    Param fc_b("b", Tensor({3}));
    Value logits = affine(global_mean_time_joints(tape.constant(Tensor({2, 4, 5}))),
                          tape.leaf(fc_w), tape.leaf(fc_b));
    CHECK(tape.val(logits).max_abs() == 0.0);
}

TEST_CASE("training is deterministic and writes round-trippable metrics") {
    const TrainConfig cfg = tiny_config();
    const SkeletonGraph graph = preset_graph("chain5");
    const PreparedDataset train_data = synth_prepared(3, 8, 500);
    const PreparedDataset val_data = synth_prepared(2, 8, 900);

    auto run = [&]() {
        auto model = build_variant(Variant::me_gcn, cfg.model, graph);
        return train(*model, cfg, train_data, val_data);
    };
    const TrainResult a = run();
    const TrainResult b = run();
    REQUIRE(a.history.size() == b.history.size());
    const std::string csv_a = csv_to_string(metrics_csv(a.history));
    const std::string csv_b = csv_to_string(metrics_csv(b.history));
    CHECK(csv_a == csv_b);
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
    }

    // csv parse -> re-emit is byte identical
    CHECK(csv_to_string(csv_from_string(csv_a)) == csv_a);
    // header + one row per epoch
    CHECK(csv_from_string(csv_a).size() == a.history.size() + 1);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
    TrainConfig cfg = tiny_config();
    cfg.schedule.base_lr = 0.0;
    cfg.schedule.warmup_epochs = 0;
    cfg.schedule.total_epochs = 1;
    const SkeletonGraph graph = preset_graph("chain5");
    auto model = build_variant(Variant::me_gcn, cfg.model, graph);

    std::vector<Tensor> before;
    for (auto& [name, tensor] : model->state_tensors()) {
        if (name.find("running") == std::string::npos) before.push_back(*tensor);
    }
    const PreparedDataset data = synth_prepared(2, 8, 77);
    train(*model, cfg, data, data);
    size_t i = 0;
    for (auto& [name, tensor] : model->state_tensors()) {
        if (name.find("running") != std::string::npos) continue;
        CHECK(tensor->max_abs_diff(before[i]) == 0.0);
        ++i;
    }
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    TrainConfig cfg = tiny_config();
    const SkeletonGraph graph = preset_graph("chain5");
    auto model = build_variant(Variant::me_gcn, cfg.model, graph);
    PreparedDataset data = synth_prepared(2, 8, 40);
    data.samples[3][7] = std::numeric_limits<double>::quiet_NaN();  // corrupt sample
    try {
        train(*model, cfg, data, data);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("evaluate produces a consistent confusion matrix") {
    TrainConfig cfg = tiny_config();
    const SkeletonGraph graph = preset_graph("chain5");
    auto model = build_variant(Variant::me_gcn, cfg.model, graph);
    const PreparedDataset train_data = synth_prepared(2, 8, 11);
    train(*model, cfg, train_data, train_data);

    const PreparedDataset data = synth_prepared(3, 8, 1234);
    const EvalResult eval = evaluate(*model, data, cfg.batch_size);
    long long diag = 0, total = 0;
    for (int c = 0; c < 4; ++c) {
        long long row = 0;
        for (int p = 0; p < 4; ++p) {
            row += eval.confusion[static_cast<size_t>(c)][static_cast<size_t>(p)];
            total += eval.confusion[static_cast<size_t>(c)][static_cast<size_t>(p)];
        }
        CHECK(row == 3);  // per-class sample counts
        diag += eval.confusion[static_cast<size_t>(c)][static_cast<size_t>(c)];
    }
    CHECK(eval.accuracy == doctest::Approx(static_cast<double>(diag) / total).epsilon(1e-12));

    const auto rows = confusion_csv(eval);
    CHECK(rows.size() == 4);
    CHECK(rows[0].size() == 4);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    const fs::path dir = temp_dir();
    TrainConfig cfg = tiny_config();
    cfg.schedule.total_epochs = 2;
    const SkeletonGraph graph = preset_graph("chain5");
    auto model = build_variant(Variant::me_gcn, cfg.model, graph);
    const PreparedDataset data = synth_prepared(2, 8, 300);
    train(*model, cfg, data, data);

    const Tensor probe = random_batch(2, 3, 8, 5, 4321);
    const Tensor before = model->predict(probe);

    save_checkpoint(*model, cfg, dir / "m.ckpt");
    Checkpoint loaded = load_checkpoint(dir / "m.ckpt");
    const Tensor after = loaded.model->predict(probe);
    CHECK(before.max_abs_diff(after) == 0.0);

    save_checkpoint(*loaded.model, loaded.config, dir / "m2.ckpt");
    std::ifstream f1(dir / "m.ckpt", std::ios::binary);
    std::ifstream f2(dir / "m2.ckpt", std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(b1.substr(0, 8) == "MEGCCKPT");

    SUBCASE("corrupt magic is rejected") {
        std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
        bad << "NOTMAGIC" << b1.substr(8);
        bad.close();
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), IoError);
    }
    SUBCASE("truncated checkpoint is rejected") {
        std::ofstream bad(dir / "short.ckpt", std::ios::binary);
        bad.write(b1.data(), static_cast<std::streamsize>(b1.size() / 2));
        bad.close();
        CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), IoError);
    }
    fs::remove_all(dir);
}

TEST_CASE("activation scores normalize per joint") {
    SUBCASE("uniform adjacency spreads evenly") {
        const Tensor score = adjacency_activation(Tensor::full({3, 4, 4}, 0.2));
        for (int j = 0; j < 4; ++j) CHECK(score[j] == doctest::Approx(0.25).epsilon(1e-12));
    }
    SUBCASE("mass concentrated in one column lands on that joint") {
        Tensor adj({2, 4, 4});
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 4; ++i) adj.at({c, i, 2}) = -1.5;  // absolute value counts
        const Tensor score = adjacency_activation(adj);
        CHECK(score[2] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(score[0] == 0.0);
    }
    SUBCASE("trained-model scores are normalized rows of length N") {
        TrainConfig cfg = tiny_config();
        const SkeletonGraph graph = preset_graph("chain5");
        auto model = build_variant(Variant::me_gcn, cfg.model, graph);
        const PreparedDataset data = synth_prepared(2, 8, 64);
        train(*model, cfg, data, data);

        const ActivationScores scores = activation_scores(*model, data.samples[0]);
        REQUIRE(scores.pre_ffb.size() == 2);
        REQUIRE(scores.post_ffb.size() == 2);
        for (const auto& bank : {scores.pre_ffb, scores.post_ffb}) {
            for (const Tensor& row : bank) {
                CHECK(row.size() == 5);
                double sum = 0.0;
                for (std::int64_t j = 0; j < row.size(); ++j) sum += row[j];
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
}
