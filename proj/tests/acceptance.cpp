// Acceptance suite: runs every release criterion at its pinned tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.
//
// argv[1] (optional): path to the megc binary, used to drive the gradcheck
// command the way an operator would. Falls back to the library suite.

#include "megc/config.hpp"
#include "megc/csv.hpp"
#include "megc/gradcheck.hpp"
#include "megc/graph.hpp"
#include "megc/layers.hpp"
#include "megc/model.hpp"
#include "megc/ops.hpp"
#include "megc/rng.hpp"
#include "megc/skeleton.hpp"
#include "megc/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace megc;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string name;
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, double radius = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-radius, radius);
    return t;
}

// ---------------------------------------------------------------- gradients

Criterion gradient_suite(const std::string& binary) {
    const auto t0 = std::chrono::steady_clock::now();
    Criterion c{"gradient-suite", false, ""};
    double worst = -1.0;
    std::string worst_group;
    bool ok = false;

    if (!binary.empty()) {
        const std::string cmd = binary + " gradcheck --scale tiny --tolerance 1e-4 2>&1";
        FILE* pipe = popen(cmd.c_str(), "r");
        std::string output;
        if (pipe) {
            char buf[4096];
            size_t n;
            while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) output.append(buf, n);
            ok = pclose(pipe) == 0;
        }
        const size_t at = output.find("worst ");
        if (at != std::string::npos) {
            std::istringstream is(output.substr(at + 6));
            is >> worst;
            std::string in;
            is >> in >> worst_group;
            while (!worst_group.empty() && worst_group.back() == ')') worst_group.pop_back();
        }
    } else {
        const GradCheckReport report = run_gradient_suite(1);
        ok = report.passed(1e-4);
        worst = report.worst();
        worst_group = report.worst_entry()->group;
    }

    const double elapsed = seconds_since(t0);
    c.pass = ok && elapsed < 120.0;
    std::ostringstream os;
    os << "max rel err " << worst << " (" << worst_group << "), " << elapsed << "s (< 120s)";
    c.detail = os.str();
    return c;
}

// ----------------------------------------------------------- contraction

Criterion contraction_oracle() {
    Criterion c{"contraction-oracle", false, ""};
    Rng rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int e = 1 + static_cast<int>(rng.below(5));
        const int ch = 1 + static_cast<int>(rng.below(5));
        const int tt = 1 + static_cast<int>(rng.below(5));
        const int n = 1 + static_cast<int>(rng.below(5));
        const Tensor f = random_tensor({e, ch, tt, n}, rng);
        const Tensor a = random_tensor({e, ch, n, n}, rng);

        Tape tape;
        const Tensor& got = tape.val(contract_graph(tape.constant(f), tape.constant(a)));
        for (int ei = 0; ei < e; ++ei)
            for (int ci = 0; ci < ch; ++ci)
                for (int ti = 0; ti < tt; ++ti)
                    for (int j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (int d = 0; d < n; ++d) {
                            s += f.at({ei, ci, ti, d}) * a.at({ei, ci, d, j});
                        }
                        worst = std::max(worst, std::abs(got.at({ei, ci, ti, j}) - s));
                    }
    }
    c.pass = worst <= 1e-12;
    c.detail = "max |einsum - loop| = " + format_double(worst) + " over 100 shapes (<= 1e-12)";
    return c;
}

// -------------------------------------------------------------- beta collapse

ModelConfig collapse_config() {
    ModelConfig cfg;
    cfg.plan = chain_plan(3, {{4, 1}, {8, 2}});
    cfg.layers = 2;
    cfg.reduction = 2;
    cfg.num_classes = 4;
    cfg.joint_preset = "chain5";
    cfg.joints = 5;
    cfg.input_channels = 3;
    cfg.dropout = 0.0;
    cfg.init_seed = 17;
    return cfg;
}

Criterion beta_collapse() {
    Criterion c{"beta-collapse", false, ""};
    const SkeletonGraph graph = preset_graph("chain5");
    const ModelConfig cfg = collapse_config();
    auto full = build_variant(Variant::me_gcn, cfg, graph);
    auto late = build_variant(Variant::late_fusion, cfg, graph);

    // arbitrary weights, betas frozen at zero, copied by name
    Rng wrng(23);
    for (auto& [name, tensor] : full->state_tensors()) {
        for (std::int64_t i = 0; i < tensor->size(); ++i) (*tensor)[i] = wrng.uniform(-0.6, 0.6);
        if (name.find(".beta") != std::string::npos && name.find("input_norm") == std::string::npos) {
            tensor->set_zero();
        }
        if (name.find("running_var") != std::string::npos) {
            for (std::int64_t i = 0; i < tensor->size(); ++i) (*tensor)[i] = 1.0;
        }
    }
    auto full_state = full->state_tensors();
    auto late_state = late->state_tensors();
    for (size_t i = 0; i < late_state.size(); ++i) *late_state[i].second = *full_state[i].second;

    Rng brng(29);
    const Tensor warm = random_tensor({4, 2, 3, 8, 5}, brng);
    {
        Tape ta, tb;
        Rng ra(1), rb(1);
        full->forward_logits(ta, warm, true, ra);
        late->forward_logits(tb, warm, true, rb);
    }
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor batch = random_tensor({2, 2, 3, 8, 5}, brng);
        worst = std::max(worst, full->predict(batch).max_abs_diff(late->predict(batch)));
    }
    c.pass = worst <= 1e-12;
    c.detail = "max |me_gcn(beta=0) - late_fusion| = " + format_double(worst) +
               " over 20 batches (<= 1e-12)";
    return c;
}

// ------------------------------------------------------------- tanh range

Criterion tanh_range() {
    Criterion c{"tanh-range", false, ""};
    const SkeletonGraph graph = preset_graph("chain5");
    ModelConfig cfg = collapse_config();
    cfg.init_seed = 31;
    auto model = build_variant(Variant::me_gcn, cfg, graph);

    Rng rng(37);
    double lo = 0.0, hi = 0.0;
    bool in_range = true;
    for (int trial = 0; trial < 100; ++trial) {
        const Tensor batch = random_tensor({1, 2, 3, 8, 5}, rng, 1.0 + 4.0 * rng.uniform());
        Tape tape;
        Rng fwd(1);
        std::vector<MteTrace> traces;
        model->forward_logits(tape, batch, true, fwd, &traces);
        for (const MteTrace& trace : traces) {
            std::vector<const Tensor*> maps;
            for (const Tensor& t : trace.v_intra) maps.push_back(&t);
            if (trace.v_inter.size() > 0) maps.push_back(&trace.v_inter);
            for (const Tensor* m : maps) {
                for (std::int64_t i = 0; i < m->size(); ++i) {
                    lo = std::min(lo, (*m)[i]);
                    hi = std::max(hi, (*m)[i]);
                    in_range = in_range && (*m)[i] >= -1.0 && (*m)[i] <= 1.0;
                }
            }
        }
    }
    c.pass = in_range;
    c.detail = "correlation map entries in [" + format_double(lo) + ", " + format_double(hi) +
               "] over 100 forwards";
    return c;
}

// --------------------------------------------------------- causal experiment

TrainConfig causal_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.model.plan = chain_plan(3, {{8, 1}, {8, 1}, {16, 2}, {16, 1}});
    cfg.model.layers = 4;
    cfg.model.reduction = 2;
    cfg.model.num_classes = 4;
    cfg.model.joint_preset = "chain5";
    cfg.model.joints = 5;
    cfg.model.input_channels = 3;
    cfg.model.dropout = 0.25;
    cfg.model.init_seed = seed;
    cfg.schedule.base_lr = 0.005;
    cfg.schedule.warmup_epochs = 5;
    cfg.schedule.milestones = {97, 130};
    cfg.schedule.decay = 0.1;
    cfg.schedule.total_epochs = 150;
    cfg.opt.weight_decay = 0.0004;
    cfg.batch_size = 8;
    cfg.seed = seed;
    cfg.frames = 0;
    cfg.center = false;
    return cfg;
}

PreparedDataset causal_dataset(std::uint64_t seed_base, int per_class, int t0, int joints) {
    PreparedDataset data;
    for (int cls = 0; cls < 4; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            const std::uint64_t seed = seed_base * 0x9e3779b97f4a7c15ULL +
                                       static_cast<std::uint64_t>(cls) * 0x100000001b3ULL +
                                       static_cast<std::uint64_t>(i) + 1;
            const SkeletonSequence s = synth_generate(seed, cls, t0, joints);
            data.samples.push_back(s.data);
            data.labels.push_back(cls);
        }
    }
    return data;
}

struct CausalRun {
    double best_val = 0.0;
    double final_val = 0.0;
    double final_pair_acc = 0.0;  // accuracy restricted to true classes {0,1}
    double best_train_100 = 0.0;  // best train accuracy in the first 100 epochs
};

CausalRun run_causal(Variant variant, std::uint64_t seed, const PreparedDataset& train_data,
                     const PreparedDataset& val_data) {
    TrainConfig cfg = causal_config(seed);
    const SkeletonGraph graph = preset_graph(cfg.model.joint_preset);
    auto model = build_variant(variant, cfg.model, graph);
    const TrainResult result = train(*model, cfg, train_data, val_data);

    CausalRun out;
    out.best_val = result.best_val_acc;
    out.final_val = result.history.back().val_acc;
    for (size_t e = 0; e < result.history.size() && e < 100; ++e) {
        out.best_train_100 = std::max(out.best_train_100, result.history[e].train_acc);
    }
    const EvalResult eval = evaluate(*model, val_data, cfg.batch_size);
    long long pair_correct = 0, pair_total = 0;
    for (int truth : {0, 1}) {
        for (int pred = 0; pred < 4; ++pred) {
            pair_total += eval.confusion[static_cast<size_t>(truth)][static_cast<size_t>(pred)];
        }
        pair_correct += eval.confusion[static_cast<size_t>(truth)][static_cast<size_t>(truth)];
    }
    out.final_pair_acc = static_cast<double>(pair_correct) / static_cast<double>(pair_total);
    return out;
}

void causal_criteria(std::vector<Criterion>& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const int per_class = 16, t_frames = 24, joints = 5;

    bool mutual_ok = true, split_ok = true, gap_ok = true;
    double overfit_best = 0.0;
    std::ostringstream mutual_detail, split_detail, gap_detail;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        const PreparedDataset train_data = causal_dataset(seed, per_class, t_frames, joints);
        const PreparedDataset val_data = causal_dataset(seed + 100, per_class, t_frames, joints);
        const CausalRun mutual = run_causal(Variant::me_gcn, seed, train_data, val_data);
        const CausalRun split = run_causal(Variant::late_fusion, seed, train_data, val_data);

        mutual_ok = mutual_ok && mutual.best_val >= 0.90;
        split_ok = split_ok && split.final_pair_acc <= 0.65;
        gap_ok = gap_ok && mutual.best_val > split.best_val;
        if (seed == 1) overfit_best = mutual.best_train_100;

        mutual_detail << " s" << seed << "=" << mutual.best_val;
        split_detail << " s" << seed << "=" << split.final_pair_acc;
        gap_detail << " s" << seed << "=(" << mutual.best_val << ">" << split.best_val << ")";
    }
    const double elapsed = seconds_since(t0);
    const bool in_time = elapsed < 900.0;

    {
        Criterion c{"mutual-causal-test", mutual_ok && split_ok && gap_ok && in_time, ""};
        std::ostringstream os;
        os << "me_gcn best val" << mutual_detail.str() << " (>= 0.90); late_fusion pair acc"
           << split_detail.str() << " (<= 0.65); gap" << gap_detail.str() << "; " << elapsed
           << "s (< 900s)";
        c.detail = os.str();
        out.push_back(c);
    }
    {
        Criterion c{"overfit-sanity", overfit_best >= 0.95, ""};
        std::ostringstream os;
        os << "me_gcn train acc within 100 epochs = " << overfit_best << " (>= 0.95)";
        c.detail = os.str();
        out.push_back(c);
    }
}

// ------------------------------------------------------------- schedule

Criterion schedule_conformance() {
    Criterion c{"schedule-conformance", false, ""};
    const Schedule s;
    const int epochs[5] = {10, 34, 40, 54, 60};
    const double expect[5] = {0.01, 0.01, 0.001, 0.001, 0.0001};
    bool ok = true;
    std::ostringstream os;
    for (int i = 0; i < 5; ++i) {
        const double lr = lr_at_epoch(epochs[i], s);
        ok = ok && lr == expect[i];
        os << (i ? ", " : "") << "e" << epochs[i] << "=" << format_double(lr);
    }
    c.pass = ok;
    c.detail = os.str();
    return c;
}

// ------------------------------------------------------------ determinism

Criterion determinism() {
    Criterion c{"determinism", false, ""};
    TrainConfig cfg = causal_config(5);
    cfg.schedule.total_epochs = 3;
    cfg.schedule.milestones = {};
    const SkeletonGraph graph = preset_graph(cfg.model.joint_preset);
    const PreparedDataset train_data = causal_dataset(7, 4, 16, 5);
    const PreparedDataset val_data = causal_dataset(8, 2, 16, 5);

    const fs::path dir =
        fs::temp_directory_path() / ("megc_accept_" + std::to_string(::getpid()));
    fs::create_directories(dir);

    auto run_once = [&](const fs::path& out) {
        auto model = build_variant(Variant::me_gcn, cfg.model, graph);
        train(*model, cfg, train_data, val_data, out);
        return std::move(model);
    };
    auto m1 = run_once(dir / "r1");
    auto m2 = run_once(dir / "r2");

    std::ifstream f1(dir / "r1" / "metrics.csv", std::ios::binary);
    std::ifstream f2(dir / "r2" / "metrics.csv", std::ios::binary);
    const std::string csv1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string csv2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    const bool csv_identical = !csv1.empty() && csv1 == csv2;

    // checkpoint round trip: load, re-save, compare bytes; forward bit-exact
    Checkpoint loaded = load_checkpoint(dir / "r1" / "last.ckpt");
    save_checkpoint(*loaded.model, loaded.config, dir / "resaved.ckpt");
    std::ifstream c1(dir / "r1" / "last.ckpt", std::ios::binary);
    std::ifstream c2(dir / "resaved.ckpt", std::ios::binary);
    const std::string ck1((std::istreambuf_iterator<char>(c1)), std::istreambuf_iterator<char>());
    const std::string ck2((std::istreambuf_iterator<char>(c2)), std::istreambuf_iterator<char>());
    const bool ckpt_identical = !ck1.empty() && ck1 == ck2;

    Rng prng(55);
    const Tensor probe = random_tensor({2, 2, 3, 16, 5}, prng);
    const bool forward_identical =
        m1->predict(probe).max_abs_diff(loaded.model->predict(probe)) == 0.0;

    fs::remove_all(dir);
    c.pass = csv_identical && ckpt_identical && forward_identical;
    c.detail = std::string("metrics CSVs ") + (csv_identical ? "identical" : "DIFFER") +
               "; checkpoint bytes " + (ckpt_identical ? "identical" : "DIFFER") +
               "; reloaded forward " + (forward_identical ? "bit-exact" : "DIFFERS");
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string binary = argc > 1 ? argv[1] : "";
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<Criterion> criteria;
    criteria.push_back(gradient_suite(binary));
    criteria.push_back(contraction_oracle());
    criteria.push_back(beta_collapse());
    criteria.push_back(tanh_range());
    causal_criteria(criteria);
    criteria.push_back(schedule_conformance());
    criteria.push_back(determinism());

    int failures = 0;
    for (const Criterion& c : criteria) {
        std::printf("[%s] %-22s %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                    c.detail.c_str());
        if (!c.pass) ++failures;
    }
    std::printf("%d/%zu acceptance criteria passed in %.1fs\n",
                static_cast<int>(criteria.size()) - failures, criteria.size(),
                seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
