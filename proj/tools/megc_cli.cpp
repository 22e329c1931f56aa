// megc: train, evaluate and inspect mutual-excitation GCNs on two-entity
// skeleton data, generate the synthetic relative-motion dataset, and run
// the gradient verification suite.
//
// Exit codes: 0 success, 1 verification failure, 2 numeric abort,
// 64 usage/input error.

#include "megc/config.hpp"
#include "megc/csv.hpp"
#include "megc/gradcheck.hpp"
#include "megc/graph.hpp"
#include "megc/model.hpp"
#include "megc/skeleton.hpp"
#include "megc/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerification = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitUsage = 64;

struct SynthArgs {
    std::string out;
    int classes = 4;
    int per_class = 16;
    int frames = 24;
    int joints = 5;
    std::uint64_t seed = 1;
};

int run_synth(const SynthArgs& a) {
    std::filesystem::create_directories(a.out);
    megc::DatasetManifest manifest;
    const auto& names = megc::synth_class_names();
    manifest.class_names.assign(names.begin(), names.begin() + a.classes);
    manifest.preset = "chain" + std::to_string(a.joints);
    manifest.channels = 3;
    manifest.joints = a.joints;

    for (int c = 0; c < a.classes; ++c) {
        for (int i = 0; i < a.per_class; ++i) {
            // per-sample seed is a pure function of (seed, class, index)
            const std::uint64_t sample_seed =
                a.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(c) * 0x100000001b3ULL +
                static_cast<std::uint64_t>(i) + 1;
            const megc::SkeletonSequence s =
                megc::synth_generate(sample_seed, c, a.frames, a.joints);
            char name[64];
            std::snprintf(name, sizeof(name), "class%d_%04d.skl", c, i);
            megc::save_sequence(s, std::filesystem::path(a.out) / name);
            manifest.records.push_back(megc::ManifestRecord{name, c});
        }
    }
    megc::save_manifest(manifest, std::filesystem::path(a.out) / "manifest.txt");
    std::cout << "wrote " << a.classes * a.per_class << " samples + manifest to " << a.out << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string val_data;
    std::string variant = "me_gcn";
    std::string out;
    std::vector<std::string> overrides;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool quiet = false;
};

megc::TrainConfig resolve_config(megc::TrainConfig cfg, const megc::DatasetManifest& manifest) {
    if (cfg.model.joint_preset == "auto") cfg.model.joint_preset = manifest.preset;
    if (cfg.model.joints == 0) cfg.model.joints = manifest.joints;
    if (cfg.model.joints != manifest.joints) {
        throw megc::ConfigError("config joints " + std::to_string(cfg.model.joints) +
                                " disagree with manifest joints " +
                                std::to_string(manifest.joints));
    }
    if (cfg.model.input_channels != manifest.channels) {
        throw megc::ConfigError("config input_channels " +
                                std::to_string(cfg.model.input_channels) +
                                " disagree with manifest channels " +
                                std::to_string(manifest.channels) +
                                " (set input_channels before channels)");
    }
    if (cfg.model.num_classes != static_cast<int>(manifest.class_names.size())) {
        throw megc::ConfigError("config num_classes " + std::to_string(cfg.model.num_classes) +
                                " disagree with manifest class count " +
                                std::to_string(manifest.class_names.size()));
    }
    return cfg;
}

int run_train(const TrainArgs& a) {
    megc::TrainConfig cfg = megc::load_train_config(a.config);
    for (const std::string& o : a.overrides) megc::apply_override(cfg, o);
    if (a.seed_set) {
        cfg.seed = a.seed;
        cfg.model.init_seed = a.seed;
    }
    cfg.model.variant = megc::variant_from_string(a.variant);

    const megc::Dataset train_raw = megc::load_dataset(a.data);
    const megc::Dataset val_raw =
        a.val_data.empty() ? megc::load_dataset(a.data) : megc::load_dataset(a.val_data);
    cfg = resolve_config(std::move(cfg), train_raw.manifest);

    const megc::SkeletonGraph graph = megc::preset_graph(cfg.model.joint_preset);
    auto model = megc::build_variant(cfg.model.variant, cfg.model, graph);

    const megc::PreparedDataset train_data = megc::prepare_dataset(train_raw, cfg);
    const megc::PreparedDataset val_data = megc::prepare_dataset(val_raw, cfg);

    megc::EpochCallback progress;
    if (!a.quiet) {
        progress = [](const megc::EpochMetrics& m) {
            std::cout << "epoch " << m.epoch << " lr " << megc::format_double(m.lr) << " loss "
                      << megc::format_double(m.train_loss) << " train_acc "
                      << megc::format_double(m.train_acc) << " val_acc "
                      << megc::format_double(m.val_acc) << "\n";
        };
    }
    const megc::TrainResult result =
        megc::train(*model, cfg, train_data, val_data, a.out, progress);
    std::cout << "best val_acc " << megc::format_double(result.best_val_acc) << " at epoch "
              << result.best_epoch << "; outputs in " << a.out << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string confusion;
};

int run_eval(const EvalArgs& a) {
    megc::Checkpoint ckpt = megc::load_checkpoint(a.checkpoint);
    const megc::Dataset raw = megc::load_dataset(a.data);
    if (static_cast<int>(raw.manifest.class_names.size()) != ckpt.config.model.num_classes) {
        throw megc::ConfigError("checkpoint expects " +
                                std::to_string(ckpt.config.model.num_classes) +
                                " classes but manifest lists " +
                                std::to_string(raw.manifest.class_names.size()));
    }
    const megc::PreparedDataset data = megc::prepare_dataset(raw, ckpt.config);
    const megc::EvalResult result = megc::evaluate(*ckpt.model, data, ckpt.config.batch_size);
    std::cout << "accuracy " << megc::format_double(result.accuracy) << " on "
              << data.samples.size() << " samples\n";
    if (!a.confusion.empty()) {
        megc::write_csv(a.confusion, megc::confusion_csv(result));
        std::cout << "confusion matrix written to " << a.confusion << "\n";
    }
    return kExitOk;
}

struct GradcheckArgs {
    std::string scale = "tiny";
    double tolerance = 1e-4;
    std::uint64_t seed = 1;
};

int run_gradcheck(const GradcheckArgs& a) {
    const megc::GradCheckReport report = megc::run_gradient_suite(a.seed);
    for (const auto& e : report.entries) {
        std::printf("%-42s %.3e\n", e.group.c_str(), e.max_rel_error);
    }
    const auto* worst = report.worst_entry();
    if (report.passed(a.tolerance)) {
        std::printf("PASS: %zu gradient groups within %.1e (worst %.3e in %s)\n",
                    report.entries.size(), a.tolerance, worst->max_rel_error,
                    worst->group.c_str());
        return kExitOk;
    }
    std::printf("FAIL: worst group %s at %.3e exceeds tolerance %.1e\n", worst->group.c_str(),
                worst->max_rel_error, a.tolerance);
    return kExitVerification;
}

struct InspectArgs {
    std::string checkpoint;
    std::string sample;
    std::string scores;
};

int run_inspect(const InspectArgs& a) {
    megc::Checkpoint ckpt = megc::load_checkpoint(a.checkpoint);
    const megc::SkeletonSequence seq = megc::load_sequence(a.sample);
    const megc::Tensor prepared = megc::prepare_sample(seq, ckpt.config);
    const megc::ActivationScores scores = megc::activation_scores(*ckpt.model, prepared);

    // two rows per entity: pre-FFB then post-FFB, each summing to 1
    std::vector<megc::CsvRow> rows;
    for (size_t e = 0; e < scores.pre_ffb.size(); ++e) {
        for (const megc::Tensor* t : {&scores.pre_ffb[e], &scores.post_ffb[e]}) {
            megc::CsvRow row;
            for (std::int64_t j = 0; j < t->size(); ++j) {
                row.push_back(megc::format_double((*t)[j]));
            }
            rows.push_back(std::move(row));
        }
    }
    megc::write_csv(a.scores, rows);
    std::cout << "activation scores (" << rows.size() << " rows of " << scores.pre_ffb[0].size()
              << ") written to " << a.scores << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mutual-excitation graph convolutional network for two-entity "
                 "skeleton interaction recognition"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset");
    synth_cmd->add_option("--out", synth.out, "output directory")->required();
    synth_cmd->add_option("--classes", synth.classes, "class count (2..4)")
        ->check(CLI::Range(2, 4));
    synth_cmd->add_option("--per-class", synth.per_class, "samples per class")
        ->check(CLI::PositiveNumber);
    synth_cmd->add_option("--frames", synth.frames, "frames per sample")
        ->check(CLI::PositiveNumber);
    synth_cmd->add_option("--joints", synth.joints, "joints per entity (>= 4)")
        ->check(CLI::Range(4, 1024));
    synth_cmd->add_option("--seed", synth.seed, "generator seed");

    TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model variant");
    train_cmd->add_option("--config", train.config, "config file")->required();
    train_cmd->add_option("--data", train.data, "training data directory")->required();
    train_cmd->add_option("--val-data", train.val_data,
                          "validation data directory (defaults to --data)");
    train_cmd
        ->add_option("--variant", train.variant,
                     "me_gcn|baseline|baseline_tc|early_fusion|late_fusion")
        ->check(CLI::IsMember({"me_gcn", "baseline", "baseline_tc", "early_fusion",
                               "late_fusion"}));
    train_cmd->add_option("--out", train.out, "output directory")->required();
    train_cmd->add_option("--seed", train.seed, "seed override (init + training)")
        ->each([&train](const std::string&) { train.seed_set = true; });
    train_cmd->add_option("--set", train.overrides, "config override key=value (repeatable)");
    train_cmd->add_flag("--quiet", train.quiet, "suppress per-epoch progress");

    EvalArgs eval;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval.data, "data directory")->required();
    eval_cmd->add_option("--confusion", eval.confusion, "write confusion matrix CSV here");

    GradcheckArgs gradcheck;
    CLI::App* gc_cmd = app.add_subcommand("gradcheck", "verify gradients against finite differences");
    gc_cmd->add_option("--scale", gradcheck.scale, "check scale")->check(CLI::IsMember({"tiny"}));
    gc_cmd->add_option("--tolerance", gradcheck.tolerance, "max relative error")
        ->check(CLI::PositiveNumber);
    gc_cmd->add_option("--seed", gradcheck.seed, "suite seed");

    InspectArgs inspect;
    CLI::App* inspect_cmd = app.add_subcommand("inspect", "per-joint activation scores");
    inspect_cmd->add_option("--checkpoint", inspect.checkpoint, "checkpoint file")->required();
    inspect_cmd->add_option("--sample", inspect.sample, "MEGCSKL1 sample file")->required();
    inspect_cmd->add_option("--scores", inspect.scores, "output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth_cmd->parsed()) return run_synth(synth);
        if (train_cmd->parsed()) return run_train(train);
        if (eval_cmd->parsed()) return run_eval(eval);
        if (gc_cmd->parsed()) return run_gradcheck(gradcheck);
        if (inspect_cmd->parsed()) return run_inspect(inspect);
    } catch (const megc::NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const megc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const megc::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
