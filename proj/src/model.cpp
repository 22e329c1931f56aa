#include "megc/model.hpp"

#include <cmath>
#include <stdexcept>

namespace megc {

Variant variant_from_string(const std::string& s) {
    if (s == "me_gcn") return Variant::me_gcn;
    if (s == "baseline") return Variant::baseline;
    if (s == "baseline_tc") return Variant::baseline_tc;
    if (s == "early_fusion") return Variant::early_fusion;
    if (s == "late_fusion") return Variant::late_fusion;
    throw std::invalid_argument("unknown variant '" + s +
                                "' (me_gcn|baseline|baseline_tc|early_fusion|late_fusion)");
}

std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::me_gcn: return "me_gcn";
        case Variant::baseline: return "baseline";
        case Variant::baseline_tc: return "baseline_tc";
        case Variant::early_fusion: return "early_fusion";
        case Variant::late_fusion: return "late_fusion";
    }
    return "?";
}

std::vector<LayerPlan> chain_plan(int input_channels,
                                  const std::vector<std::pair<int, int>>& outs) {
    std::vector<LayerPlan> plan;
    int c = input_channels;
    for (auto [c_out, stride] : outs) {
        plan.push_back(LayerPlan{c, c_out, stride});
        c = c_out;
    }
    return plan;
}

ModelConfig default_model_config(int num_classes, const std::string& joint_preset) {
    ModelConfig cfg;
    cfg.plan = chain_plan(3, {{64, 1}, {64, 1}, {64, 1}, {64, 1}, {128, 2}, {128, 1}, {128, 1},
                              {256, 2}, {256, 1}, {256, 1}});
    cfg.layers = static_cast<int>(cfg.plan.size());
    cfg.reduction = 8;
    cfg.num_classes = num_classes;
    cfg.joint_preset = joint_preset;
    return cfg;
}

void validate_model_config(const ModelConfig& cfg) {
    if (cfg.plan.empty()) throw std::invalid_argument("model config: empty channel plan");
    if (cfg.layers != static_cast<int>(cfg.plan.size())) {
        throw std::invalid_argument("model config: layers=" + std::to_string(cfg.layers) +
                                    " but channel plan has " + std::to_string(cfg.plan.size()) +
                                    " entries");
    }
    if (cfg.num_classes < 2) throw std::invalid_argument("model config: need >= 2 classes");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) {
        throw std::invalid_argument("model config: dropout must be in [0,1)");
    }
    for (size_t k = 0; k < cfg.plan.size(); ++k) {
        const LayerPlan& p = cfg.plan[k];
        if (k > 0 && cfg.plan[k - 1].c_out != p.c_in) {
            throw std::invalid_argument("model config: layer " + std::to_string(k) +
                                        " input channels " + std::to_string(p.c_in) +
                                        " do not chain from previous output " +
                                        std::to_string(cfg.plan[k - 1].c_out));
        }
        fgb_hidden_channels(p.c_in, cfg.reduction);  // throws when inconsistent
        if (p.c_out >= cfg.reduction && p.c_out % cfg.reduction != 0) {
            throw std::invalid_argument("model config: layer " + std::to_string(k) +
                                        " output channels " + std::to_string(p.c_out) +
                                        " not divisible by reduction " +
                                        std::to_string(cfg.reduction));
        }
        if (p.stride < 1) throw std::invalid_argument("model config: stride must be >= 1");
    }
    for (const auto& flags : {cfg.mutual_mte, cfg.mutual_mfe}) {
        if (!flags.empty() && flags.size() != cfg.plan.size()) {
            throw std::invalid_argument("model config: mutual flag count " +
                                        std::to_string(flags.size()) + " != layer count " +
                                        std::to_string(cfg.plan.size()));
        }
    }
}

Tensor MeGcnModel::merge_entities(const Tensor& batch) {
    require_rank(batch, 5, "merge_entities");
    const int b = batch.extent(0), e = batch.extent(1), c = batch.extent(2), t = batch.extent(3),
              n = batch.extent(4);
    // [b][e][c][t][n] and [b][0][e*C+c][t][n] share the same row-major
    // layout, so the merge is a reshape.
    Tensor out({b, 1, e * c, t, n});
    out.vector() = batch.vector();
    return out;
}

MeGcnModel::MeGcnModel(ModelConfig cfg, const SkeletonGraph& graph) : cfg_(std::move(cfg)) {
    validate_model_config(cfg_);
    if (cfg_.joints == 0) cfg_.joints = graph.joints;
    if (cfg_.joints != graph.joints) {
        throw std::invalid_argument("model config joints " + std::to_string(cfg_.joints) +
                                    " disagree with graph joints " + std::to_string(graph.joints));
    }
    entities_ = cfg_.variant == Variant::early_fusion ? 1 : 2;
    c0_eff_ = entities_ == 1 ? 2 * cfg_.input_channels : cfg_.input_channels;
    if (cfg_.plan.front().c_in != c0_eff_) {
        throw std::invalid_argument("model config: first layer input channels " +
                                    std::to_string(cfg_.plan.front().c_in) +
                                    " do not match data channels " + std::to_string(c0_eff_));
    }

    Rng rng(cfg_.init_seed);
    const Tensor a_static = static_adjacency(graph);

    norm_gamma_ = Param("input_norm.gamma", Tensor::full({c0_eff_, cfg_.joints}, 1.0));
    norm_beta_ = Param("input_norm.beta", Tensor({c0_eff_, cfg_.joints}), true);
    norm_stats_.running_mean = Tensor({c0_eff_, cfg_.joints});
    norm_stats_.running_var = Tensor::full({c0_eff_, cfg_.joints}, 1.0);

    const bool tc_on = cfg_.variant != Variant::baseline;
    const bool mutual_on = cfg_.variant == Variant::me_gcn;
    for (size_t k = 0; k < cfg_.plan.size(); ++k) {
        const LayerPlan& p = cfg_.plan[k];
        auto layer = std::make_unique<MeGcLayer>("layer" + std::to_string(k + 1), p.c_in, p.c_out,
                                                 p.stride, cfg_.reduction, a_static, cfg_.residual,
                                                 rng);
        layer->tc_enabled = tc_on;
        layer->mte.mutual = mutual_on && (cfg_.mutual_mte.empty() || cfg_.mutual_mte[k]);
        layer->mfe.mutual = mutual_on && (cfg_.mutual_mfe.empty() || cfg_.mutual_mfe[k]);
        layers_.push_back(std::move(layer));
    }

    const int c_top = cfg_.plan.back().c_out;
    fc_w_ = Param("fc.w", uniform_init({cfg_.num_classes, c_top}, c_top, rng));
    fc_b_ = Param("fc.b", Tensor({cfg_.num_classes}), true);
}

Value MeGcnModel::forward_logits(Tape& tape, const Tensor& batch, bool training, Rng& rng,
                                 std::vector<MteTrace>* traces) {
    require_rank(batch, 5, "model input");
    require_extent(batch.extent(1), 2, "entity");
    require_extent(batch.extent(2), cfg_.input_channels, "channel");
    require_extent(batch.extent(4), cfg_.joints, "joint");

    const Tensor& staged = entities_ == 1 ? merge_entities(batch) : batch;
    Value x = tape.constant(staged);
    Value normed = temporal_batch_norm(x, tape.leaf(norm_gamma_), tape.leaf(norm_beta_),
                                       norm_stats_, training);

    if (traces) {
        traces->assign(layers_.size(), MteTrace{});
    }

    const int b = staged.extent(0);
    std::vector<Value> logits;
    logits.reserve(static_cast<size_t>(b));
    for (int bi = 0; bi < b; ++bi) {
        Value sample = slice_first(normed, bi);
        for (size_t k = 0; k < layers_.size(); ++k) {
            MteTrace* trace = traces && bi == b - 1 ? &(*traces)[k] : nullptr;
            sample = layer_forward(sample, *layers_[k], trace);
        }
        Value pooled = global_mean_time_joints(sum_first(sample));
        Value dropped = dropout(pooled, cfg_.dropout, training, rng);
        logits.push_back(affine(dropped, tape.leaf(fc_w_), tape.leaf(fc_b_)));
    }
    return stack_first(logits);
}

MeGcnModel::ForwardResult MeGcnModel::forward(Tape& tape, const Tensor& batch,
                                              const std::vector<int>& labels, bool training,
                                              Rng& rng, std::vector<MteTrace>* traces) {
    Value logits = forward_logits(tape, batch, training, rng, traces);
    Value loss = softmax_cross_entropy(logits, labels);
    return ForwardResult{loss, logits};
}

Tensor MeGcnModel::predict(const Tensor& batch) {
    Tape tape;
    Rng rng(0);
    Value logits = forward_logits(tape, batch, false, rng);
    return tape.val(logits);
}

std::vector<Param*> MeGcnModel::parameters() {
    std::vector<Param*> ps;
    ps.push_back(&norm_gamma_);
    ps.push_back(&norm_beta_);
    for (auto& layer : layers_) layer->collect_params(ps);
    ps.push_back(&fc_w_);
    ps.push_back(&fc_b_);
    return ps;
}

std::vector<std::pair<std::string, Tensor*>> MeGcnModel::state_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto add_param = [&out](Param& p) { out.emplace_back(p.name, &p.value); };
    add_param(norm_gamma_);
    add_param(norm_beta_);
    out.emplace_back("input_norm.running_mean", &norm_stats_.running_mean);
    out.emplace_back("input_norm.running_var", &norm_stats_.running_var);
    for (auto& layer : layers_) {
        add_param(layer->mte.fgb.psi_w);
        add_param(layer->mte.fgb.psi_b);
        add_param(layer->mte.fgb.phi_w);
        add_param(layer->mte.fgb.phi_b);
        add_param(layer->mte.ffb.beta);
        add_param(layer->mte.xi_w);
        add_param(layer->mte.xi_b);
        add_param(layer->mte.alpha);
        add_param(layer->mfe.w);
        add_param(layer->mfe.b);
        add_param(layer->mfe.ffb.beta);
        for (auto& br : layer->tc) {
            add_param(br.w);
            add_param(br.b);
        }
        if (layer->has_projection) {
            add_param(layer->proj_w);
            add_param(layer->proj_b);
        }
    }
    add_param(fc_w_);
    add_param(fc_b_);
    return out;
}

void MeGcnModel::zero_grad() {
    for (Param* p : parameters()) p->zero_grad();
}

std::unique_ptr<MeGcnModel> build_variant(Variant kind, ModelConfig cfg,
                                          const SkeletonGraph& graph) {
    cfg.variant = kind;
    if (kind == Variant::early_fusion && !cfg.plan.empty() &&
        cfg.plan.front().c_in == cfg.input_channels) {
        cfg.plan.front().c_in = 2 * cfg.input_channels;
    }
    return std::make_unique<MeGcnModel>(std::move(cfg), graph);
}

Tensor adjacency_activation(const Tensor& adjacency) {
    require_rank(adjacency, 3, "adjacency_activation");
    const int c = adjacency.extent(0);
    const int n = adjacency.extent(1);
    require_extent(adjacency.extent(2), n, "joint");
    Tensor score({n});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                score[j] += std::abs(adjacency.at({ci, i, j}));
    double total = 0.0;
    for (int j = 0; j < n; ++j) total += score[j];
    if (total > 0.0) {
        for (int j = 0; j < n; ++j) score[j] /= total;
    } else {
        score.fill(1.0 / n);
    }
    return score;
}

ActivationScores activation_scores(MeGcnModel& model, const Tensor& sample) {
    require_rank(sample, 4, "activation_scores sample");
    Tensor batch({1, sample.extent(0), sample.extent(1), sample.extent(2), sample.extent(3)});
    for (std::int64_t i = 0; i < sample.size(); ++i) batch[i] = sample[i];

    Tape tape;
    Rng rng(0);
    std::vector<MteTrace> traces;
    model.forward_logits(tape, batch, false, rng, &traces);

    const MteTrace& last = traces.back();
    ActivationScores scores;
    for (size_t e = 0; e < last.adj_post_ffb.size(); ++e) {
        scores.pre_ffb.push_back(adjacency_activation(last.adj_pre_ffb[e]));
        scores.post_ffb.push_back(adjacency_activation(last.adj_post_ffb[e]));
    }
    return scores;
}

}  // namespace megc
