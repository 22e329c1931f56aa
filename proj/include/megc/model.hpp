#pragma once

#include "megc/graph.hpp"
#include "megc/layers.hpp"
#include "megc/ops.hpp"

#include <memory>
#include <string>
#include <vector>

namespace megc {

enum class Variant { me_gcn, baseline, baseline_tc, early_fusion, late_fusion };

Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

struct LayerPlan {
    int c_in = 0;
    int c_out = 0;
    int stride = 1;
};

struct ModelConfig {
    std::vector<LayerPlan> plan;
    int layers = 0;  // must equal plan.size()
    int reduction = 8;
    int num_classes = 0;
    std::string joint_preset = "auto";
    double dropout = 0.5;
    bool residual = true;
    std::vector<bool> mutual_mte;  // per layer; empty means all-on
    std::vector<bool> mutual_mfe;
    Variant variant = Variant::me_gcn;
    int input_channels = 3;  // data C0, before any early-fusion merge
    int joints = 0;
    std::uint64_t init_seed = 1;
};

/// K=10 channel progression 64x4, 128x3 (stride 2 first), 256x3 (stride 2
/// first) on raw xyz input, r=8.
ModelConfig default_model_config(int num_classes, const std::string& joint_preset);

/// Chains c_in from input_channels through `outs`; each entry is (c_out,
/// stride).
std::vector<LayerPlan> chain_plan(int input_channels, const std::vector<std::pair<int, int>>& outs);

void validate_model_config(const ModelConfig& cfg);

struct ActivationScores {
    // one row per entity, each normalized to sum 1 over joints
    std::vector<Tensor> pre_ffb;
    std::vector<Tensor> post_ffb;
};

/// Input normalization, K me-GC layers, inference head.
class MeGcnModel {
  public:
    MeGcnModel(ModelConfig cfg, const SkeletonGraph& graph);
    MeGcnModel(const MeGcnModel&) = delete;
    MeGcnModel& operator=(const MeGcnModel&) = delete;

    /// batch:[B,2,C0,T,N] -> logits Value [B,num_classes]. Entity merge for
    /// the early-fusion variant happens inside. `traces`, when given, is
    /// resized to K and filled from the last sample of the batch.
    Value forward_logits(Tape& tape, const Tensor& batch, bool training, Rng& rng,
                         std::vector<MteTrace>* traces = nullptr);

    /// forward_logits + mean softmax cross-entropy.
    struct ForwardResult {
        Value loss;
        Value logits;
    };
    ForwardResult forward(Tape& tape, const Tensor& batch, const std::vector<int>& labels,
                          bool training, Rng& rng, std::vector<MteTrace>* traces = nullptr);

    /// Eval-mode logits on a fresh tape.
    Tensor predict(const Tensor& batch);

    /// Parameters that participate in the configured variant's forward.
    std::vector<Param*> parameters();
    /// Every learnable tensor plus the normalization buffers, for
    /// checkpointing. Order is fixed.
    std::vector<std::pair<std::string, Tensor*>> state_tensors();
    void zero_grad();

    const ModelConfig& config() const { return cfg_; }
    int entity_streams() const { return entities_; }
    int effective_input_channels() const { return c0_eff_; }
    MeGcLayer& layer(int k) { return *layers_[static_cast<size_t>(k)]; }
    int layer_count() const { return static_cast<int>(layers_.size()); }
    NormStats& norm_stats() { return norm_stats_; }

    /// [B,2,C0,T,N] -> [B,1,2*C0,T,N]: entity axis folded into channels.
    static Tensor merge_entities(const Tensor& batch);

  private:
    ModelConfig cfg_;
    int entities_ = 2;
    int c0_eff_ = 0;
    Param norm_gamma_, norm_beta_;
    NormStats norm_stats_;
    std::vector<std::unique_ptr<MeGcLayer>> layers_;
    Param fc_w_, fc_b_;
};

/// me_gcn: as configured. baseline_tc / late_fusion: mutual flags off.
/// baseline: also temporal convolution replaced by identity. early_fusion:
/// the two entities are concatenated channel-wise into one stream.
std::unique_ptr<MeGcnModel> build_variant(Variant kind, ModelConfig cfg,
                                          const SkeletonGraph& graph);

/// |adjacency| summed over channels and source joints, normalized to sum 1.
/// adjacency:[C,N,N] -> [N].
Tensor adjacency_activation(const Tensor& adjacency);

/// Per-joint activation of the last layer's adjacency, computed with and
/// without the FFB cross-entity term.
ActivationScores activation_scores(MeGcnModel& model, const Tensor& sample);

}  // namespace megc
