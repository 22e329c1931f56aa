#pragma once

#include "megc/config.hpp"
#include "megc/csv.hpp"
#include "megc/model.hpp"
#include "megc/skeleton.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

namespace megc {

/// Raised when training hits a non-finite loss.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Centering (optional) then temporal resize per the config.
Tensor prepare_sample(const SkeletonSequence& s, const TrainConfig& cfg);

struct PreparedDataset {
    std::vector<Tensor> samples;  // each [2,C0,T,N]
    std::vector<int> labels;
};

PreparedDataset prepare_dataset(const Dataset& ds, const TrainConfig& cfg);

/// Stacks the indexed samples into [B,2,C0,T,N].
Tensor assemble_batch(const PreparedDataset& data, const std::vector<int>& indices);

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    int best_epoch = -1;
    double best_val_acc = -1.0;
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::vector<long long>> confusion;  // rows = truth
};

EvalResult evaluate(MeGcnModel& model, const PreparedDataset& data, int batch_size);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Runs the configured epochs with seeded shuffling, cross-entropy loss and
/// the warmup/milestone schedule. When out_dir is nonempty, writes
/// metrics.csv plus best.ckpt / last.ckpt there. `original_config` is echoed
/// into checkpoints (the model's own config may carry variant adjustments).
TrainResult train(MeGcnModel& model, const TrainConfig& original_config,
                  const PreparedDataset& train_data, const PreparedDataset& val_data,
                  const std::filesystem::path& out_dir = {}, const EpochCallback& on_epoch = {});

std::vector<CsvRow> metrics_csv(const std::vector<EpochMetrics>& history);
std::vector<CsvRow> confusion_csv(const EvalResult& eval);

// MEGCCKPT container: magic, version, config echo, then a named tensor
// table (name, extents, little-endian f64 payload). save/load round-trips
// bit-exactly.
void save_checkpoint(MeGcnModel& model, const TrainConfig& cfg,
                     const std::filesystem::path& path);

struct Checkpoint {
    TrainConfig config;
    std::unique_ptr<MeGcnModel> model;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace megc
