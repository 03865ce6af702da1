#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cehr/event_store.hpp"
#include "cehr/model.hpp"

namespace cehr {

/// Shuffled mini-batches of indices into `lengths`. Indices are shuffled,
/// cut into pools of 50 batches, each pool is sorted by length before it is
/// split, and the resulting batches are shuffled again. Every index appears
/// exactly once.
std::vector<std::vector<std::size_t>> bucketed_batches(std::span<const std::size_t> lengths, std::size_t batch_size,
                                                       Rng& rng);

struct LossRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    double mlm_loss = 0.0;
    double vtp_loss = 0.0;
};

struct PretrainOptions {
    std::size_t epochs = 5;
    std::size_t batch_size = 32;
    double initial_lr = 2e-4;
    double eta_min = 0.0;
    MlmOptions mlm{0.15, true, true, true};
    double vtp_rate = 0.5;
    Representation representation = Representation::cehr;
    /// Keep persons with >= 1 visit and more than 5 events.
    bool eligibility_filter = true;
    std::size_t min_events_exclusive = 5;
    /// Per-epoch checkpoints land here when non-empty.
    std::string checkpoint_dir;
    /// Called after every optimizer step.
    std::function<void(const LossRecord&)> on_step;
};

struct PretrainResult {
    std::vector<LossRecord> trace;
    std::size_t n_patients = 0;
};

std::vector<std::size_t> eligible_persons(const EventStore& store, bool filter, std::size_t min_events_exclusive);

/// Adam with a cosine learning rate stepped once per epoch (period = epochs).
/// Throws std::invalid_argument when no person is eligible.
PretrainResult pretrain(CehrModel& model, const EventStore& store, const Vocabulary& vocab,
                        const PretrainOptions& options, std::uint64_t seed);

void write_loss_trace(const std::string& path, const std::vector<LossRecord>& trace);

/// Weights plus a JSON sidecar (path + ".json") holding the ModelConfig.
void save_checkpoint(const CehrModel& model, const std::string& path);
CehrModel load_checkpoint(const std::string& path);
std::string model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

// ---- binary classification --------------------------------------------------

struct BinaryExample {
    TokenSequence seq;  // already windowed
    double label = 0.0;
};

struct FinetuneOptions {
    std::size_t max_epochs = 10;
    std::size_t patience = 1;
    std::size_t batch_size = 32;
    double lr = 2e-4;
    bool restore_best = true;
};

struct FinetuneResult {
    std::size_t epochs_run = 0;
    std::size_t stop_epoch = 0;  // 1-based epoch that triggered early stopping, 0 if none
    std::size_t best_epoch = 0;  // 1-based
    std::vector<double> train_loss;
    std::vector<double> val_loss;
};

using LogitFn = std::function<Tensor(const Batch&, bool training, Rng& rng)>;

/// Mini-batch Adam on mean BCE; validation loss after each epoch drives
/// early stopping. With restore_best the parameters end at the best epoch.
FinetuneResult train_binary(ParameterSet& params, const LogitFn& logits, std::span<const BinaryExample> train,
                            std::span<const BinaryExample> val, const FinetuneOptions& options, std::uint64_t seed);
std::vector<double> predict_binary(const LogitFn& logits, std::span<const BinaryExample> examples,
                                   std::size_t batch_size);
double mean_bce(const LogitFn& logits, std::span<const BinaryExample> examples, std::size_t batch_size);

FinetuneResult finetune(CehrModel& model, std::span<const BinaryExample> train, std::span<const BinaryExample> val,
                        const FinetuneOptions& options, std::uint64_t seed);
LogitFn model_logits(const CehrModel& model);

}  // namespace cehr
