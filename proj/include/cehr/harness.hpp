#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cehr/baselines.hpp"
#include "cehr/cohort.hpp"
#include "cehr/folds.hpp"
#include "cehr/metrics.hpp"
#include "cehr/model.hpp"
#include "cehr/training.hpp"

namespace cehr {

/// One row of the ablation grid.
struct Variant {
    std::string name;
    Representation representation = Representation::cehr;
    EmbeddingMode embedding_mode = EmbeddingMode::concat_fc;
    bool vtp_enabled = true;
    bool pretrained = true;
};

/// CEHR, M-BERT, B-BERT, NS-BERT, NT-BERT, ALT-BERT, V-BERT, R-BERT.
const std::vector<Variant>& ablation_variants();
std::optional<Variant> find_variant(std::string_view name);

/// Model size and training schedule bundles selectable with --budget.
struct Budget {
    std::string name;
    ModelConfig model;  // vocab_size / n_visit_types / seed filled in later
    PretrainOptions pretrain;
    FinetuneOptions finetune;
    std::size_t synth_patients = 0;
};

std::optional<Budget> find_budget(std::string_view name);
inline constexpr const char* kBudgetNames[] = {"tiny", "small", "paper-doc"};

/// Deterministic 64-bit mixing of a base seed with tags.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

/// Feature sequences of a cohort, pre-truncated to the context window (the
/// most recent tokens are kept).
std::vector<BinaryExample> prepare_examples(const EventStore& store, std::span<const LabeledExample> cohort,
                                            Representation representation, const Vocabulary& vocab,
                                            std::size_t context_window);
std::vector<int> cohort_labels(std::span<const LabeledExample> cohort);

// ---- experiments ------------------------------------------------------------

struct MetricRow {
    std::string task;
    std::string model;
    double fraction = 1.0;
    std::size_t fold = 0;
    double auc = 0.0;
    double pr_auc = 0.0;
};

/// Trains on `train` (indices into the task's examples), may use fold.val
/// for early stopping, and returns scores aligned with fold.test.
using FoldTrainer =
    std::function<std::vector<double>(const std::vector<std::size_t>& train, const Fold& fold, std::uint64_t seed)>;

struct ExperimentOptions {
    /// 1.0 trains on the whole training split; smaller values use the
    /// few-shot subsets of it.
    std::vector<double> fractions = {1.0};
    bool nested_few_shot = true;
    std::size_t jobs = 1;
    std::uint64_t seed = 0;
};

/// One row per (fraction, fold), in that order. Folds may run on `jobs`
/// threads; results do not depend on the thread count.
std::vector<MetricRow> run_experiment(const std::string& task, const std::string& model, std::span<const int> labels,
                                      const FoldPlan& plan, const FoldTrainer& trainer,
                                      const ExperimentOptions& options);

/// Trainers keep references to `initial` and `examples`; both must outlive
/// the experiment.
/// Fine-tunes a fresh copy of `initial` per fold.
FoldTrainer cehr_trainer(const CehrModel& initial, std::span<const BinaryExample> examples,
                         const FinetuneOptions& options);
/// A model with randomly initialised weights per fold (R-BERT).
FoldTrainer unpretrained_trainer(const ModelConfig& config, std::span<const BinaryExample> examples,
                                 const FinetuneOptions& options);
/// Examples must use the MEDBERT_STYLE layout.
FoldTrainer bilstm_trainer(const BiLstmConfig& config, std::span<const BinaryExample> examples,
                           const FinetuneOptions& options, std::function<void(BiLstmClassifier&)> init = {});
/// Frequency features are fitted on the training rows of each fold.
FoldTrainer logistic_trainer(std::vector<std::map<std::string, double>> features, std::vector<int> labels,
                             const LogisticOptions& options);

/// Fresh model with the same config whose parameters copy `source`.
CehrModel copy_model(const CehrModel& source);

// ---- ablation ---------------------------------------------------------------

struct Task {
    std::string name;
    std::vector<LabeledExample> cohort;
};

struct AblationOptions {
    Budget budget;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::vector<std::string> variants;  // empty means all, in grid order
    std::function<void(const std::string&)> log;
};

/// Pretrains each variant on the whole store, then runs every task through
/// the 4-fold protocol.
std::vector<MetricRow> ablation_matrix(const EventStore& store, const Vocabulary& vocab, std::span<const Task> tasks,
                                       const AblationOptions& options);

/// ModelConfig for a variant under a budget.
ModelConfig variant_config(const Variant& variant, const Budget& budget, const Vocabulary& vocab, std::uint64_t seed);

// ---- reporting --------------------------------------------------------------

struct Summary {
    MeanStd auc;
    MeanStd pr_auc;
    std::size_t folds = 0;
};

/// Keyed by (task, model, fraction).
std::map<std::tuple<std::string, std::string, double>, Summary> summarize(std::span<const MetricRow> rows);

/// "80.7±0.6%".
std::string format_percent(const MeanStd& m);

void write_metrics_csv(const std::string& path, std::span<const MetricRow> rows);
std::vector<MetricRow> read_metrics_csv(const std::string& path);

struct ReportOptions {
    std::string title = "Results";
    /// Row order; models missing from the rows are listed as absent.
    std::vector<std::string> models;
    std::vector<std::string> tasks;
};

/// Markdown with a ROC-AUC and a PR-AUC grid (models x tasks) for every
/// fraction present, plus few-shot grids (models x fractions) per task
/// when more than one fraction was run.
std::string render_report(std::span<const MetricRow> rows, const ReportOptions& options);

// ---- sequence lengths and ATT embeddings ------------------------------------

struct LengthRow {
    std::string task;
    std::string variant;
    std::size_t patients = 0;
    double median = 0.0;
    double p95 = 0.0;
};

/// Linear interpolation between order statistics; throws on empty input.
double percentile(std::vector<double> values, double q);

/// Token counts of the unwindowed feature sequences.
std::vector<LengthRow> sequence_length_report(const EventStore& store, std::span<const Task> tasks,
                                              std::span<const Representation> variants, const Vocabulary& vocab);
void write_lengths_csv(const std::string& path, std::span<const LengthRow> rows);

struct AttPoint {
    std::string token;
    double x = 0.0;
    double y = 0.0;
};

/// PCA of the concept-embedding rows of W0..W3, M1..M11 and LT.
std::vector<AttPoint> att_pca(const CehrModel& model, const Vocabulary& vocab);
void write_att_pca_csv(const std::string& path, std::span<const AttPoint> points);

}  // namespace cehr
