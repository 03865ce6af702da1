#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cehr/ops.hpp"
#include "cehr/optim.hpp"
#include "cehr/sequence.hpp"

namespace cehr {

enum class EmbeddingMode { concat_fc, sum, none_positional };

std::string_view to_string(EmbeddingMode m);
std::optional<EmbeddingMode> parse_embedding_mode(std::string_view s);

struct ModelConfig {
    std::size_t n_layers = 5;
    std::size_t n_heads = 8;
    std::size_t d_model = 128;
    std::size_t d_ff = 512;
    double dropout = 0.1;
    std::size_t time2vec_dim = 16;
    std::size_t context_window = 300;
    std::size_t vocab_size = 0;
    std::size_t n_visit_types = 0;
    EmbeddingMode embedding_mode = EmbeddingMode::concat_fc;
    bool vtp_enabled = true;
    bool vtp_self_attention = true;
    double vtp_loss_weight = 1.0;
    std::size_t lstm_hidden = 64;
    double layer_norm_eps = 1e-12;
    std::uint64_t seed = 0;

    std::vector<std::string> validate() const;
};

/// Padded, column-major-free batch: every per-position vector is [B*L].
struct Batch {
    std::size_t batch_size = 0;
    std::size_t length = 0;
    std::vector<std::int32_t> token_ids;
    std::vector<double> time_years;
    std::vector<double> age_years;
    std::vector<std::int32_t> segments;
    std::vector<std::int32_t> visit_types;
    std::vector<std::uint8_t> attention_mask;
    std::vector<std::size_t> lengths;  // non-pad count per row

    // Pretraining targets.
    std::vector<std::int32_t> mlm_labels;
    std::vector<double> mlm_weights;
    std::vector<std::int32_t> vtp_labels;  // original visit-type ids
    std::vector<double> vtp_weights;

    // Fine-tuning targets.
    std::vector<double> labels;
};

/// A sequence plus its pretraining masks.
struct MaskedSequence {
    TokenSequence seq;
    MlmMask mlm;
    std::optional<VtpMask> vtp;  // absent when no position is typed
};

/// Pads every row to the longest non-pad length in the batch (never more
/// than the input sequences' own length).
Batch collate(std::span<const TokenSequence* const> seqs);
Batch collate_pretrain(std::span<const MaskedSequence* const> items);

/// Windows, then draws MLM and VTP masks.
MaskedSequence prepare_pretrain_example(const TokenSequence& seq, const Vocabulary& vocab, std::size_t context_window,
                                        const MlmOptions& mlm, double vtp_rate, Rng& rng);

/// Ordered (name, shape) list; a pure function of the config.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);
std::size_t parameter_count(const ModelConfig& config);

struct PretrainLoss {
    Tensor total;
    double mlm = 0.0;
    double vtp = 0.0;  // 0 when VTP is disabled
};

class CehrModel {
   public:
    explicit CehrModel(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    /// Handles sharing storage with params(): everything but the classifier.
    ParameterSet pretrain_params() const;
    /// Everything but the pretraining heads.
    ParameterSet finetune_params() const;

    /// Temporal concept embedding [B x L x d] (before the embedding norm).
    Tensor embed(const Batch& batch) const;
    /// attention, if given, receives each layer's probabilities
    /// [(B*H) x L x L].
    Tensor encode(const Batch& batch, bool training, Rng& rng, std::vector<Tensor>* attention = nullptr) const;
    /// Logits [M x V] for the M positions with positive MLM weight, in
    /// flat position order.
    Tensor mlm_logits(const Tensor& encoded, const Batch& batch) const;
    /// Logits [B x L x n_visit_types]; class c is visit-type id c+1.
    Tensor vtp_logits(const Tensor& encoded, const Batch& batch, bool training, Rng& rng) const;
    PretrainLoss pretrain_loss(const Batch& batch, bool training, Rng& rng) const;
    /// Logits [B] of the fine-tuning head.
    Tensor finetune_logits(const Batch& batch, bool training, Rng& rng) const;
    /// sigmoid(finetune_logits), no graph.
    std::vector<double> predict(const Batch& batch) const;

   private:
    const Tensor& p(const std::string& name) const { return params_.get(name); }
    Tensor temporal_embedding(const Tensor& base, const Batch& batch, const std::string& prefix) const;
    Tensor attention(const std::string& prefix, const Tensor& q_in, const Tensor& kv_in, const Batch& batch,
                     bool training, Rng& rng, std::vector<Tensor>* probs) const;
    Tensor feed_forward(const std::string& prefix, const Tensor& x) const;
    Tensor norm(const std::string& prefix, const Tensor& x) const;

    ModelConfig config_;
    ParameterSet params_;
};

/// Fixed sinusoidal encoding [B x L x d] of positions 0..L-1.
Tensor positional_encoding(std::size_t batch, std::size_t length, std::size_t d_model);

}  // namespace cehr
