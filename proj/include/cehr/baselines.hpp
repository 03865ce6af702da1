#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cehr/optim.hpp"
#include "cehr/sequence.hpp"
#include "cehr/training.hpp"

namespace cehr {

// ---- logistic regression ----------------------------------------------------

struct LinearModel {
    std::vector<double> weights;
    double bias = 0.0;
    double l2 = 1.0;
};

struct LogisticOptions {
    double l2 = 1.0;
    /// Step size; 0 picks 1 / L for the Lipschitz bound L = ||X||_F^2 / 4 + l2 + n / 4,
    /// which makes every step a descent step.
    double lr = 0.0;
    std::size_t max_iterations = 20000;
    double gradient_tolerance = 1e-7;
    /// Objective after each iteration, when set.
    std::function<void(std::size_t, double)> on_iteration;
};

/// Full-batch gradient descent on sum of log losses + l2/2 |w|^2 (bias not
/// penalised). Throws std::invalid_argument unless both classes are present.
LinearModel train_logistic(const std::vector<std::vector<double>>& x, std::span<const int> y,
                           const LogisticOptions& options = {});
std::vector<double> predict_logistic(const LinearModel& model, const std::vector<std::vector<double>>& x);
double logistic_objective(const LinearModel& model, const std::vector<std::vector<double>>& x, std::span<const int> y);
/// (d/dw, d/db) of logistic_objective.
std::pair<std::vector<double>, double> logistic_gradient(const LinearModel& model,
                                                         const std::vector<std::vector<double>>& x,
                                                         std::span<const int> y);
void save_linear_model(const std::string& path, const LinearModel& model);

// ---- Bi-LSTM sequence classifier --------------------------------------------

struct BiLstmConfig {
    std::size_t vocab_size = 0;
    std::size_t embedding_dim = 64;
    std::size_t hidden = 64;
    std::uint64_t seed = 0;
};

/// token embedding -> Bi-LSTM -> dense -> sigmoid. Parameters: bilstm.emb,
/// bilstm.{fw,bw}.{wi,wh,b}, bilstm.dense.{w,b}.
class BiLstmClassifier {
   public:
    explicit BiLstmClassifier(const BiLstmConfig& config);
    const BiLstmConfig& config() const { return config_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    Tensor logits(const Batch& batch) const;
    LogitFn logit_fn() const;

    /// Replaces rows of the embedding table from a CSV "token,e0,...,e{d-1}".
    /// Tokens missing from `vocab` are skipped; returns the number of rows set.
    std::size_t load_embeddings_csv(const std::string& path, const Vocabulary& vocab);

   private:
    BiLstmConfig config_;
    ParameterSet params_;
};

/// Trains with the shared early-stopping loop. Throws on an empty training set.
FinetuneResult train_bilstm_classifier(BiLstmClassifier& model, std::span<const BinaryExample> train,
                                       std::span<const BinaryExample> val, const FinetuneOptions& options,
                                       std::uint64_t seed);

}  // namespace cehr
