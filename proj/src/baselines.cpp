#include "cehr/baselines.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cehr/csv.hpp"
#include "cehr/ops.hpp"
#include "cehr/weights_io.hpp"

namespace cehr {

namespace {

double log1p_exp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid_scalar(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double linear_score(const LinearModel& m, const std::vector<double>& row) {
    double z = m.bias;
    for (std::size_t j = 0; j < row.size(); ++j) z += m.weights[j] * row[j];
    return z;
}

void check_design(const std::vector<std::vector<double>>& x, std::span<const int> y) {
    if (x.size() != y.size()) throw std::invalid_argument("logistic: row/label count mismatch");
    const std::size_t d = x.empty() ? 0 : x[0].size();
    for (const auto& row : x)
        if (row.size() != d) throw std::invalid_argument("logistic: ragged feature rows");
}

}  // namespace

double logistic_objective(const LinearModel& m, const std::vector<std::vector<double>>& x, std::span<const int> y) {
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = linear_score(m, x[i]);
        loss += y[i] == 1 ? log1p_exp(-z) : log1p_exp(z);
    }
    double norm = 0.0;
    for (double w : m.weights) norm += w * w;
    return loss + 0.5 * m.l2 * norm;
}

std::pair<std::vector<double>, double> logistic_gradient(const LinearModel& m, const std::vector<std::vector<double>>& x,
                                                         std::span<const int> y) {
    std::vector<double> gw(m.weights.size(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = sigmoid_scalar(linear_score(m, x[i])) - y[i];
        for (std::size_t j = 0; j < gw.size(); ++j) gw[j] += r * x[i][j];
        gb += r;
    }
    for (std::size_t j = 0; j < gw.size(); ++j) gw[j] += m.l2 * m.weights[j];
    return {gw, gb};
}

LinearModel train_logistic(const std::vector<std::vector<double>>& x, std::span<const int> y,
                           const LogisticOptions& options) {
    check_design(x, y);
    std::size_t pos = 0;
    for (int v : y) pos += v == 1;
    if (pos == 0 || pos == y.size()) throw std::invalid_argument("train_logistic: both classes are required");
    const std::size_t d = x[0].size();
    LinearModel m{std::vector<double>(d, 0.0), 0.0, options.l2};

    double lr = options.lr;
    if (lr <= 0.0) {
        double frob = 0.0;
        for (const auto& row : x)
            for (double v : row) frob += v * v;
        lr = 1.0 / (0.25 * frob + options.l2 + 0.25 * static_cast<double>(x.size()));
    }
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
        const auto [gw, gb] = logistic_gradient(m, x, y);
        double norm = gb * gb;
        for (double g : gw) norm += g * g;
        if (std::sqrt(norm) <= options.gradient_tolerance) break;
        for (std::size_t j = 0; j < d; ++j) m.weights[j] -= lr * gw[j];
        m.bias -= lr * gb;
        if (options.on_iteration) options.on_iteration(it, logistic_objective(m, x, y));
    }
    return m;
}

std::vector<double> predict_logistic(const LinearModel& model, const std::vector<std::vector<double>>& x) {
    std::vector<double> out;
    out.reserve(x.size());
    for (const auto& row : x) {
        if (row.size() != model.weights.size()) throw std::invalid_argument("predict_logistic: feature dimension mismatch");
        out.push_back(sigmoid_scalar(linear_score(model, row)));
    }
    return out;
}

void save_linear_model(const std::string& path, const LinearModel& model) {
    ParameterSet p;
    p.add("linear.w", Tensor::from_data({model.weights.size()}, model.weights));
    p.add("linear.b", Tensor::from_data({1}, {model.bias}));
    save_weights(path, p);
}

// ---- Bi-LSTM ----------------------------------------------------------------

BiLstmClassifier::BiLstmClassifier(const BiLstmConfig& config) : config_(config) {
    if (config.vocab_size == 0 || config.embedding_dim == 0 || config.hidden == 0) {
        throw std::invalid_argument("BiLstmClassifier: vocab_size, embedding_dim and hidden must be positive");
    }
    Rng rng(config.seed);
    const std::size_t d = config.embedding_dim, h = config.hidden;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> emb(config.vocab_size * d);
    for (auto& v : emb) v = normal(rng);
    params_.add("bilstm.emb", Tensor::from_data({config.vocab_size, d}, std::move(emb), true));
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    std::uniform_real_distribution<double> lstm(-bound, bound);
    for (const char* dir : {"fw", "bw"}) {
        for (const auto& [suffix, shape] : std::vector<std::pair<std::string, Shape>>{
                 {"wi", {d, 4 * h}}, {"wh", {h, 4 * h}}, {"b", {4 * h}}}) {
            std::vector<double> v(shape_numel(shape));
            for (auto& x : v) x = lstm(rng);
            params_.add(std::string("bilstm.") + dir + "." + suffix, Tensor::from_data(shape, std::move(v), true));
        }
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(2 * h + 1));
    std::uniform_real_distribution<double> glorot(-limit, limit);
    std::vector<double> w(2 * h);
    for (auto& x : w) x = glorot(rng);
    params_.add("bilstm.dense.w", Tensor::from_data({2 * h, 1}, std::move(w), true));
    params_.add("bilstm.dense.b", Tensor::zeros({1}, true));
}

Tensor BiLstmClassifier::logits(const Batch& batch) const {
    const auto& p = params_;
    const Tensor x = embedding_lookup(p.get("bilstm.emb"), batch.token_ids,
                                      {batch.batch_size, batch.length});
    const BiLstmWeights w{{p.get("bilstm.fw.wi"), p.get("bilstm.fw.wh"), p.get("bilstm.fw.b")},
                          {p.get("bilstm.bw.wi"), p.get("bilstm.bw.wh"), p.get("bilstm.bw.b")}};
    const Tensor states = bilstm_forward(x, w, batch.lengths);
    return reshape(linear(states, p.get("bilstm.dense.w"), p.get("bilstm.dense.b")), {batch.batch_size});
}

LogitFn BiLstmClassifier::logit_fn() const {
    return [this](const Batch& b, bool, Rng&) { return logits(b); };
}

std::size_t BiLstmClassifier::load_embeddings_csv(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open embedding file");
    const std::size_t d = config_.embedding_dim;
    auto table = params_.get("bilstm.emb").mutable_values();
    std::string line;
    std::size_t lineno = 0, set = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        if (lineno == 1 && fields[0] == "token") continue;
        if (fields.size() != d + 1) {
            throw_row_error(path, lineno, "expected " + std::to_string(d + 1) + " fields, got " + std::to_string(fields.size()));
        }
        const std::string token(fields[0]);
        const auto id = vocab.id(token);
        if (id == Vocabulary::kUnk && token != "[UNK]") continue;
        if (static_cast<std::size_t>(id) >= config_.vocab_size) continue;
        for (std::size_t k = 0; k < d; ++k) {
            try {
                std::size_t used = 0;
                const std::string f(fields[k + 1]);
                table[static_cast<std::size_t>(id) * d + k] = std::stod(f, &used);
                if (used != f.size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw_row_error(path, lineno, "bad number in column " + std::to_string(k + 1));
            }
        }
        ++set;
    }
    return set;
}

FinetuneResult train_bilstm_classifier(BiLstmClassifier& model, std::span<const BinaryExample> train,
                                       std::span<const BinaryExample> val, const FinetuneOptions& options,
                                       std::uint64_t seed) {
    if (train.empty()) throw std::invalid_argument("train_bilstm_classifier: empty training set");
    return train_binary(model.params(), model.logit_fn(), train, val, options, seed);
}

}  // namespace cehr
