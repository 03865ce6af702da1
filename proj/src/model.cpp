#include "cehr/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cehr {

std::string_view to_string(EmbeddingMode m) {
    switch (m) {
        case EmbeddingMode::concat_fc: return "concat_fc";
        case EmbeddingMode::sum: return "sum";
        default: return "none_positional";
    }
}

std::optional<EmbeddingMode> parse_embedding_mode(std::string_view s) {
    for (auto m : {EmbeddingMode::concat_fc, EmbeddingMode::sum, EmbeddingMode::none_positional}) {
        if (to_string(m) == s) return m;
    }
    return std::nullopt;
}

std::vector<std::string> ModelConfig::validate() const {
    std::vector<std::string> errors;
    if (n_layers < 1) errors.push_back("n_layers must be >= 1");
    if (n_heads < 1 || d_model < 1 || d_model % n_heads != 0) errors.push_back("d_model must be a positive multiple of n_heads");
    if (d_ff < 1) errors.push_back("d_ff must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) errors.push_back("dropout must lie in [0,1)");
    if (time2vec_dim < 1) errors.push_back("time2vec_dim must be >= 1");
    if (context_window < 1) errors.push_back("context_window must be >= 1");
    if (vocab_size <= static_cast<std::size_t>(Vocabulary::kFirstConcept)) errors.push_back("vocab_size must exceed the reserved ids");
    if (n_visit_types < 1) errors.push_back("n_visit_types must be >= 1");
    if (!(vtp_loss_weight >= 0.0)) errors.push_back("vtp_loss_weight must be >= 0");
    if (lstm_hidden < 1) errors.push_back("lstm_hidden must be >= 1");
    if (!(layer_norm_eps >= 0.0)) errors.push_back("layer_norm_eps must be >= 0");
    return errors;
}

// ---- batching ---------------------------------------------------------------

namespace {

void append_row(Batch& b, const TokenSequence& s, std::size_t len) {
    const std::size_t n = std::min(len, s.size());
    for (std::size_t i = 0; i < len; ++i) {
        const bool in = i < n && s.attention_mask[i];
        b.token_ids.push_back(in ? s.token_ids[i] : Vocabulary::kPad);
        b.time_years.push_back(in ? s.time_years[i] : 0.0);
        b.age_years.push_back(in ? s.age_years[i] : 0.0);
        b.segments.push_back(in ? s.visit_segment[i] : 0);
        b.visit_types.push_back(in ? s.visit_type_ids[i] : 0);
        b.attention_mask.push_back(in ? 1 : 0);
    }
    b.lengths.push_back(s.length());
}

std::size_t max_length(std::span<const TokenSequence* const> seqs) {
    std::size_t len = 0;
    for (const auto* s : seqs) len = std::max(len, s->length());
    if (len == 0) throw std::invalid_argument("collate: empty batch or empty sequence");
    return len;
}

}  // namespace

Batch collate(std::span<const TokenSequence* const> seqs) {
    if (seqs.empty()) throw std::invalid_argument("collate: empty batch");
    Batch b;
    b.batch_size = seqs.size();
    b.length = max_length(seqs);
    for (const auto* s : seqs) {
        if (s->length() == 0) throw std::invalid_argument("collate: sequence '" + s->person_id + "' is empty");
        append_row(b, *s, b.length);
    }
    return b;
}

Batch collate_pretrain(std::span<const MaskedSequence* const> items) {
    std::vector<const TokenSequence*> seqs;
    for (const auto* m : items) seqs.push_back(&m->seq);
    Batch b = collate(seqs);
    const std::size_t len = b.length;
    b.mlm_labels.assign(b.batch_size * len, 0);
    b.mlm_weights.assign(b.batch_size * len, 0.0);
    b.vtp_labels.assign(b.batch_size * len, 0);
    b.vtp_weights.assign(b.batch_size * len, 0.0);
    for (std::size_t r = 0; r < items.size(); ++r) {
        const auto& m = *items[r];
        for (std::size_t i = 0; i < len && i < m.seq.size(); ++i) {
            const std::size_t at = r * len + i;
            b.token_ids[at] = m.mlm.input_ids[i];
            b.mlm_labels[at] = m.mlm.labels[i];
            b.mlm_weights[at] = m.mlm.weights[i];
            if (m.vtp) {
                b.visit_types[at] = m.vtp->masked_type_ids[i];
                b.vtp_labels[at] = m.vtp->type_labels[i];
                b.vtp_weights[at] = m.vtp->weights[i];
            }
        }
    }
    return b;
}

MaskedSequence prepare_pretrain_example(const TokenSequence& seq, const Vocabulary& vocab, std::size_t context_window,
                                        const MlmOptions& mlm, double vtp_rate, Rng& rng) {
    MaskedSequence out;
    out.seq = window(seq, context_window, WindowMode::pretrain_random_slice, rng);
    out.mlm = apply_mlm_mask(out.seq, vocab.size(), rng, mlm);
    const bool typed = std::any_of(out.seq.visit_type_ids.begin(), out.seq.visit_type_ids.end(),
                                   [](std::int32_t t) { return t != 0; });
    if (typed) out.vtp = apply_vtp_mask(out.seq.visit_type_ids, vocab.type_mask_id(), vtp_rate, rng, true);
    return out;
}

// ---- parameters -------------------------------------------------------------

namespace {

void attention_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::size_t d) {
    for (const char* m : {"q", "k", "v", "o"}) {
        out.emplace_back(prefix + "." + m + ".w", Shape{d, d});
        out.emplace_back(prefix + "." + m + ".b", Shape{d});
    }
}

void norm_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::size_t d) {
    out.emplace_back(prefix + ".gain", Shape{d});
    out.emplace_back(prefix + ".bias", Shape{d});
}

void ffn_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, std::size_t d, std::size_t ff) {
    out.emplace_back(prefix + ".w1", Shape{d, ff});
    out.emplace_back(prefix + ".b1", Shape{ff});
    out.emplace_back(prefix + ".w2", Shape{ff, d});
    out.emplace_back(prefix + ".b2", Shape{d});
}

void temporal_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix, const ModelConfig& c) {
    const std::size_t d = c.d_model, k = c.time2vec_dim;
    if (c.embedding_mode == EmbeddingMode::none_positional) return;
    for (const char* t : {"time", "age"}) {
        out.emplace_back(prefix + "t2v." + t + ".omega", Shape{k});
        out.emplace_back(prefix + "t2v." + t + ".phi", Shape{k});
    }
    if (c.embedding_mode == EmbeddingMode::concat_fc) {
        out.emplace_back(prefix + "fuse.w", Shape{d + 2 * k, d});
        out.emplace_back(prefix + "fuse.b", Shape{d});
    } else {
        out.emplace_back(prefix + "proj.time.w", Shape{k, d});
        out.emplace_back(prefix + "proj.age.w", Shape{k, d});
    }
}

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c) {
    if (auto errors = c.validate(); !errors.empty()) {
        std::string msg = "invalid model config:";
        for (const auto& e : errors) msg += " " + e + ";";
        throw std::invalid_argument(msg);
    }
    const std::size_t d = c.d_model, V = c.vocab_size, T = c.n_visit_types, h = c.lstm_hidden;
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("emb.concept", Shape{V, d});
    out.emplace_back("emb.segment", Shape{3, d});
    temporal_shapes(out, "emb.", c);
    norm_shapes(out, "emb.ln", d);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string pre = "enc." + std::to_string(l);
        attention_shapes(out, pre + ".attn", d);
        norm_shapes(out, pre + ".ln1", d);
        ffn_shapes(out, pre + ".ffn", d, c.d_ff);
        norm_shapes(out, pre + ".ln2", d);
    }
    out.emplace_back("mlm.dense.w", Shape{d, d});
    out.emplace_back("mlm.dense.b", Shape{d});
    norm_shapes(out, "mlm.ln", d);
    out.emplace_back("mlm.bias", Shape{V});
    if (c.vtp_enabled) {
        out.emplace_back("vtp.type_emb", Shape{T + 2, d});
        temporal_shapes(out, "vtp.", c);
        if (c.vtp_self_attention) {
            attention_shapes(out, "vtp.self", d);
            norm_shapes(out, "vtp.ln_self", d);
        }
        attention_shapes(out, "vtp.cross", d);
        norm_shapes(out, "vtp.ln_cross", d);
        ffn_shapes(out, "vtp.ffn", d, c.d_ff);
        norm_shapes(out, "vtp.ln_ffn", d);
        out.emplace_back("vtp.out.w", Shape{d, T});
        out.emplace_back("vtp.out.b", Shape{T});
    }
    for (const char* dir : {"fw", "bw"}) {
        const std::string pre = std::string("head.lstm.") + dir;
        out.emplace_back(pre + ".wi", Shape{d, 4 * h});
        out.emplace_back(pre + ".wh", Shape{h, 4 * h});
        out.emplace_back(pre + ".b", Shape{4 * h});
    }
    out.emplace_back("head.dense.w", Shape{2 * h, 1});
    out.emplace_back("head.dense.b", Shape{1});
    return out;
}

std::size_t parameter_count(const ModelConfig& config) {
    std::size_t n = 0;
    for (const auto& [name, shape] : parameter_shapes(config)) n += shape_numel(shape);
    return n;
}

CehrModel::CehrModel(ModelConfig config) : config_(std::move(config)) {
    Rng rng(config_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto truncated = [&]() {
        while (true) {
            const double z = normal(rng);
            if (std::abs(z) <= 2.0) return 0.02 * z;
        }
    };
    const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(config_.lstm_hidden));
    std::uniform_real_distribution<double> lstm_init(-lstm_bound, lstm_bound);
    std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);

    for (const auto& [name, shape] : parameter_shapes(config_)) {
        std::vector<double> v(shape_numel(shape), 0.0);
        if (ends_with(name, ".gain")) {
            std::fill(v.begin(), v.end(), 1.0);
        } else if (ends_with(name, ".omega")) {
            for (auto& x : v) x = normal(rng);
            // The linear term sees raw years (~40 for calendar time); a unit
            // frequency there swamps the concept embeddings after fusion.
            v[0] = truncated();
        } else if (ends_with(name, ".phi")) {
            for (auto& x : v) x = phase(rng);
        } else if (starts_with(name, "head.lstm.")) {
            for (auto& x : v) x = lstm_init(rng);
        } else if (name == "head.dense.w") {
            const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            std::uniform_real_distribution<double> glorot(-limit, limit);
            for (auto& x : v) x = glorot(rng);
        } else if (ends_with(name, ".bias") || ends_with(name, ".b") || ends_with(name, ".b1") ||
                   ends_with(name, ".b2")) {
            // zeros
        } else {
            for (auto& x : v) x = truncated();
        }
        params_.add(name, Tensor::from_data(shape, std::move(v), true));
    }
}

ParameterSet CehrModel::pretrain_params() const {
    ParameterSet out;
    for (const auto& [name, t] : params_.items()) {
        if (!starts_with(name, "head.")) out.add(name, t);
    }
    return out;
}

ParameterSet CehrModel::finetune_params() const {
    ParameterSet out;
    for (const auto& [name, t] : params_.items()) {
        if (!starts_with(name, "mlm.") && !starts_with(name, "vtp.")) out.add(name, t);
    }
    return out;
}

// ---- forward ----------------------------------------------------------------

Tensor positional_encoding(std::size_t batch, std::size_t length, std::size_t d_model) {
    std::vector<double> row(length * d_model);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < d_model; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
            row[pos * d_model + i] = i % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate);
        }
    }
    std::vector<double> out;
    out.reserve(batch * row.size());
    for (std::size_t b = 0; b < batch; ++b) out.insert(out.end(), row.begin(), row.end());
    return Tensor::from_data({batch, length, d_model}, std::move(out));
}

Tensor CehrModel::norm(const std::string& prefix, const Tensor& x) const {
    return layer_norm(x, p(prefix + ".gain"), p(prefix + ".bias"), config_.layer_norm_eps);
}

Tensor CehrModel::feed_forward(const std::string& prefix, const Tensor& x) const {
    return linear(gelu(linear(x, p(prefix + ".w1"), p(prefix + ".b1"))), p(prefix + ".w2"), p(prefix + ".b2"));
}

Tensor CehrModel::temporal_embedding(const Tensor& base, const Batch& batch, const std::string& prefix) const {
    const std::size_t B = batch.batch_size, L = batch.length;
    switch (config_.embedding_mode) {
        case EmbeddingMode::none_positional:
            return add(base, positional_encoding(B, L, config_.d_model));
        case EmbeddingMode::concat_fc:
        case EmbeddingMode::sum: {
            const Tensor time = Tensor::from_data({B, L}, batch.time_years);
            const Tensor age = Tensor::from_data({B, L}, batch.age_years);
            const Tensor tt = time2vec(time, p(prefix + "t2v.time.omega"), p(prefix + "t2v.time.phi"));
            const Tensor at = time2vec(age, p(prefix + "t2v.age.omega"), p(prefix + "t2v.age.phi"));
            if (config_.embedding_mode == EmbeddingMode::concat_fc) {
                return linear(concat_last({base, tt, at}), p(prefix + "fuse.w"), p(prefix + "fuse.b"));
            }
            return add(add(base, linear(tt, p(prefix + "proj.time.w"))), linear(at, p(prefix + "proj.age.w")));
        }
    }
    throw std::logic_error("unreachable embedding mode");
}

Tensor CehrModel::embed(const Batch& batch) const {
    const Shape prefix{batch.batch_size, batch.length};
    const Tensor base =
        add(embedding_lookup(p("emb.concept"), batch.token_ids, prefix), embedding_lookup(p("emb.segment"), batch.segments, prefix));
    return temporal_embedding(base, batch, "emb.");
}

Tensor CehrModel::attention(const std::string& prefix, const Tensor& q_in, const Tensor& kv_in, const Batch& batch,
                            bool training, Rng& rng, std::vector<Tensor>* probs) const {
    const std::size_t H = config_.n_heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(config_.d_model / H));
    const Tensor q = split_heads(linear(q_in, p(prefix + ".q.w"), p(prefix + ".q.b")), H);
    const Tensor k = split_heads(linear(kv_in, p(prefix + ".k.w"), p(prefix + ".k.b")), H);
    const Tensor v = split_heads(linear(kv_in, p(prefix + ".v.w"), p(prefix + ".v.b")), H);
    Tensor weights = masked_softmax(scale(bmm_nt(q, k), scale_factor), batch.attention_mask, H);
    if (probs) probs->push_back(weights);
    weights = dropout(weights, config_.dropout, rng, training);
    return linear(merge_heads(bmm(weights, v), H), p(prefix + ".o.w"), p(prefix + ".o.b"));
}

Tensor CehrModel::encode(const Batch& batch, bool training, Rng& rng, std::vector<Tensor>* attn) const {
    Tensor x = dropout(norm("emb.ln", embed(batch)), config_.dropout, rng, training);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string pre = "enc." + std::to_string(l);
        x = norm(pre + ".ln1", add(x, dropout(attention(pre + ".attn", x, x, batch, training, rng, attn), config_.dropout, rng, training)));
        x = norm(pre + ".ln2", add(x, dropout(feed_forward(pre + ".ffn", x), config_.dropout, rng, training)));
    }
    return x;
}

Tensor CehrModel::mlm_logits(const Tensor& encoded, const Batch& batch) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < batch.mlm_weights.size(); ++i) {
        if (batch.mlm_weights[i] > 0) rows.push_back(i);
    }
    if (rows.empty()) throw std::invalid_argument("mlm_logits: no masked positions");
    Tensor h = gather_rows(encoded, rows);
    h = norm("mlm.ln", gelu(linear(h, p("mlm.dense.w"), p("mlm.dense.b"))));
    return add_bias(matmul_nt(h, p("emb.concept")), p("mlm.bias"));
}

Tensor CehrModel::vtp_logits(const Tensor& encoded, const Batch& batch, bool training, Rng& rng) const {
    if (!config_.vtp_enabled) throw std::logic_error("vtp_logits: visit type prediction is disabled");
    const Shape prefix{batch.batch_size, batch.length};
    Tensor q = temporal_embedding(embedding_lookup(p("vtp.type_emb"), batch.visit_types, prefix), batch, "vtp.");
    q = dropout(q, config_.dropout, rng, training);
    if (config_.vtp_self_attention) {
        q = norm("vtp.ln_self", add(q, dropout(attention("vtp.self", q, q, batch, training, rng, nullptr), config_.dropout, rng, training)));
    }
    q = norm("vtp.ln_cross", add(q, dropout(attention("vtp.cross", q, encoded, batch, training, rng, nullptr), config_.dropout, rng, training)));
    q = norm("vtp.ln_ffn", add(q, dropout(feed_forward("vtp.ffn", q), config_.dropout, rng, training)));
    return linear(q, p("vtp.out.w"), p("vtp.out.b"));
}

PretrainLoss CehrModel::pretrain_loss(const Batch& batch, bool training, Rng& rng) const {
    const Tensor encoded = encode(batch, training, rng);
    std::vector<std::int32_t> labels;
    for (std::size_t i = 0; i < batch.mlm_weights.size(); ++i) {
        if (batch.mlm_weights[i] > 0) labels.push_back(batch.mlm_labels[i]);
    }
    const std::vector<double> ones(labels.size(), 1.0);
    PretrainLoss out;
    const Tensor mlm = masked_cross_entropy(mlm_logits(encoded, batch), labels, ones);
    out.mlm = mlm.item();
    out.total = mlm;
    if (config_.vtp_enabled) {
        std::vector<std::int32_t> classes(batch.vtp_labels.size(), 0);
        for (std::size_t i = 0; i < classes.size(); ++i) {
            if (batch.vtp_weights[i] > 0) classes[i] = batch.vtp_labels[i] - 1;
        }
        const Tensor vtp = masked_cross_entropy(vtp_logits(encoded, batch, training, rng), classes, batch.vtp_weights);
        out.vtp = vtp.item();
        out.total = add(mlm, scale(vtp, config_.vtp_loss_weight));
    }
    return out;
}

Tensor CehrModel::finetune_logits(const Batch& batch, bool training, Rng& rng) const {
    const Tensor encoded = encode(batch, training, rng);
    const BiLstmWeights lstm{{p("head.lstm.fw.wi"), p("head.lstm.fw.wh"), p("head.lstm.fw.b")},
                             {p("head.lstm.bw.wi"), p("head.lstm.bw.wh"), p("head.lstm.bw.b")}};
    const Tensor states = bilstm_forward(encoded, lstm, batch.lengths);
    return reshape(linear(states, p("head.dense.w"), p("head.dense.b")), {batch.batch_size});
}

std::vector<double> CehrModel::predict(const Batch& batch) const {
    NoGradGuard guard;
    Rng unused(0);
    const Tensor probs = sigmoid(finetune_logits(batch, false, unused));
    return {probs.values().begin(), probs.values().end()};
}

}  // namespace cehr
