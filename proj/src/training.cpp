#include "cehr/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "cehr/weights_io.hpp"

namespace cehr {

std::vector<std::vector<std::size_t>> bucketed_batches(std::span<const std::size_t> lengths, std::size_t batch_size,
                                                       Rng& rng) {
    if (batch_size < 1) throw std::invalid_argument("bucketed_batches: batch_size must be >= 1");
    constexpr std::size_t kPoolBatches = 50;
    std::vector<std::size_t> order(lengths.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    const std::size_t pool = batch_size * kPoolBatches;
    for (std::size_t p = 0; p < order.size(); p += pool) {
        const auto first = order.begin() + static_cast<std::ptrdiff_t>(p);
        const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), p + pool));
        std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
        for (auto it = first; it < last;) {
            const auto stop = it + std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(batch_size), last - it);
            batches.emplace_back(it, stop);
            it = stop;
        }
    }
    std::shuffle(batches.begin(), batches.end(), rng);
    return batches;
}

std::vector<std::size_t> eligible_persons(const EventStore& store, bool filter, std::size_t min_events_exclusive) {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < store.persons().size(); ++p) {
        const bool has_visit = store.visit_end(p) > store.visit_begin(p);
        const std::size_t events = store.event_count_of(p);
        if (!has_visit || events == 0) continue;
        if (filter && events <= min_events_exclusive) continue;
        out.push_back(p);
    }
    return out;
}

PretrainResult pretrain(CehrModel& model, const EventStore& store, const Vocabulary& vocab,
                        const PretrainOptions& options, std::uint64_t seed) {
    if (options.epochs < 1 || options.batch_size < 1) throw std::invalid_argument("pretrain: epochs and batch_size must be >= 1");
    const auto persons = eligible_persons(store, options.eligibility_filter, options.min_events_exclusive);
    if (persons.empty()) throw std::invalid_argument("pretrain: no eligible patients");

    std::vector<TokenSequence> sequences;
    sequences.reserve(persons.size());
    for (std::size_t p : persons) {
        const auto visits = all_visits(store, p);
        sequences.push_back(build_sequence(store.persons()[p], visits, options.representation, vocab));
    }

    ParameterSet trainable = model.pretrain_params();
    AdamState adam;
    Rng rng(seed);
    const LrSchedule schedule{options.initial_lr, options.eta_min, static_cast<int>(options.epochs)};
    const std::size_t context = model.config().context_window;

    PretrainResult result;
    result.n_patients = persons.size();
    std::vector<std::size_t> lengths;
    for (const auto& seq : sequences) lengths.push_back(std::min(seq.length(), context));
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        const double lr = cosine_lr(schedule, static_cast<int>(epoch));
        for (const auto& members : bucketed_batches(lengths, options.batch_size, rng)) {
            std::vector<MaskedSequence> items;
            for (std::size_t i : members) {
                items.push_back(prepare_pretrain_example(sequences[i], vocab, context, options.mlm,
                                                         options.vtp_rate, rng));
            }
            std::vector<const MaskedSequence*> ptrs;
            for (const auto& m : items) ptrs.push_back(&m);
            const Batch batch = collate_pretrain(ptrs);

            trainable.zero_grad();
            const PretrainLoss loss = model.pretrain_loss(batch, true, rng);
            ensure_finite(loss.total, "pretrain loss");
            loss.total.backward();
            adam_step(trainable, adam, lr);

            LossRecord rec{++step, epoch + 1, lr, loss.mlm, loss.vtp};
            result.trace.push_back(rec);
            if (options.on_step) options.on_step(rec);
        }
        if (!options.checkpoint_dir.empty()) {
            std::filesystem::create_directories(options.checkpoint_dir);
            save_checkpoint(model, (std::filesystem::path(options.checkpoint_dir) /
                                    ("epoch_" + std::to_string(epoch + 1) + ".cehrw"))
                                       .string());
        }
    }
    return result;
}

void write_loss_trace(const std::string& path, const std::vector<LossRecord>& trace) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "step,epoch,lr,mlm_loss,vtp_loss\n";
    out.precision(10);
    for (const auto& r : trace) out << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.mlm_loss << ',' << r.vtp_loss << '\n';
}

std::string model_config_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["d_model"] = c.d_model;
    j["d_ff"] = c.d_ff;
    j["dropout"] = c.dropout;
    j["time2vec_dim"] = c.time2vec_dim;
    j["context_window"] = c.context_window;
    j["vocab_size"] = c.vocab_size;
    j["n_visit_types"] = c.n_visit_types;
    j["embedding_mode"] = std::string(to_string(c.embedding_mode));
    j["vtp_enabled"] = c.vtp_enabled;
    j["vtp_self_attention"] = c.vtp_self_attention;
    j["vtp_loss_weight"] = c.vtp_loss_weight;
    j["lstm_hidden"] = c.lstm_hidden;
    j["layer_norm_eps"] = c.layer_norm_eps;
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.d_model = j.at("d_model");
    c.d_ff = j.at("d_ff");
    c.dropout = j.at("dropout");
    c.time2vec_dim = j.at("time2vec_dim");
    c.context_window = j.at("context_window");
    c.vocab_size = j.at("vocab_size");
    c.n_visit_types = j.at("n_visit_types");
    const auto mode = parse_embedding_mode(j.at("embedding_mode").get<std::string>());
    if (!mode) throw std::invalid_argument("checkpoint config: bad embedding_mode");
    c.embedding_mode = *mode;
    c.vtp_enabled = j.at("vtp_enabled");
    c.vtp_self_attention = j.at("vtp_self_attention");
    c.vtp_loss_weight = j.at("vtp_loss_weight");
    c.lstm_hidden = j.at("lstm_hidden");
    c.layer_norm_eps = j.at("layer_norm_eps");
    c.seed = j.at("seed");
    return c;
}

void save_checkpoint(const CehrModel& model, const std::string& path) {
    save_weights(path, model.params());
    std::ofstream out(path + ".json");
    if (!out) throw std::runtime_error(path + ".json: cannot open for writing");
    out << model_config_json(model.config());
}

CehrModel load_checkpoint(const std::string& path) {
    std::ifstream in(path + ".json");
    if (!in) throw std::runtime_error("checkpoint config not found: " + path + ".json");
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    CehrModel model(model_config_from_json(text));
    const ParameterSet stored = load_weights(path);
    assign_weights(model.params(), stored);
    return model;
}

// ---- binary classification --------------------------------------------------

namespace {

Batch make_batch(std::span<const BinaryExample> examples, std::span<const std::size_t> members) {
    std::vector<const TokenSequence*> seqs;
    std::vector<double> labels;
    for (std::size_t i : members) {
        seqs.push_back(&examples[i].seq);
        labels.push_back(examples[i].label);
    }
    Batch b = collate(seqs);
    b.labels = std::move(labels);
    return b;
}

std::vector<std::size_t> length_order(std::span<const BinaryExample> examples) {
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return examples[a].seq.length() < examples[b].seq.length(); });
    return order;
}

std::vector<std::vector<double>> snapshot(const ParameterSet& params) {
    std::vector<std::vector<double>> out;
    for (const auto& [name, t] : params.items()) out.emplace_back(t.values().begin(), t.values().end());
    return out;
}

void restore(ParameterSet& params, const std::vector<std::vector<double>>& values) {
    std::size_t i = 0;
    for (auto& [name, t] : params.items()) {
        Tensor handle = t;
        std::copy(values[i].begin(), values[i].end(), handle.mutable_values().begin());
        ++i;
    }
}

}  // namespace

std::vector<double> predict_binary(const LogitFn& logits, std::span<const BinaryExample> examples, std::size_t batch_size) {
    NoGradGuard guard;
    Rng unused(0);
    std::vector<double> out(examples.size());
    const auto order = length_order(examples);
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        const std::size_t end = std::min(examples.size(), start + batch_size);
        const Tensor p = sigmoid(logits(make_batch(examples, std::span(order).subspan(start, end - start)), false, unused));
        for (std::size_t i = start; i < end; ++i) out[order[i]] = p.values()[i - start];
    }
    return out;
}

double mean_bce(const LogitFn& logits, std::span<const BinaryExample> examples, std::size_t batch_size) {
    NoGradGuard guard;
    Rng unused(0);
    if (examples.empty()) throw std::invalid_argument("mean_bce: no examples");
    double total = 0;
    const auto order = length_order(examples);
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        const std::size_t end = std::min(examples.size(), start + batch_size);
        const Batch b = make_batch(examples, std::span(order).subspan(start, end - start));
        total += bce_with_logits(logits(b, false, unused), b.labels).item() * static_cast<double>(end - start);
    }
    return total / static_cast<double>(examples.size());
}

FinetuneResult train_binary(ParameterSet& params, const LogitFn& logits, std::span<const BinaryExample> train,
                            std::span<const BinaryExample> val, const FinetuneOptions& options, std::uint64_t seed) {
    if (train.empty()) throw std::invalid_argument("train_binary: empty training set");
    if (options.max_epochs < 1 || options.batch_size < 1) throw std::invalid_argument("train_binary: bad options");
    AdamState adam;
    Rng rng(seed);
    FinetuneResult result;
    std::vector<std::size_t> lengths;
    for (const auto& e : train) lengths.push_back(e.seq.length());
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_values;
    std::size_t bad_epochs = 0;
    for (std::size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
        double epoch_loss = 0;
        for (const auto& members : bucketed_batches(lengths, options.batch_size, rng)) {
            const Batch b = make_batch(train, members);
            params.zero_grad();
            const Tensor loss = bce_with_logits(logits(b, true, rng), b.labels);
            ensure_finite(loss, "fine-tune loss");
            loss.backward();
            adam_step(params, adam, options.lr);
            epoch_loss += loss.item() * static_cast<double>(members.size());
        }
        result.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
        result.epochs_run = epoch;
        if (val.empty()) continue;
        const double v = mean_bce(logits, val, options.batch_size);
        result.val_loss.push_back(v);
        if (v < best) {
            best = v;
            result.best_epoch = epoch;
            bad_epochs = 0;
            if (options.restore_best) best_values = snapshot(params);
        } else if (++bad_epochs >= options.patience) {
            result.stop_epoch = epoch;
            break;
        }
    }
    if (val.empty()) result.best_epoch = result.epochs_run;
    if (options.restore_best && !best_values.empty()) restore(params, best_values);
    return result;
}

LogitFn model_logits(const CehrModel& model) {
    return [&model](const Batch& b, bool training, Rng& rng) { return model.finetune_logits(b, training, rng); };
}

FinetuneResult finetune(CehrModel& model, std::span<const BinaryExample> train, std::span<const BinaryExample> val,
                        const FinetuneOptions& options, std::uint64_t seed) {
    ParameterSet trainable = model.finetune_params();
    return train_binary(trainable, model_logits(model), train, val, options, seed);
}

}  // namespace cehr
