#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cehr/ops.hpp"
#include "cehr/synth.hpp"
#include "cehr/training.hpp"
#include "cehr/weights_io.hpp"
#include "test_util.hpp"

using namespace cehr;
using cehr::testing::TempDir;

namespace {

ModelConfig tiny(const Vocabulary& vocab, std::uint64_t seed = 3) {
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.time2vec_dim = 4;
    c.context_window = 64;
    c.vocab_size = vocab.size();
    c.n_visit_types = vocab.n_visit_types();
    c.vtp_enabled = true;
    c.lstm_hidden = 8;
    c.seed = seed;
    return c;
}

EventStore small_store(std::size_t n, std::uint64_t seed) {
    SynthConfig sc;
    sc.n_patients = n;
    sc.mean_visits = 4;
    return generate_synthetic(sc, seed);
}

double mean_of(const std::vector<LossRecord>& trace, std::size_t epoch, double LossRecord::*field) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& r : trace)
        if (r.epoch == epoch) s += r.*field, ++n;
    return s / static_cast<double>(n);
}

}  // namespace

TEST(BucketedBatches, PartitionEveryIndexOnce) {
    Rng rng(1);
    std::vector<std::size_t> lengths(1234);
    std::uniform_int_distribution<std::size_t> len(1, 300);
    for (auto& l : lengths) l = len(rng);
    const auto batches = bucketed_batches(lengths, 16, rng);
    std::vector<int> seen(lengths.size(), 0);
    for (const auto& b : batches) {
        ASSERT_FALSE(b.empty());
        ASSERT_LE(b.size(), 16u);
        for (auto i : b) ++seen[i];
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    EXPECT_EQ(batches.size(), 78u);  // 800-item pool -> 50 batches, 434 -> 28
}

TEST(BucketedBatches, BatchesAreLengthHomogeneous) {
    Rng rng(2);
    std::vector<std::size_t> lengths(1600);
    std::uniform_int_distribution<std::size_t> len(1, 300);
    for (auto& l : lengths) l = len(rng);
    double spread = 0;
    for (const auto& b : bucketed_batches(lengths, 32, rng)) {
        auto [lo, hi] = std::minmax_element(b.begin(), b.end(),
                                            [&](auto x, auto y) { return lengths[x] < lengths[y]; });
        spread += static_cast<double>(lengths[*hi] - lengths[*lo]);
    }
    EXPECT_LT(spread / 50.0, 30.0);  // unsorted batches of 32 spread ~280
}

TEST(BucketedBatches, SeedDeterminesOrder) {
    std::vector<std::size_t> lengths{5, 1, 9, 3, 3, 7, 2};
    Rng a(9), b(9), c(10);
    EXPECT_EQ(bucketed_batches(lengths, 3, a), bucketed_batches(lengths, 3, b));
    EXPECT_THROW(bucketed_batches(lengths, 0, c), std::invalid_argument);
}

TEST(Eligibility, MoreThanFiveEventsRequired) {
    std::vector<Person> persons;
    std::vector<VisitRecord> visits;
    std::vector<DomainEvent> events;
    for (int p = 0; p < 3; ++p) {
        const std::string pid = "p" + std::to_string(p);
        persons.push_back({pid, make_date(1950, 1, 1), Gender::female});
        visits.push_back({pid + "v", pid, "outpatient", make_date(2005, 1, 1), make_date(2005, 1, 1), ""});
        for (int e = 0; e < 4 + p; ++e)
            events.push_back({pid, pid + "v", Domain::condition, "cond_" + std::to_string(e), make_date(2005, 1, 1)});
    }
    const auto store = EventStore::build(persons, visits, events);
    // 4, 5 and 6 events
    EXPECT_EQ(eligible_persons(store, true, 5), (std::vector<std::size_t>{2}));
    EXPECT_EQ(eligible_persons(store, false, 5), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Pretrain, LossFallsAcrossSeeds) {
    const auto store = small_store(200, 4);
    const auto vocab = Vocabulary::from_store(store);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        CehrModel model(tiny(vocab, seed));
        PretrainOptions opt;
        opt.epochs = 4;
        opt.batch_size = 16;
        opt.initial_lr = 3e-3;
        const auto result = pretrain(model, store, vocab, opt, seed);
        EXPECT_LT(mean_of(result.trace, 4, &LossRecord::mlm_loss), mean_of(result.trace, 1, &LossRecord::mlm_loss) - 0.3)
            << "seed " << seed;
        EXPECT_LT(mean_of(result.trace, 4, &LossRecord::vtp_loss), mean_of(result.trace, 1, &LossRecord::vtp_loss))
            << "seed " << seed;
    }
}

TEST(Pretrain, TraceFollowsCosineScheduleAndCounts) {
    const auto store = small_store(60, 5);
    const auto vocab = Vocabulary::from_store(store);
    CehrModel model(tiny(vocab));
    PretrainOptions opt;
    opt.epochs = 3;
    opt.batch_size = 8;
    opt.initial_lr = 1e-3;
    const auto result = pretrain(model, store, vocab, opt, 7);
    const std::size_t per_epoch = (result.n_patients + 7) / 8;
    ASSERT_EQ(result.trace.size(), 3 * per_epoch);
    EXPECT_EQ(result.n_patients, eligible_persons(store, true, 5).size());
    const double pi = std::acos(-1.0);
    for (std::size_t i = 0; i < result.trace.size(); ++i) {
        const auto& r = result.trace[i];
        EXPECT_EQ(r.step, i + 1);
        EXPECT_EQ(r.epoch, i / per_epoch + 1);
        EXPECT_NEAR(r.lr, 1e-3 * 0.5 * (1 + std::cos(pi * static_cast<double>(r.epoch - 1) / 3.0)), 1e-15);
        EXPECT_TRUE(std::isfinite(r.mlm_loss) && std::isfinite(r.vtp_loss));
    }
}

TEST(Pretrain, SameSeedSameTraceAndWeights) {
    const auto store = small_store(40, 6);
    const auto vocab = Vocabulary::from_store(store);
    auto run = [&] {
        CehrModel model(tiny(vocab));
        PretrainOptions opt;
        opt.epochs = 2;
        opt.batch_size = 8;
        auto r = pretrain(model, store, vocab, opt, 11);
        std::vector<double> w;
        for (const auto& [n, t] : model.params().items()) w.insert(w.end(), t.values().begin(), t.values().end());
        return std::make_pair(r.trace, w);
    };
    const auto a = run(), b = run();
    ASSERT_EQ(a.first.size(), b.first.size());
    for (std::size_t i = 0; i < a.first.size(); ++i) {
        EXPECT_EQ(a.first[i].mlm_loss, b.first[i].mlm_loss);
        EXPECT_EQ(a.first[i].vtp_loss, b.first[i].vtp_loss);
    }
    EXPECT_EQ(a.second, b.second);
}

TEST(Pretrain, LeavesClassifierHeadUntouched) {
    const auto store = small_store(40, 6);
    const auto vocab = Vocabulary::from_store(store);
    CehrModel model(tiny(vocab));
    const auto before = model.params().clone();
    PretrainOptions opt;
    opt.epochs = 1;
    pretrain(model, store, vocab, opt, 1);
    for (const auto& [name, t] : model.params().items()) {
        const auto& old = before.get(name);
        const bool same = std::equal(t.values().begin(), t.values().end(), old.values().begin());
        if (name.rfind("head.", 0) == 0) EXPECT_TRUE(same) << name;
        if (name == "emb.concept") EXPECT_FALSE(same);
    }
}

TEST(Pretrain, RejectsStoreWithNoEligiblePatient) {
    const auto store = EventStore::build({{"p", make_date(1950, 1, 1), Gender::male}}, {}, {});
    const auto vocab = Vocabulary::from_store(small_store(20, 1));
    CehrModel model(tiny(vocab));
    EXPECT_THROW(pretrain(model, store, vocab, {}, 1), std::invalid_argument);
}

TEST(Checkpoint, PerEpochFilesRoundTrip) {
    TempDir dir;
    const auto store = small_store(30, 8);
    const auto vocab = Vocabulary::from_store(store);
    auto cfg = tiny(vocab);
    cfg.embedding_mode = EmbeddingMode::sum;
    CehrModel model(cfg);
    PretrainOptions opt;
    opt.epochs = 2;
    opt.checkpoint_dir = dir.file("ckpt");
    pretrain(model, store, vocab, opt, 1);
    for (const char* f : {"epoch_1.cehrw", "epoch_1.cehrw.json", "epoch_2.cehrw", "epoch_2.cehrw.json"})
        EXPECT_TRUE(std::filesystem::exists(dir.file(std::string("ckpt/") + f))) << f;

    const auto loaded = load_checkpoint(dir.file("ckpt/epoch_2.cehrw"));
    EXPECT_EQ(model_config_json(loaded.config()), model_config_json(cfg));
    for (const auto& [name, t] : model.params().items()) {
        const auto& got = loaded.params().get(name);
        ASSERT_EQ(got.shape(), t.shape()) << name;
        for (std::size_t i = 0; i < t.numel(); ++i)
            ASSERT_EQ(got.values()[i], static_cast<double>(static_cast<float>(t.values()[i]))) << name;
    }
}

TEST(Checkpoint, ConfigJsonRoundTrip) {
    ModelConfig c;
    c.n_layers = 3;
    c.dropout = 0.25;
    c.embedding_mode = EmbeddingMode::none_positional;
    c.vtp_enabled = true;
    c.vocab_size = 77;
    c.n_visit_types = 4;
    c.seed = 123456789012345ULL;
    const auto back = model_config_from_json(model_config_json(c));
    EXPECT_EQ(model_config_json(back), model_config_json(c));
    EXPECT_EQ(back.seed, c.seed);
    EXPECT_EQ(back.embedding_mode, EmbeddingMode::none_positional);
}

TEST(LossTrace, CsvLayout) {
    TempDir dir;
    write_loss_trace(dir.file("t.csv"), {{1, 1, 0.5, 2.0, 1.0}, {2, 1, 0.5, 1.5, 0.75}});
    EXPECT_EQ(cehr::testing::read_file(dir.file("t.csv")),
              "step,epoch,lr,mlm_loss,vtp_loss\n1,1,0.5,2,1\n2,1,0.5,1.5,0.75\n");
}

// ---- binary trainer ----------------------------------------------------------

namespace {

constexpr std::int32_t kSignal = Vocabulary::kFirstConcept;
constexpr std::size_t kToyVocab = Vocabulary::kFirstConcept + 8;

std::vector<BinaryExample> toy_examples(std::size_t n, std::uint64_t seed, bool flip = false) {
    Rng rng(seed);
    std::uniform_int_distribution<std::int32_t> tok(kSignal + 1, kToyVocab - 1);
    std::uniform_int_distribution<std::size_t> len(2, 12);
    std::vector<BinaryExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        BinaryExample e;
        const bool positive = i % 2 == 0;
        const std::size_t L = len(rng);
        for (std::size_t k = 0; k < L; ++k) {
            const std::int32_t id = positive && k == L / 2 ? kSignal : tok(rng);
            e.seq.push(id, 30.0 + 0.1 * static_cast<double>(k), 60.0, 1, 1);
        }
        e.label = (positive != flip) ? 1.0 : 0.0;
        out.push_back(std::move(e));
    }
    return out;
}

// logit = sum of w[token] over non-pad positions, plus b.
struct BagOfTokens {
    ParameterSet params;
    BagOfTokens() {
        params.add("w", Tensor::zeros({kToyVocab, 1}, true));
        params.add("b", Tensor::zeros({1}, true));
    }
    LogitFn fn() {
        return [this](const Batch& b, bool, Rng&) {
            const Tensor per_token = embedding_lookup(params.get("w"), b.token_ids, {b.batch_size, b.length, 1});
            std::vector<double> mask(b.attention_mask.begin(), b.attention_mask.end());
            const Tensor kept = mul(reshape(per_token, {b.batch_size, b.length}),
                                    Tensor::from_data({b.batch_size, b.length}, std::move(mask)));
            const Tensor rows = matmul(kept, Tensor::full({b.length, 1}, 1.0));
            return reshape(add_bias(rows, params.get("b")), {b.batch_size});
        };
    }
};

}  // namespace

TEST(TrainBinary, LearnsTokenSignal) {
    const auto train = toy_examples(200, 1), val = toy_examples(60, 2);
    BagOfTokens m;
    FinetuneOptions opt;
    opt.lr = 0.05;
    const auto r = train_binary(m.params, m.fn(), train, val, opt, 3);
    EXPECT_GE(r.epochs_run, 2u);
    const auto p = predict_binary(m.fn(), val, 16);
    double lowest_pos = 1, highest_neg = 0;
    for (std::size_t i = 0; i < val.size(); ++i)
        (val[i].label == 1.0 ? lowest_pos = std::min(lowest_pos, p[i]) : highest_neg = std::max(highest_neg, p[i]));
    EXPECT_GT(lowest_pos, highest_neg);
    EXPECT_LT(mean_bce(m.fn(), val, 7), r.val_loss.front());
}

TEST(TrainBinary, EarlyStopRestoresBestEpoch) {
    // Validation labels are flipped, so every epoch of training makes the
    // validation loss worse: epoch 1 is best, epoch 2 triggers the stop.
    const auto train = toy_examples(100, 1), val = toy_examples(40, 2, true);
    FinetuneOptions opt;
    opt.lr = 0.05;
    BagOfTokens m;
    const auto r = train_binary(m.params, m.fn(), train, val, opt, 3);
    EXPECT_EQ(r.stop_epoch, 2u);
    EXPECT_EQ(r.best_epoch, 1u);
    EXPECT_EQ(r.epochs_run, 2u);
    ASSERT_EQ(r.val_loss.size(), 2u);
    EXPECT_GT(r.val_loss[1], r.val_loss[0]);

    // Oracle: a one-epoch run with the same seed ends where epoch 1 did.
    BagOfTokens one;
    opt.max_epochs = 1;
    opt.restore_best = false;
    train_binary(one.params, one.fn(), train, val, opt, 3);
    for (const char* name : {"w", "b"}) {
        const auto a = m.params.get(name).values(), b = one.params.get(name).values();
        EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << name;
    }
}

TEST(TrainBinary, PredictionsIndependentOfBatchingAndOrder) {
    const auto ex = toy_examples(37, 5);
    BagOfTokens m;
    m.params.get("w").mutable_values()[kSignal] = 0.7;
    m.params.get("w").mutable_values()[kSignal + 3] = -0.4;
    const auto a = predict_binary(m.fn(), ex, 5), b = predict_binary(m.fn(), ex, 64);
    ASSERT_EQ(a.size(), ex.size());
    for (std::size_t i = 0; i < ex.size(); ++i) {
        double logit = 0;
        for (auto id : ex[i].seq.token_ids) logit += m.params.get("w").values()[static_cast<std::size_t>(id)];
        EXPECT_NEAR(a[i], 1.0 / (1.0 + std::exp(-logit)), 1e-12);
        EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(Finetune, CehrModelLearnsPlantedToken) {
    const auto train = toy_examples(160, 11), val = toy_examples(40, 12);
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.time2vec_dim = 4;
    c.context_window = 16;
    c.vocab_size = kToyVocab;
    c.n_visit_types = 1;
    c.lstm_hidden = 8;
    c.dropout = 0.0;
    CehrModel model(c);
    FinetuneOptions opt;
    opt.lr = 1e-2;
    opt.batch_size = 16;
    opt.max_epochs = 20;
    opt.patience = 20;
    const auto r = finetune(model, train, val, opt, 4);
    EXPECT_LT(r.val_loss[r.best_epoch - 1], r.val_loss[0]);
    const auto p = predict_binary(model_logits(model), val, 16);
    double pos = 0, neg = 0;
    for (std::size_t i = 0; i < val.size(); ++i) (val[i].label == 1.0 ? pos : neg) += p[i];
    EXPECT_GT(pos / 20.0 - neg / 20.0, 0.3);
}
