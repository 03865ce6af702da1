#include <gtest/gtest.h>

#include <algorithm>
#include <mutex>
#include <set>

#include "cehr/harness.hpp"
#include "cehr/synth.hpp"
#include "cohort_fixture.hpp"
#include "test_util.hpp"

using namespace cehr;
using cehr::testing::TempDir;

namespace {

std::vector<int> alternating_labels(std::size_t n, std::size_t every = 4) {
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = i % every == 0;
    return y;
}

std::vector<LabeledExample> whole_history(const EventStore& store, std::vector<int> labels = {}) {
    std::vector<LabeledExample> out;
    for (std::size_t i = 0; i < store.persons().size(); ++i) {
        LabeledExample ex;
        ex.person_id = store.persons()[i].person_id;
        ex.person_index = i;
        ex.label = labels.empty() ? static_cast<int>(i % 2) : labels[i];
        ex.feature_visits = all_visits(store, i);
        out.push_back(std::move(ex));
    }
    return out;
}

// Three persons: one visit with 2 concepts; visits with 1 and 3 concepts;
// three single-concept visits.
EventStore length_fixture() {
    cehr::testing::FixtureBuilder b;
    b.person("A");
    auto v = b.visit("A", "outpatient", 0);
    b.event(v, "cond_0001", 0);
    b.event(v, "cond_0002", 0);
    b.person("B");
    v = b.visit("B", "outpatient", 0);
    b.event(v, "cond_0001", 0);
    v = b.visit("B", "inpatient", 40, 42);
    b.event(v, "cond_0002", 40);
    b.event(v, "cond_0003", 40);
    b.event(v, "proc_0001", 41);
    b.person("C");
    for (int k = 0; k < 3; ++k) b.event(b.visit("C", "office", 100 * k), "cond_0004", 100 * k);
    return b.build();
}

}  // namespace

TEST(Variants, GridOrderAndSwitches) {
    std::vector<std::string> names;
    for (const auto& v : ablation_variants()) names.push_back(v.name);
    EXPECT_EQ(names, (std::vector<std::string>{"CEHR", "M-BERT", "B-BERT", "NS-BERT", "NT-BERT", "ALT-BERT", "V-BERT",
                                               "R-BERT"}));
    EXPECT_FALSE(find_variant("R-BERT")->pretrained);
    EXPECT_EQ(find_variant("R-BERT")->representation, Representation::cehr);
    EXPECT_FALSE(find_variant("NS-BERT")->vtp_enabled);
    EXPECT_EQ(find_variant("V-BERT")->representation, Representation::no_vs_ve);
    EXPECT_EQ(find_variant("M-BERT")->representation, Representation::medbert_style);
    EXPECT_EQ(find_variant("B-BERT")->representation, Representation::behrt_style);
    EXPECT_EQ(find_variant("NT-BERT")->embedding_mode, EmbeddingMode::none_positional);
    EXPECT_EQ(find_variant("ALT-BERT")->embedding_mode, EmbeddingMode::sum);
    EXPECT_FALSE(find_variant("XGBoost").has_value());
}

TEST(Budgets, KnownNames) {
    for (const char* n : kBudgetNames) EXPECT_TRUE(find_budget(n).has_value()) << n;
    EXPECT_FALSE(find_budget("huge").has_value());
    const auto small = *find_budget("small");
    EXPECT_EQ(small.model.n_layers, 2u);
    EXPECT_EQ(small.model.d_model, 64u);
    EXPECT_EQ(small.pretrain.epochs, 3u);
    const auto doc = *find_budget("paper-doc");
    EXPECT_EQ(doc.model.n_layers, 5u);
    EXPECT_EQ(doc.model.n_heads, 8u);
    EXPECT_EQ(doc.model.d_model, 128u);
    EXPECT_EQ(doc.model.context_window, 300u);
    EXPECT_EQ(doc.finetune.max_epochs, 10u);
    EXPECT_EQ(doc.finetune.patience, 1u);
}

TEST(DeriveSeed, DeterministicAndTagSensitive) {
    EXPECT_EQ(derive_seed(5, {1, 2}), derive_seed(5, {1, 2}));
    EXPECT_NE(derive_seed(5, {1, 2}), derive_seed(5, {2, 1}));
    EXPECT_NE(derive_seed(5, {1}), derive_seed(6, {1}));
}

TEST(RunExperiment, ConstantScoresGiveHalf) {
    const auto y = alternating_labels(200);
    const auto plan = make_folds(y, 3);
    const FoldTrainer constant = [](const std::vector<std::size_t>&, const Fold& f, std::uint64_t) {
        return std::vector<double>(f.test.size(), 0.3);
    };
    const auto rows = run_experiment("t", "const", y, plan, constant, {});
    ASSERT_EQ(rows.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(rows[k].fold, k);
        EXPECT_EQ(rows[k].auc, 0.5);
    }
    const auto s = summarize(rows).at({"t", "const", 1.0});
    EXPECT_EQ(s.auc.mean, 0.5);
    EXPECT_EQ(s.auc.std, 0.0);
    EXPECT_EQ(s.folds, 4u);
}

TEST(RunExperiment, ThreadCountDoesNotChangeResults) {
    const auto y = alternating_labels(120, 3);
    const auto plan = make_folds(y, 9);
    const FoldTrainer noisy = [&](const std::vector<std::size_t>& train, const Fold& f, std::uint64_t seed) {
        Rng rng(seed + train.size());
        std::vector<double> s;
        for (auto i : f.test) s.push_back(y[i] + std::normal_distribution<double>(0, 1)(rng));
        return s;
    };
    ExperimentOptions one, many;
    one.fractions = many.fractions = {0.1, 0.5, 1.0};
    many.jobs = 4;
    const auto a = run_experiment("t", "m", y, plan, noisy, one), b = run_experiment("t", "m", y, plan, noisy, many);
    ASSERT_EQ(a.size(), 12u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].fraction, b[i].fraction);
        EXPECT_EQ(a[i].auc, b[i].auc);
    }
}

TEST(RunExperiment, FewShotSubsetsAreNestedInsideTrain) {
    const auto y = alternating_labels(100);
    const auto plan = make_folds(y, 4);
    std::map<std::pair<std::size_t, double>, std::vector<std::size_t>> seen;
    std::mutex mu;
    const FoldTrainer spy = [&](const std::vector<std::size_t>& train, const Fold& f, std::uint64_t) {
        std::lock_guard lock(mu);
        const auto k = static_cast<std::size_t>(&f - plan.folds.data());
        seen[{k, static_cast<double>(train.size())}] = train;
        return std::vector<double>(f.test.size(), 0.0);
    };
    ExperimentOptions o;
    o.fractions = {0.05, 0.10, 0.20, 0.40, 0.80};
    run_experiment("t", "m", y, plan, spy, o);
    ASSERT_EQ(seen.size(), 20u);
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<std::vector<std::size_t>> subsets;
        for (const auto& [key, idx] : seen)
            if (key.first == k) subsets.push_back(idx);
        std::vector<std::size_t> sizes;
        for (auto& s : subsets) sizes.push_back(s.size());
        EXPECT_EQ(sizes, (std::vector<std::size_t>{4, 8, 15, 30, 60}));
        for (std::size_t i = 0; i + 1 < subsets.size(); ++i) {
            std::set<std::size_t> big(subsets[i + 1].begin(), subsets[i + 1].end());
            for (auto v : subsets[i]) EXPECT_TRUE(big.count(v));
        }
        const std::set<std::size_t> train(plan.folds[k].train.begin(), plan.folds[k].train.end());
        for (auto v : subsets.back()) EXPECT_TRUE(train.count(v));
    }
}

TEST(Report, PercentFormat) {
    EXPECT_EQ(format_percent({0.807, 0.006}), "80.7±0.6%");
    EXPECT_EQ(format_percent({0.5, 0.0}), "50.0±0.0%");
}

TEST(Report, MetricsCsvRoundTrip) {
    TempDir dir;
    const std::vector<MetricRow> rows = {{"t2dm_hf", "CEHR", 1.0, 0, 0.8125, 0.25}, {"t2dm_hf", "LR", 0.05, 3, 0.5, 0.1}};
    write_metrics_csv(dir.file("m.csv"), rows);
    const auto text = cehr::testing::read_file(dir.file("m.csv"));
    EXPECT_EQ(text.substr(0, text.find('\n')), "task,model,fraction,fold,auc,pr_auc");
    const auto back = read_metrics_csv(dir.file("m.csv"));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].model, "LR");
    EXPECT_EQ(back[1].fraction, 0.05);
    EXPECT_EQ(back[1].fold, 3u);
    EXPECT_EQ(back[0].auc, 0.8125);
}

TEST(Report, GridFollowsRowOrderAndMarksAbsentModels) {
    std::vector<MetricRow> rows;
    for (std::size_t k = 0; k < 4; ++k) {
        rows.push_back({"a", "R-BERT", 1.0, k, 0.6, 0.2});
        rows.push_back({"a", "CEHR", 1.0, k, 0.8, 0.3});
    }
    ReportOptions o;
    o.models = {"CEHR", "XGBoost", "R-BERT"};
    const auto md = render_report(rows, o);
    const auto cehr = md.find("| CEHR | 80.0±0.0% |"), xgb = md.find("| XGBoost | absent |"),
               r = md.find("| R-BERT | 60.0±0.0% |");
    ASSERT_NE(cehr, std::string::npos) << md;
    ASSERT_NE(xgb, std::string::npos) << md;
    ASSERT_NE(r, std::string::npos) << md;
    EXPECT_LT(cehr, xgb);
    EXPECT_LT(xgb, r);
    EXPECT_NE(md.find("PR-AUC"), std::string::npos);
}

TEST(Lengths, Percentiles) {
    EXPECT_EQ(percentile({7}, 0.5), 7);
    EXPECT_EQ(percentile({4, 9, 11}, 0.5), 9);
    EXPECT_NEAR(percentile({11, 4, 9}, 0.95), 10.8, 1e-12);
    EXPECT_THROW(percentile({}, 0.5), std::invalid_argument);
}

TEST(Lengths, HandCountedFixture) {
    const auto store = length_fixture();
    const auto vocab = Vocabulary::from_store(store);
    const std::vector<Task> tasks = {{"all", whole_history(store)}};
    const auto rows = sequence_length_report(store, tasks, kAllRepresentations, vocab);
    ASSERT_EQ(rows.size(), 4u);
    // Per person (concepts, visits) = (2,1), (4,2), (3,3).
    // CEHR: concepts + 2 visits + (visits-1) ATT = 4, 9, 11.
    // BEHRT: concepts + (visits-1) SEP = 2, 5, 5. MEDBERT: concepts = 2, 4, 3.
    // no VS/VE: concepts + (visits-1) ATT = 2, 5, 5.
    std::map<std::string, std::pair<double, double>> got;
    for (const auto& r : rows) got[r.variant] = {r.median, r.p95};
    EXPECT_EQ(got["cehr"].first, 9);
    EXPECT_NEAR(got["cehr"].second, 10.8, 1e-12);
    EXPECT_EQ(got["behrt_style"].first, 5);
    EXPECT_EQ(got["medbert_style"].first, 3);
    EXPECT_NEAR(got["medbert_style"].second, 3.9, 1e-12);
    EXPECT_EQ(got["no_vs_ve"].first, 5);
}

TEST(Lengths, SinglePatientAndCehrNeverShorter) {
    const auto store = length_fixture();
    const auto vocab = Vocabulary::from_store(store);
    auto one = whole_history(store);
    one.resize(1);
    const std::vector<Task> single = {{"one", one}};
    const auto rows = sequence_length_report(store, single, kAllRepresentations, vocab);
    EXPECT_EQ(rows[0].median, 4);

    SynthConfig sc;
    sc.n_patients = 150;
    const auto big = generate_synthetic(sc, 2);
    const auto v2 = Vocabulary::from_store(big);
    for (std::size_t i = 0; i < big.persons().size(); ++i) {
        const auto& pid = big.persons()[i].person_id;
        if (big.visits_of(i).empty()) continue;
        EXPECT_GE(build_sequence(big, pid, Representation::cehr, v2).size(),
                  build_sequence(big, pid, Representation::medbert_style, v2).size());
    }
}

TEST(PrepareExamples, WindowsKeepMostRecentTokens) {
    SynthConfig sc;
    sc.n_patients = 40;
    const auto store = generate_synthetic(sc, 4);
    const auto vocab = Vocabulary::from_store(store);
    const auto cohort = whole_history(store);
    const auto ex = prepare_examples(store, cohort, Representation::cehr, vocab, 32);
    ASSERT_EQ(ex.size(), cohort.size());
    for (std::size_t i = 0; i < ex.size(); ++i) {
        EXPECT_EQ(ex[i].seq.size(), 32u);
        EXPECT_EQ(ex[i].label, cohort[i].label);
        const auto full = build_sequence(store.persons()[i], cohort[i].feature_visits, Representation::cehr, vocab);
        const std::size_t n = std::min<std::size_t>(32, full.size());
        EXPECT_TRUE(std::equal(full.token_ids.end() - static_cast<long>(n), full.token_ids.end(),
                               ex[i].seq.token_ids.begin()));
    }
}

TEST(AttPca, SixteenTokens) {
    Vocabulary vocab;
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.time2vec_dim = 2;
    c.vocab_size = vocab.size() + 3;
    c.n_visit_types = 2;
    CehrModel model(c);
    const auto pts = att_pca(model, vocab);
    ASSERT_EQ(pts.size(), 16u);
    EXPECT_EQ(pts.front().token, "W0");
    EXPECT_EQ(pts.back().token, "LT");
    double sx = 0;
    for (const auto& p : pts) sx += p.x;
    EXPECT_NEAR(sx, 0.0, 1e-9);  // mean-centred
}

TEST(Ablation, TinySmokeRun) {
    SynthConfig sc;
    sc.n_patients = 160;
    sc.mean_visits = 5;
    const auto store = generate_synthetic(sc, 6);
    const auto vocab = Vocabulary::from_store(store);
    const auto def = load_cohort_definition(std::string(CEHR_SOURCE_DIR) + "/configs/cohorts/gap_signal.toml");
    const std::vector<Task> tasks = {{"gap_signal", build_cohort(store, def)}};
    AblationOptions o;
    o.budget = *find_budget("tiny");
    o.budget.finetune.max_epochs = 1;
    o.variants = {"R-BERT", "CEHR"};
    o.seed = 1;
    const auto rows = ablation_matrix(store, vocab, tasks, o);
    ASSERT_EQ(rows.size(), 8u);
    EXPECT_EQ(rows[0].model, "CEHR");
    EXPECT_EQ(rows[4].model, "R-BERT");
    for (const auto& r : rows) {
        EXPECT_GE(r.auc, 0.0);
        EXPECT_LE(r.auc, 1.0);
    }
    o.variants = {"Q-BERT"};
    EXPECT_THROW(ablation_matrix(store, vocab, tasks, o), std::invalid_argument);
}

TEST(Baselines, SharedSplitsAcrossModels) {
    SynthConfig sc;
    sc.n_patients = 200;
    const auto store = generate_synthetic(sc, 8);
    const auto def = load_cohort_definition(std::string(CEHR_SOURCE_DIR) + "/configs/cohorts/gap_signal.toml");
    const auto cohort = build_cohort(store, def);
    const auto labels = cohort_labels(cohort);
    const auto plan = make_folds(labels, 2);
    HierarchyMap h;
    for (const auto& [c, code] : synthetic_hierarchy(sc)) h[c] = code;
    std::vector<std::map<std::string, double>> feats;
    for (const auto& ex : cohort) feats.push_back(rollup_counts(ex, h));
    const auto rows = run_experiment("gap_signal", "LR", labels, plan, logistic_trainer(feats, labels, {}), {});
    ASSERT_EQ(rows.size(), 4u);
    const auto again = run_experiment("gap_signal", "LR", labels, make_folds(labels, 2), logistic_trainer(feats, labels, {}), {});
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(rows[k].auc, again[k].auc);
        EXPECT_GE(rows[k].auc, 0.0);
        EXPECT_LE(rows[k].auc, 1.0);
    }
}
