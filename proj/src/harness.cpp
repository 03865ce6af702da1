#include "cehr/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "cehr/csv.hpp"

namespace cehr {

const std::vector<Variant>& ablation_variants() {
    using R = Representation;
    using E = EmbeddingMode;
    static const std::vector<Variant> variants = {
        {"CEHR", R::cehr, E::concat_fc, true, true},
        {"M-BERT", R::medbert_style, E::concat_fc, true, true},
        {"B-BERT", R::behrt_style, E::concat_fc, true, true},
        {"NS-BERT", R::cehr, E::concat_fc, false, true},
        {"NT-BERT", R::cehr, E::none_positional, true, true},
        {"ALT-BERT", R::cehr, E::sum, true, true},
        {"V-BERT", R::no_vs_ve, E::concat_fc, true, true},
        {"R-BERT", R::cehr, E::concat_fc, true, false},
    };
    return variants;
}

std::optional<Variant> find_variant(std::string_view name) {
    for (const auto& v : ablation_variants())
        if (v.name == name) return v;
    return std::nullopt;
}

std::optional<Budget> find_budget(std::string_view name) {
    Budget b;
    b.name = std::string(name);
    if (name == "tiny") {
        b.model.n_layers = 1;
        b.model.n_heads = 2;
        b.model.d_model = 16;
        b.model.d_ff = 32;
        b.model.time2vec_dim = 4;
        b.model.context_window = 64;
        b.model.lstm_hidden = 8;
        b.pretrain.epochs = 1;
        b.pretrain.batch_size = 16;
        b.pretrain.initial_lr = 1e-3;
        b.finetune.max_epochs = 3;
        b.finetune.batch_size = 16;
        b.finetune.lr = 1e-3;
        b.synth_patients = 200;
    } else if (name == "small") {
        b.model.n_layers = 2;
        b.model.n_heads = 4;
        b.model.d_model = 64;
        b.model.d_ff = 256;
        b.model.time2vec_dim = 8;
        b.model.lstm_hidden = 32;
        b.pretrain.epochs = 3;
        b.pretrain.initial_lr = 1e-3;
        b.finetune.lr = 1e-3;
        b.synth_patients = 2000;
    } else if (name == "paper-doc") {
        // Library defaults are the documented full-size settings.
        b.synth_patients = 10000;
    } else {
        return std::nullopt;
    }
    return b;
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = mix(base);
    for (auto t : tags) h = mix(h ^ mix(t));
    return h;
}

std::vector<BinaryExample> prepare_examples(const EventStore& store, std::span<const LabeledExample> cohort,
                                            Representation representation, const Vocabulary& vocab,
                                            std::size_t context_window) {
    std::vector<BinaryExample> out;
    out.reserve(cohort.size());
    Rng unused(0);
    for (const auto& ex : cohort) {
        const auto& person = store.persons().at(ex.person_index);
        const auto seq = build_sequence(person, ex.feature_visits, representation, vocab);
        out.push_back({window(seq, context_window, WindowMode::finetune_pre_truncate, unused),
                       static_cast<double>(ex.label)});
    }
    return out;
}

std::vector<int> cohort_labels(std::span<const LabeledExample> cohort) {
    std::vector<int> y;
    y.reserve(cohort.size());
    for (const auto& ex : cohort) y.push_back(ex.label);
    return y;
}

// ---- experiments ------------------------------------------------------------

std::vector<MetricRow> run_experiment(const std::string& task, const std::string& model, std::span<const int> labels,
                                      const FoldPlan& plan, const FoldTrainer& trainer,
                                      const ExperimentOptions& options) {
    if (plan.folds.empty()) throw std::invalid_argument("run_experiment: empty fold plan");
    for (double f : options.fractions)
        if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("run_experiment: fraction outside (0, 1]");

    struct Job {
        std::size_t fraction_index, fold;
        std::vector<std::size_t> train;
    };
    std::vector<Job> jobs;
    std::vector<double> few_shot;
    for (double f : options.fractions)
        if (f < 1.0) few_shot.push_back(f);
    for (std::size_t k = 0; k < plan.folds.size(); ++k) {
        const auto subsets = few_shot.empty()
                                 ? std::map<double, std::vector<std::size_t>>{}
                                 : few_shot_plan(plan.folds[k], labels, few_shot,
                                                 derive_seed(options.seed, {0x5348, k}), options.nested_few_shot);
        for (std::size_t fi = 0; fi < options.fractions.size(); ++fi) {
            const double f = options.fractions[fi];
            jobs.push_back({fi, k, f < 1.0 ? subsets.at(f) : plan.folds[k].train});
        }
    }

    std::vector<MetricRow> rows(jobs.size());
    std::vector<std::exception_ptr> errors(jobs.size());
    auto run = [&](std::size_t j) {
        try {
            const auto& job = jobs[j];
            const Fold& fold = plan.folds[job.fold];
            const auto scores = trainer(job.train, fold, derive_seed(options.seed, {job.fold, job.fraction_index}));
            if (scores.size() != fold.test.size()) throw std::logic_error("trainer returned the wrong number of scores");
            std::vector<int> y;
            for (auto i : fold.test) y.push_back(labels[i]);
            rows[j] = {task, model, options.fractions[job.fraction_index], job.fold, roc_auc(scores, y), pr_auc(scores, y)};
        } catch (...) {
            errors[j] = std::current_exception();
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
    if (threads == 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) run(j);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t j = t; j < jobs.size(); j += threads) run(j);
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::stable_sort(rows.begin(), rows.end(), [&](const MetricRow& a, const MetricRow& b) {
        return a.fraction != b.fraction ? a.fraction < b.fraction : a.fold < b.fold;
    });
    return rows;
}

namespace {

template <class T>
std::vector<T> pick(std::span<const T> all, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(all[i]);
    return out;
}

}  // namespace

CehrModel copy_model(const CehrModel& source) {
    CehrModel out(source.config());
    for (const auto& [name, t] : source.params().items()) {
        auto dst = out.params().get(name).mutable_values();
        const auto src = t.values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
}

FoldTrainer cehr_trainer(const CehrModel& initial, std::span<const BinaryExample> examples,
                         const FinetuneOptions& options) {
    return [&initial, examples, options](const std::vector<std::size_t>& train, const Fold& fold, std::uint64_t seed) {
        CehrModel model = copy_model(initial);
        const auto tr = pick(examples, train), va = pick(examples, fold.val), te = pick(examples, fold.test);
        finetune(model, tr, va, options, seed);
        return predict_binary(model_logits(model), te, options.batch_size);
    };
}

FoldTrainer unpretrained_trainer(const ModelConfig& config, std::span<const BinaryExample> examples,
                                 const FinetuneOptions& options) {
    return [config, examples, options](const std::vector<std::size_t>& train, const Fold& fold, std::uint64_t seed) {
        ModelConfig c = config;
        c.seed = seed;
        CehrModel model(c);
        const auto tr = pick(examples, train), va = pick(examples, fold.val), te = pick(examples, fold.test);
        finetune(model, tr, va, options, seed);
        return predict_binary(model_logits(model), te, options.batch_size);
    };
}

FoldTrainer bilstm_trainer(const BiLstmConfig& config, std::span<const BinaryExample> examples,
                           const FinetuneOptions& options, std::function<void(BiLstmClassifier&)> init) {
    return [config, examples, options, init](const std::vector<std::size_t>& train, const Fold& fold,
                                             std::uint64_t seed) {
        BiLstmConfig c = config;
        c.seed = seed;
        BiLstmClassifier model(c);
        if (init) init(model);
        const auto tr = pick(examples, train), va = pick(examples, fold.val), te = pick(examples, fold.test);
        train_bilstm_classifier(model, tr, va, options, seed);
        return predict_binary(model.logit_fn(), te, options.batch_size);
    };
}

FoldTrainer logistic_trainer(std::vector<std::map<std::string, double>> features, std::vector<int> labels,
                             const LogisticOptions& options) {
    if (features.size() != labels.size()) throw std::invalid_argument("logistic_trainer: feature/label count mismatch");
    return [features = std::move(features), labels = std::move(labels), options](
               const std::vector<std::size_t>& train, const Fold& fold, std::uint64_t) {
        std::vector<std::map<std::string, double>> rows;
        for (auto i : train) rows.push_back(features[i]);
        const auto space = FeatureSpace::fit(rows);
        std::vector<std::vector<double>> x, xt;
        std::vector<int> y;
        for (auto i : train) {
            x.push_back(space.transform(features[i]));
            y.push_back(labels[i]);
        }
        const auto model = train_logistic(x, y, options);
        for (auto i : fold.test) xt.push_back(space.transform(features[i]));
        return predict_logistic(model, xt);
    };
}

// ---- ablation ---------------------------------------------------------------

ModelConfig variant_config(const Variant& variant, const Budget& budget, const Vocabulary& vocab, std::uint64_t seed) {
    ModelConfig c = budget.model;
    c.vocab_size = vocab.size();
    c.n_visit_types = vocab.n_visit_types();
    c.embedding_mode = variant.embedding_mode;
    c.vtp_enabled = variant.vtp_enabled;
    c.seed = seed;
    return c;
}

std::vector<MetricRow> ablation_matrix(const EventStore& store, const Vocabulary& vocab, std::span<const Task> tasks,
                                       const AblationOptions& options) {
    std::vector<Variant> selected;
    if (options.variants.empty()) {
        selected = ablation_variants();
    } else {
        for (const auto& v : ablation_variants())
            if (std::find(options.variants.begin(), options.variants.end(), v.name) != options.variants.end())
                selected.push_back(v);
        for (const auto& name : options.variants)
            if (!find_variant(name)) throw std::invalid_argument("unknown variant '" + name + "'");
    }
    auto log = [&](const std::string& m) {
        if (options.log) options.log(m);
    };

    // Splits depend only on labels and the seed, so every variant sees the same folds.
    std::vector<std::vector<int>> labels;
    std::vector<FoldPlan> plans;
    for (const auto& t : tasks) {
        labels.push_back(cohort_labels(t.cohort));
        plans.push_back(make_folds(labels.back(), options.seed));
    }

    std::vector<MetricRow> rows;
    for (std::size_t vi = 0; vi < selected.size(); ++vi) {
        const auto& v = selected[vi];
        const auto config = variant_config(v, options.budget, vocab, derive_seed(options.seed, {0x5641, vi}));
        CehrModel model(config);
        if (v.pretrained) {
            PretrainOptions po = options.budget.pretrain;
            po.representation = v.representation;
            log("pretraining " + v.name);
            pretrain(model, store, vocab, po, config.seed);
        }
        for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
            log("fine-tuning " + v.name + " on " + tasks[ti].name);
            const auto examples =
                prepare_examples(store, tasks[ti].cohort, v.representation, vocab, config.context_window);
            const auto trainer = v.pretrained ? cehr_trainer(model, examples, options.budget.finetune)
                                              : unpretrained_trainer(config, examples, options.budget.finetune);
            ExperimentOptions eo;
            eo.jobs = options.jobs;
            eo.seed = options.seed;
            const auto r = run_experiment(tasks[ti].name, v.name, labels[ti], plans[ti], trainer, eo);
            rows.insert(rows.end(), r.begin(), r.end());
        }
    }
    return rows;
}

// ---- reporting --------------------------------------------------------------

std::map<std::tuple<std::string, std::string, double>, Summary> summarize(std::span<const MetricRow> rows) {
    std::map<std::tuple<std::string, std::string, double>, std::pair<std::vector<double>, std::vector<double>>> groups;
    for (const auto& r : rows) {
        auto& g = groups[{r.task, r.model, r.fraction}];
        g.first.push_back(r.auc);
        g.second.push_back(r.pr_auc);
    }
    std::map<std::tuple<std::string, std::string, double>, Summary> out;
    for (const auto& [key, g] : groups) out[key] = {mean_std(g.first), mean_std(g.second), g.first.size()};
    return out;
}

std::string format_percent(const MeanStd& m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f±%.1f%%", 100.0 * m.mean, 100.0 * m.std);
    return buf;
}

namespace {

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

std::string fraction_label(double f) { return fmt("%g%%", 100.0 * f); }

}  // namespace

void write_metrics_csv(const std::string& path, std::span<const MetricRow> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot write");
    out << "task,model,fraction,fold,auc,pr_auc\n";
    for (const auto& r : rows) {
        out << r.task << ',' << r.model << ',' << fmt("%g", r.fraction) << ',' << r.fold << ','
            << fmt("%.10f", r.auc) << ',' << fmt("%.10f", r.pr_auc) << '\n';
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open");
    std::vector<MetricRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (lineno == 1) {
            if (line != "task,model,fraction,fold,auc,pr_auc") throw_row_error(path, 1, "unexpected header");
            continue;
        }
        if (f.size() != 6) throw_row_error(path, lineno, "expected 6 fields");
        try {
            rows.push_back({std::string(f[0]), std::string(f[1]), std::stod(std::string(f[2])),
                            static_cast<std::size_t>(std::stoul(std::string(f[3]))), std::stod(std::string(f[4])),
                            std::stod(std::string(f[5]))});
        } catch (const std::exception&) {
            throw_row_error(path, lineno, "bad number");
        }
    }
    return rows;
}

std::string render_report(std::span<const MetricRow> rows, const ReportOptions& options) {
    const auto summary = summarize(rows);
    std::vector<std::string> models = options.models, tasks = options.tasks;
    std::set<double> fractions;
    for (const auto& r : rows) {
        if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
        if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
        fractions.insert(r.fraction);
    }
    std::set<std::string> present;
    for (const auto& r : rows) present.insert(r.model);

    auto cell = [&](const std::string& task, const std::string& model, double f, bool pr) -> std::string {
        if (!present.count(model)) return "absent";
        const auto it = summary.find({task, model, f});
        if (it == summary.end()) return "n/a";
        return format_percent(pr ? it->second.pr_auc : it->second.auc);
    };

    std::ostringstream md;
    md << "# " << options.title << "\n";
    for (double f : fractions) {
        for (bool pr : {false, true}) {
            md << "\n## " << (pr ? "PR-AUC" : "ROC-AUC") << ", " << fraction_label(f) << " of training data\n\n";
            md << "| Model |";
            for (const auto& t : tasks) md << ' ' << t << " |";
            md << "\n|---|";
            for (std::size_t i = 0; i < tasks.size(); ++i) md << "---|";
            md << '\n';
            for (const auto& m : models) {
                md << "| " << m << " |";
                for (const auto& t : tasks) md << ' ' << cell(t, m, f, pr) << " |";
                md << '\n';
            }
        }
    }
    if (fractions.size() > 1) {
        for (const auto& t : tasks) {
            md << "\n## Few-shot ROC-AUC, " << t << "\n\n| Model |";
            for (double f : fractions) md << ' ' << fraction_label(f) << " |";
            md << "\n|---|";
            for (std::size_t i = 0; i < fractions.size(); ++i) md << "---|";
            md << '\n';
            for (const auto& m : models) {
                md << "| " << m << " |";
                for (double f : fractions) md << ' ' << cell(t, m, f, false) << " |";
                md << '\n';
            }
        }
    }
    md << "\nMean±std over " << (rows.empty() ? 0 : summary.begin()->second.folds) << " folds.\n";
    return md.str();
}

// ---- sequence lengths and ATT embeddings ------------------------------------

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile: no values");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile: q outside [0,1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<LengthRow> sequence_length_report(const EventStore& store, std::span<const Task> tasks,
                                              std::span<const Representation> variants, const Vocabulary& vocab) {
    std::vector<LengthRow> out;
    for (const auto& t : tasks) {
        for (auto v : variants) {
            std::vector<double> lengths;
            for (const auto& ex : t.cohort)
                lengths.push_back(static_cast<double>(
                    build_sequence(store.persons().at(ex.person_index), ex.feature_visits, v, vocab).size()));
            if (lengths.empty()) continue;
            out.push_back({t.name, std::string(to_string(v)), lengths.size(), percentile(lengths, 0.5),
                           percentile(lengths, 0.95)});
        }
    }
    return out;
}

void write_lengths_csv(const std::string& path, std::span<const LengthRow> rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot write");
    out << "task,variant,patients,median,p95\n";
    for (const auto& r : rows)
        out << r.task << ',' << r.variant << ',' << r.patients << ',' << fmt("%g", r.median) << ','
            << fmt("%g", r.p95) << '\n';
}

std::vector<AttPoint> att_pca(const CehrModel& model, const Vocabulary& vocab) {
    const auto& table = model.params().get("emb.concept");
    const std::size_t d = table.dim(1);
    std::vector<double> rows;
    std::vector<std::string> tokens;
    for (std::int32_t id = Vocabulary::kFirstAtt; id <= Vocabulary::kLt; ++id) {
        const auto v = table.values().subspan(static_cast<std::size_t>(id) * d, d);
        rows.insert(rows.end(), v.begin(), v.end());
        tokens.push_back(vocab.token(id));
    }
    const auto pca = pca_2d(rows, tokens.size(), d);
    std::vector<AttPoint> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) out.push_back({tokens[i], pca.coords[2 * i], pca.coords[2 * i + 1]});
    return out;
}

void write_att_pca_csv(const std::string& path, std::span<const AttPoint> points) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot write");
    out << "token,x,y\n";
    for (const auto& p : points) out << p.token << ',' << fmt("%.10g", p.x) << ',' << fmt("%.10g", p.y) << '\n';
}

}  // namespace cehr
