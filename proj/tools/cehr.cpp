// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cehr/config_error.hpp"
#include "cehr/csv.hpp"
#include "cehr/harness.hpp"
#include "cehr/run_config.hpp"
#include "cehr/synth.hpp"
#include "cehr/weights_io.hpp"

namespace fs = std::filesystem;
using namespace cehr;

namespace {

/// A referenced input that does not exist; exit code 2.
struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Flags {
    std::string config;
    std::string out = RunConfig{}.out;
    std::uint64_t seed = RunConfig{}.seed;
    std::size_t jobs = 1;
    std::string budget = RunConfig{}.budget;
    std::string data;
    std::string variant = RunConfig{}.variant;
    double fraction = 1.0;
    std::string task;
    std::string tasks;
    std::string checkpoint;
};

struct Command {
    CLI::App* app = nullptr;
    std::map<std::string, CLI::Option*> options;
    bool given(const std::string& name) const {
        const auto it = options.find(name);
        return it != options.end() && it->second->count() > 0;
    }
};

void log(const std::string& msg) { std::cerr << "[cehr] " << msg << '\n'; }

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

RunConfig resolve(const Command& cmd, const Flags& f) {
    RunOverrides o;
    if (cmd.given("--out")) o.out = f.out;
    if (cmd.given("--seed")) o.seed = f.seed;
    if (cmd.given("--jobs")) o.jobs = f.jobs;
    if (cmd.given("--budget")) o.budget = f.budget;
    if (cmd.given("--data")) o.data = f.data;
    if (cmd.given("--variant")) o.variant = f.variant;
    if (cmd.given("--fraction")) o.fraction = f.fraction;
    if (cmd.given("--checkpoint")) o.checkpoint = f.checkpoint;
    if (cmd.given("--tasks")) o.tasks = split_list(f.tasks);
    if (cmd.given("--task")) o.task = f.task;
    if (cmd.given("--config") && !fs::exists(f.config)) throw MissingInput("config file not found: " + f.config);
    auto cfg = resolve_run_config(f.config, o);
    fs::create_directories(cfg.out);
    std::ofstream(fs::path(cfg.out) / "resolved_config.toml", std::ios::binary) << to_toml(cfg);
    return cfg;
}

EventStore load_data(const RunConfig& cfg) {
    if (cfg.data.empty()) throw MissingInput("no data directory given (use --data or set data in the config)");
    for (const char* name : {"persons.csv", "visits.csv", "events.csv"}) {
        const auto p = fs::path(cfg.data) / name;
        if (!fs::exists(p)) throw MissingInput("data file not found: " + p.string());
    }
    return load_store_dir(cfg.data);
}

std::string require_checkpoint(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw MissingInput("no checkpoint given (use --checkpoint or set checkpoint in the config)");
    if (!fs::exists(cfg.checkpoint)) throw MissingInput("checkpoint not found: " + cfg.checkpoint);
    if (!fs::exists(cfg.checkpoint + ".json")) throw MissingInput("checkpoint config not found: " + cfg.checkpoint + ".json");
    return cfg.checkpoint;
}

fs::path checkpoint_dir(const std::string& checkpoint) {
    const auto parent = fs::path(checkpoint).parent_path();
    return parent.empty() ? fs::path(".") : parent;
}

Vocabulary checkpoint_vocab(const std::string& checkpoint) {
    const auto dir = checkpoint_dir(checkpoint);
    for (const char* name : {"vocab.csv", "visit_types.csv"})
        if (!fs::exists(dir / name)) throw MissingInput("vocabulary file not found: " + (dir / name).string());
    return Vocabulary::load((dir / "vocab.csv").string(), (dir / "visit_types.csv").string());
}

/// The variant a checkpoint was pretrained as; an explicit --variant must agree.
Variant checkpoint_variant(const std::string& checkpoint, const RunConfig& cfg, bool explicit_variant) {
    const auto path = checkpoint_dir(checkpoint) / "variant.txt";
    if (!fs::exists(path)) return *find_variant(cfg.variant);
    std::string name;
    std::ifstream(path) >> name;
    const auto v = find_variant(name);
    if (!v) throw ConfigError(path.string(), {"unknown variant '" + name + "'"});
    if (explicit_variant && name != cfg.variant)
        throw ConfigError("variant", {"checkpoint was pretrained as " + name + ", not " + cfg.variant});
    return *v;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path.string() + ": cannot write");
    out << text;
}

// ---- subcommands --------------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
    const auto store = generate_synthetic(cfg.synth, cfg.seed);
    write_store(store, cfg.out);
    write_hierarchy((fs::path(cfg.out) / "hierarchy.csv").string(), synthetic_hierarchy(cfg.synth));
    std::cout << "wrote " << store.persons().size() << " persons, " << store.visits().size() << " visits, "
              << store.events().size() << " events to " << cfg.out << '\n';
}

void cmd_stats(const RunConfig& cfg) {
    const auto store = load_data(cfg);
    std::ostringstream text;
    text << format_summary(summary_stats(store));
    for (const auto& t : load_tasks(store, cfg, cfg.tasks)) {
        std::size_t pos = 0;
        for (const auto& e : t.cohort) pos += e.label;
        text << "cohort " << t.name << ": " << t.cohort.size() << " patients, " << pos << " positive\n";
    }
    write_text(fs::path(cfg.out) / "stats.txt", text.str());
    std::cout << text.str();
}

void cmd_pretrain(const RunConfig& cfg) {
    const auto store = load_data(cfg);
    const auto vocab = Vocabulary::from_store(store);
    const auto variant = *find_variant(cfg.variant);
    const fs::path out(cfg.out);
    vocab.save((out / "vocab.csv").string(), (out / "visit_types.csv").string());
    write_text(out / "variant.txt", variant.name + "\n");
    CehrModel model(variant_config(variant, cfg.as_budget(), vocab, cfg.seed));
    if (variant.pretrained) {
        PretrainOptions po = cfg.pretrain;
        po.representation = variant.representation;
        po.checkpoint_dir = (out / "checkpoints").string();
        std::size_t last_epoch = 0;
        po.on_step = [&](const LossRecord& r) {
            if (r.epoch != last_epoch) log("pretrain epoch " + std::to_string(last_epoch = r.epoch));
        };
        const auto result = pretrain(model, store, vocab, po, cfg.seed);
        write_loss_trace((out / "loss_trace.csv").string(), result.trace);
        std::cout << "pretrained " << variant.name << " on " << result.n_patients << " patients, "
                  << result.trace.size() << " steps\n";
    } else {
        std::cout << variant.name << " is not pretrained; wrote initial weights\n";
    }
    save_checkpoint(model, (out / "model.cehrw").string());
}

struct Loaded {
    EventStore store;
    Vocabulary vocab;
    Variant variant;
    CehrModel model;
};

Loaded load_for_eval(const RunConfig& cfg, bool explicit_variant) {
    const auto ckpt = require_checkpoint(cfg);
    auto vocab = checkpoint_vocab(ckpt);
    auto variant = checkpoint_variant(ckpt, cfg, explicit_variant);
    auto store = load_data(cfg);
    auto model = load_checkpoint(ckpt);
    if (model.config().vocab_size != vocab.size())
        throw ConfigError(ckpt, {"checkpoint vocabulary size does not match " + (checkpoint_dir(ckpt) / "vocab.csv").string()});
    return {std::move(store), std::move(vocab), std::move(variant), std::move(model)};
}

void cmd_finetune(const RunConfig& cfg, bool explicit_variant) {
    const auto l = load_for_eval(cfg, explicit_variant);
    const auto tasks = load_tasks(l.store, cfg, {cfg.tasks.front()});
    const auto& task = tasks.front();
    const auto labels = cohort_labels(task.cohort);
    const auto plan = make_folds(labels, cfg.seed);
    const Fold& fold = plan.folds.front();
    std::vector<std::size_t> train = fold.train;
    if (cfg.fraction < 1.0) {
        const std::vector<double> f{cfg.fraction};
        train = few_shot_plan(fold, labels, f, derive_seed(cfg.seed, {0x5348, 0}), cfg.nested_few_shot).at(cfg.fraction);
    }
    const auto examples = prepare_examples(l.store, task.cohort, l.variant.representation, l.vocab,
                                           l.model.config().context_window);
    auto pick = [&](const std::vector<std::size_t>& idx) {
        std::vector<BinaryExample> out;
        for (auto i : idx) out.push_back(examples[i]);
        return out;
    };
    CehrModel model = copy_model(l.model);
    const auto result = finetune(model, pick(train), pick(fold.val), cfg.finetune, derive_seed(cfg.seed, {0, 0}));
    const fs::path out(cfg.out);
    save_checkpoint(model, (out / "finetuned.cehrw").string());
    {
        std::ofstream log_csv(out / "finetune_log.csv", std::ios::binary);
        log_csv << "epoch,train_loss,val_loss\n";
        for (std::size_t e = 0; e < result.train_loss.size(); ++e)
            log_csv << e + 1 << ',' << result.train_loss[e] << ',' << result.val_loss[e] << '\n';
    }
    const auto test = pick(fold.test);
    const auto scores = predict_binary(model_logits(model), test, cfg.finetune.batch_size);
    std::ofstream pred(out / "predictions.csv", std::ios::binary);
    pred << "person_id,label,score\n";
    pred.precision(10);
    for (std::size_t i = 0; i < test.size(); ++i)
        pred << task.cohort[fold.test[i]].person_id << ',' << labels[fold.test[i]] << ',' << scores[i] << '\n';
    std::vector<int> y;
    for (auto i : fold.test) y.push_back(labels[i]);
    std::cout << "fine-tuned on " << train.size() << " examples, " << result.epochs_run << " epochs (best "
              << result.best_epoch << "), fold-0 test AUC " << roc_auc(scores, y) << '\n';
}

std::vector<MetricRow> evaluate_tasks(const RunConfig& cfg, const Loaded& l, const std::vector<Task>& tasks,
                                      const std::vector<double>& fractions, bool baselines) {
    std::vector<MetricRow> rows;
    ExperimentOptions eo;
    eo.fractions = fractions;
    eo.nested_few_shot = cfg.nested_few_shot;
    eo.jobs = cfg.jobs;
    eo.seed = cfg.seed;
    HierarchyMap hierarchy;
    if (baselines) {
        const auto hpath = fs::path(cfg.data) / "hierarchy.csv";
        if (fs::exists(hpath)) hierarchy = load_hierarchy(hpath.string());
    }
    for (const auto& task : tasks) {
        const auto labels = cohort_labels(task.cohort);
        const auto plan = make_folds(labels, cfg.seed);
        log("evaluating " + l.variant.name + " on " + task.name);
        const auto examples = prepare_examples(l.store, task.cohort, l.variant.representation, l.vocab,
                                               l.model.config().context_window);
        auto r = run_experiment(task.name, l.variant.name, labels, plan, cehr_trainer(l.model, examples, cfg.finetune), eo);
        rows.insert(rows.end(), r.begin(), r.end());
        if (!baselines) continue;

        log("evaluating LR on " + task.name);
        std::vector<std::map<std::string, double>> features;
        for (const auto& e : task.cohort) features.push_back(rollup_counts(e, hierarchy));
        LogisticOptions lo;
        lo.l2 = cfg.logistic_l2;
        r = run_experiment(task.name, "LR", labels, plan, logistic_trainer(features, labels, lo), eo);
        rows.insert(rows.end(), r.begin(), r.end());

        log("evaluating Bi-LSTM on " + task.name);
        const auto seqs = prepare_examples(l.store, task.cohort, Representation::medbert_style, l.vocab,
                                           l.model.config().context_window);
        BiLstmConfig bc{l.vocab.size(), l.model.config().d_model, cfg.model.lstm_hidden, 0};
        std::function<void(BiLstmClassifier&)> init;
        if (!cfg.embeddings.empty()) {
            if (!fs::exists(cfg.embeddings)) throw MissingInput("embedding file not found: " + cfg.embeddings);
            init = [&](BiLstmClassifier& m) { m.load_embeddings_csv(cfg.embeddings, l.vocab); };
        }
        r = run_experiment(task.name, "Bi-LSTM", labels, plan, bilstm_trainer(bc, seqs, cfg.finetune, init), eo);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    return rows;
}

void write_results(const RunConfig& cfg, const std::vector<MetricRow>& rows, ReportOptions report) {
    const fs::path out(cfg.out);
    write_metrics_csv((out / "metrics.csv").string(), rows);
    write_text(out / "report.md", render_report(rows, report));
    std::cout << "wrote " << rows.size() << " metric rows to " << (out / "metrics.csv").string() << '\n';
}

void cmd_evaluate(const RunConfig& cfg, bool explicit_variant) {
    const auto l = load_for_eval(cfg, explicit_variant);
    const auto tasks = load_tasks(l.store, cfg, cfg.tasks);
    const auto rows = evaluate_tasks(cfg, l, tasks, {cfg.fraction}, cfg.baselines);
    ReportOptions r;
    r.title = "Disease prediction";
    r.models = {l.variant.name};
    if (cfg.baselines) r.models.insert(r.models.end(), {"LR", "XGBoost", "Bi-LSTM"});
    r.tasks = cfg.tasks;
    write_results(cfg, rows, r);
}

void cmd_fewshot(const RunConfig& cfg, bool explicit_variant) {
    const auto l = load_for_eval(cfg, explicit_variant);
    const auto tasks = load_tasks(l.store, cfg, cfg.tasks);
    const auto rows = evaluate_tasks(cfg, l, tasks, cfg.fractions, cfg.baselines);
    ReportOptions r;
    r.title = "Few-shot";
    r.models = {l.variant.name};
    if (cfg.baselines) r.models.insert(r.models.end(), {"LR", "XGBoost", "Bi-LSTM"});
    r.tasks = cfg.tasks;
    write_results(cfg, rows, r);
}

void cmd_ablate(const RunConfig& cfg) {
    const auto store = load_data(cfg);
    const auto vocab = Vocabulary::from_store(store);
    const auto tasks = load_tasks(store, cfg, cfg.tasks);
    AblationOptions o;
    o.budget = cfg.as_budget();
    o.seed = cfg.seed;
    o.jobs = cfg.jobs;
    o.log = log;
    const auto rows = ablation_matrix(store, vocab, tasks, o);
    ReportOptions r;
    r.title = "Ablation";
    for (const auto& v : ablation_variants()) r.models.push_back(v.name);
    r.tasks = cfg.tasks;
    write_results(cfg, rows, r);
}

void cmd_viz_att(const RunConfig& cfg) {
    const auto ckpt = require_checkpoint(cfg);
    const auto vocab = checkpoint_vocab(ckpt);
    const auto points = att_pca(load_checkpoint(ckpt), vocab);
    const auto path = (fs::path(cfg.out) / "att_pca.csv").string();
    write_att_pca_csv(path, points);
    std::cout << "wrote " << points.size() << " points to " << path << '\n';
}

void cmd_lengths(const RunConfig& cfg) {
    const auto store = load_data(cfg);
    const auto vocab = Vocabulary::from_store(store);
    const auto tasks = load_tasks(store, cfg, cfg.tasks);
    const auto rows = sequence_length_report(store, tasks, kAllRepresentations, vocab);
    const auto path = (fs::path(cfg.out) / "lengths.csv").string();
    write_lengths_csv(path, rows);
    for (const auto& r : rows)
        std::cout << r.task << ' ' << r.variant << " median " << r.median << " p95 " << r.p95 << '\n';
}

void cmd_params(const RunConfig& cfg) {
    ModelConfig mc;
    if (!cfg.checkpoint.empty()) {
        require_checkpoint(cfg);
        mc = load_checkpoint(cfg.checkpoint).config();
    } else {
        const auto vocab = Vocabulary::from_store(load_data(cfg));
        mc = variant_config(*find_variant(cfg.variant), cfg.as_budget(), vocab, cfg.seed);
    }
    if (const auto errors = mc.validate(); !errors.empty()) throw ConfigError("model", errors);
    std::ofstream out(fs::path(cfg.out) / "params.csv", std::ios::binary);
    out << "name,shape,count\n";
    for (const auto& [name, shape] : parameter_shapes(mc)) {
        std::string dims;
        for (auto d : shape) dims += (dims.empty() ? "" : "x") + std::to_string(d);
        out << name << ',' << dims << ',' << shape_numel(shape) << '\n';
    }
    std::cout << "parameters: " << parameter_count(mc) << '\n';
}

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EHR sequence representation learning: synthetic data, pretraining, evaluation"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");
    Flags f;

    struct Spec {
        const char* name;
        const char* help;
        std::vector<std::string> extra;
    };
    const std::vector<Spec> specs = {
        {"synth", "Generate a synthetic event store", {}},
        {"stats", "Summary statistics and cohort sizes of a store", {"--data", "--task", "--tasks"}},
        {"pretrain", "Pretrain a variant with MLM (+ VTP)", {"--data", "--variant"}},
        {"finetune", "Fine-tune a checkpoint on fold 0 of a task", {"--data", "--variant", "--fraction", "--task", "--checkpoint"}},
        {"evaluate", "4-fold evaluation of a checkpoint and the baselines",
         {"--data", "--variant", "--fraction", "--task", "--tasks", "--checkpoint"}},
        {"fewshot", "Few-shot sweep over training fractions", {"--data", "--variant", "--task", "--tasks", "--checkpoint"}},
        {"ablate", "Pretrain and evaluate every ablation variant", {"--data", "--task", "--tasks"}},
        {"viz-att", "PCA of the artificial time token embeddings", {"--checkpoint"}},
        {"lengths", "Median and 95th percentile sequence lengths per variant", {"--data", "--task", "--tasks"}},
        {"params", "Parameter shapes and count of a model config", {"--data", "--variant", "--checkpoint"}},
    };
    std::map<std::string, Command> commands;
    for (const auto& s : specs) {
        Command c;
        c.app = app.add_subcommand(s.name, s.help);
        auto add = [&](const std::string& name, auto& var, const std::string& help) {
            c.options[name] = c.app->add_option(name, var, help)->capture_default_str();
        };
        add("--config", f.config, "TOML run configuration");
        add("--out", f.out, "Output directory");
        add("--seed", f.seed, "Master seed");
        add("--jobs", f.jobs, "Parallel fold jobs");
        add("--budget", f.budget, "Preset: tiny, small or paper-doc");
        c.options["--budget"]->check(CLI::IsMember({"tiny", "small", "paper-doc"}));
        for (const auto& e : s.extra) {
            if (e == "--data") add(e, f.data, "Directory with persons.csv, visits.csv, events.csv");
            if (e == "--variant") add(e, f.variant, "Ablation variant (CEHR, M-BERT, B-BERT, NS-BERT, NT-BERT, ALT-BERT, V-BERT, R-BERT)");
            if (e == "--fraction") add(e, f.fraction, "Share of the training split to fine-tune on");
            if (e == "--task") add(e, f.task, "Single task (cohort definition name)");
            if (e == "--tasks") add(e, f.tasks, "Comma-separated tasks (default from config: gap_signal)");
            if (e == "--checkpoint") add(e, f.checkpoint, "Pretrained weights (.cehrw)");
        }
        commands[s.name] = c;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        for (const auto& [name, cmd] : commands) {
            if (!cmd.app->parsed()) continue;
            const auto cfg = resolve(cmd, f);
            const bool explicit_variant = cmd.given("--variant");
            if (name == "synth") cmd_synth(cfg);
            else if (name == "stats") cmd_stats(cfg);
            else if (name == "pretrain") cmd_pretrain(cfg);
            else if (name == "finetune") cmd_finetune(cfg, explicit_variant);
            else if (name == "evaluate") cmd_evaluate(cfg, explicit_variant);
            else if (name == "fewshot") cmd_fewshot(cfg, explicit_variant);
            else if (name == "ablate") cmd_ablate(cfg);
            else if (name == "viz-att") cmd_viz_att(cfg);
            else if (name == "lengths") cmd_lengths(cfg);
            else if (name == "params") cmd_params(cfg);
        }
    } catch (const MissingInput& e) {
        std::cerr << "error: missing-input: " << one_line(e.what()) << '\n';
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << one_line(e.what()) << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << one_line(e.what()) << '\n';
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: invalid: " << one_line(e.what()) << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}
