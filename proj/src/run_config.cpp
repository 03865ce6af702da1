#include "cehr/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "cehr/config_error.hpp"
#include "toml_reader.hpp"

#ifndef CEHR_CONFIG_DIR
#define CEHR_CONFIG_DIR "configs"
#endif

namespace cehr {

namespace {

using detail::TomlReader;

// One entry per configurable key; the same table drives parsing and output.
struct Field {
    std::string section;  // empty for top-level keys
    std::string key;
    std::function<void(TomlReader&, const toml::table&, const std::string&, RunConfig&)> read;
    std::function<void(toml::table&, const RunConfig&)> write;
};

template <class Acc>
Field size_field(std::string section, std::string key, Acc acc) {
    return {section, key,
            [key, acc](TomlReader& r, const toml::table& t, const std::string& where, RunConfig& c) {
                auto& v = acc(c);
                const auto got = r.get_int(t, where, key.c_str(), static_cast<std::int64_t>(v));
                if (got < 0) r.errors.push_back("'" + (where.empty() ? key : where + "." + key) + "' must be >= 0");
                else v = static_cast<std::size_t>(got);
            },
            [key, acc](toml::table& t, const RunConfig& c) {
                t.insert_or_assign(key, static_cast<std::int64_t>(acc(const_cast<RunConfig&>(c))));
            }};
}

template <class Acc>
Field int_field(std::string section, std::string key, Acc acc) {
    return {section, key,
            [key, acc](TomlReader& r, const toml::table& t, const std::string& where, RunConfig& c) {
                auto& v = acc(c);
                v = static_cast<int>(r.get_int(t, where, key.c_str(), v));
            },
            [key, acc](toml::table& t, const RunConfig& c) {
                t.insert_or_assign(key, static_cast<std::int64_t>(acc(const_cast<RunConfig&>(c))));
            }};
}

template <class Acc>
Field double_field(std::string section, std::string key, Acc acc) {
    return {section, key,
            [key, acc](TomlReader& r, const toml::table& t, const std::string& where, RunConfig& c) {
                auto& v = acc(c);
                v = r.get_double(t, where, key.c_str(), v);
            },
            [key, acc](toml::table& t, const RunConfig& c) { t.insert_or_assign(key, acc(const_cast<RunConfig&>(c))); }};
}

template <class Acc>
Field bool_field(std::string section, std::string key, Acc acc) {
    return {section, key,
            [key, acc](TomlReader& r, const toml::table& t, const std::string& where, RunConfig& c) {
                auto& v = acc(c);
                v = r.get_bool(t, where, key.c_str(), v);
            },
            [key, acc](toml::table& t, const RunConfig& c) { t.insert_or_assign(key, acc(const_cast<RunConfig&>(c))); }};
}

template <class Acc>
Field string_field(std::string section, std::string key, Acc acc) {
    return {section, key,
            [key, acc](TomlReader& r, const toml::table& t, const std::string& where, RunConfig& c) {
                auto& v = acc(c);
                v = r.get_string(t, where, key.c_str(), v);
            },
            [key, acc](toml::table& t, const RunConfig& c) { t.insert_or_assign(key, acc(const_cast<RunConfig&>(c))); }};
}

#define CEHR_ACC(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"", "seed",
                     [](TomlReader& r, const toml::table& t, const std::string& w, RunConfig& c) {
                         const auto v = r.get_int(t, w, "seed", static_cast<std::int64_t>(c.seed));
                         if (v < 0) r.errors.push_back("'seed' must be >= 0");
                         else c.seed = static_cast<std::uint64_t>(v);
                     },
                     [](toml::table& t, const RunConfig& c) { t.insert_or_assign("seed", static_cast<std::int64_t>(c.seed)); }});
        f.push_back(string_field("", "out", CEHR_ACC(c.out)));
        f.push_back(string_field("", "budget", CEHR_ACC(c.budget)));
        f.push_back(size_field("", "jobs", CEHR_ACC(c.jobs)));
        f.push_back(string_field("", "data", CEHR_ACC(c.data)));
        f.push_back(string_field("", "checkpoint", CEHR_ACC(c.checkpoint)));
        f.push_back(string_field("", "variant", CEHR_ACC(c.variant)));
        f.push_back({"", "tasks",
                     [](TomlReader& r, const toml::table& t, const std::string& w, RunConfig& c) {
                         c.tasks = r.get_string_list(t, w, "tasks", c.tasks);
                     },
                     [](toml::table& t, const RunConfig& c) {
                         toml::array a;
                         for (const auto& s : c.tasks) a.push_back(s);
                         t.insert_or_assign("tasks", std::move(a));
                     }});
        f.push_back(double_field("", "fraction", CEHR_ACC(c.fraction)));
        f.push_back({"", "fractions",
                     [](TomlReader& r, const toml::table& t, const std::string& w, RunConfig& c) {
                         c.fractions = r.get_double_list(t, w, "fractions", c.fractions);
                     },
                     [](toml::table& t, const RunConfig& c) {
                         toml::array a;
                         for (double v : c.fractions) a.push_back(v);
                         t.insert_or_assign("fractions", std::move(a));
                     }});

        f.push_back(string_field("harness", "cohorts_dir", CEHR_ACC(c.cohorts_dir)));
        f.push_back(bool_field("harness", "nested_few_shot", CEHR_ACC(c.nested_few_shot)));
        f.push_back(bool_field("harness", "baselines", CEHR_ACC(c.baselines)));
        f.push_back(double_field("harness", "logistic_l2", CEHR_ACC(c.logistic_l2)));
        f.push_back(string_field("harness", "embeddings", CEHR_ACC(c.embeddings)));
        f.push_back({"harness", "observation_days",
                     [](TomlReader& r, const toml::table& t, const std::string& w, RunConfig& c) {
                         const auto* node = t.get("observation_days");
                         if (!node) return;
                         if (const auto* s = node->as_string(); s && s->get() == "task") {
                             c.observation_days.reset();
                         } else if (const auto* i = node->as_integer(); i && i->get() >= 0) {
                             c.observation_days = static_cast<int>(i->get());
                         } else {
                             r.errors.push_back("'" + w + ".observation_days' must be a non-negative integer or \"task\"");
                         }
                     },
                     [](toml::table& t, const RunConfig& c) {
                         if (c.observation_days) t.insert_or_assign("observation_days", static_cast<std::int64_t>(*c.observation_days));
                         else t.insert_or_assign("observation_days", "task");
                     }});

        f.push_back(size_field("synth", "n_patients", CEHR_ACC(c.synth.n_patients)));
        f.push_back(double_field("synth", "mean_visits", CEHR_ACC(c.synth.mean_visits)));
        f.push_back(size_field("synth", "max_visits", CEHR_ACC(c.synth.max_visits)));
        f.push_back(double_field("synth", "mean_concepts_per_visit", CEHR_ACC(c.synth.mean_concepts_per_visit)));
        f.push_back(size_field("synth", "n_conditions", CEHR_ACC(c.synth.n_conditions)));
        f.push_back(size_field("synth", "n_procedures", CEHR_ACC(c.synth.n_procedures)));
        f.push_back(size_field("synth", "n_medications", CEHR_ACC(c.synth.n_medications)));
        f.push_back(double_field("synth", "zipf_exponent", CEHR_ACC(c.synth.zipf_exponent)));
        f.push_back({"synth", "visit_type_mix",
                     [](TomlReader& r, const toml::table& t, const std::string& w, RunConfig& c) {
                         const auto* node = t.get("visit_type_mix");
                         if (!node) return;
                         const auto* arr = node->as_array();
                         std::vector<std::pair<std::string, double>> mix;
                         bool ok = arr != nullptr;
                         if (arr) {
                             for (const auto& item : *arr) {
                                 const auto* pair = item.as_array();
                                 if (!pair || pair->size() != 2 || !(*pair)[0].as_string()) {
                                     ok = false;
                                     break;
                                 }
                                 const auto& wnode = (*pair)[1];
                                 double weight;
                                 if (const auto* d = wnode.as_floating_point()) weight = d->get();
                                 else if (const auto* i = wnode.as_integer()) weight = static_cast<double>(i->get());
                                 else {
                                     ok = false;
                                     break;
                                 }
                                 mix.emplace_back((*pair)[0].as_string()->get(), weight);
                             }
                         }
                         if (!ok) r.errors.push_back("'" + w + ".visit_type_mix' must be an array of [name, weight] pairs");
                         else c.synth.visit_type_mix = std::move(mix);
                     },
                     [](toml::table& t, const RunConfig& c) {
                         toml::array a;
                         for (const auto& [name, weight] : c.synth.visit_type_mix) {
                             toml::array pair;
                             pair.push_back(name);
                             pair.push_back(weight);
                             a.push_back(std::move(pair));
                         }
                         t.insert_or_assign("visit_type_mix", std::move(a));
                     }});
        f.push_back(int_field("synth", "first_year", CEHR_ACC(c.synth.first_year)));
        f.push_back(int_field("synth", "last_year", CEHR_ACC(c.synth.last_year)));
        f.push_back(int_field("synth", "min_age_years", CEHR_ACC(c.synth.min_age_years)));
        f.push_back(int_field("synth", "max_age_years", CEHR_ACC(c.synth.max_age_years)));
        f.push_back(double_field("synth", "p_long_after_long", CEHR_ACC(c.synth.p_long_after_long)));
        f.push_back(double_field("synth", "p_long_after_short", CEHR_ACC(c.synth.p_long_after_short)));
        f.push_back(int_field("synth", "long_gap_min_days", CEHR_ACC(c.synth.long_gap_min_days)));
        f.push_back(int_field("synth", "long_gap_max_days", CEHR_ACC(c.synth.long_gap_max_days)));
        f.push_back(double_field("synth", "short_gap_mean_days", CEHR_ACC(c.synth.short_gap_mean_days)));
        f.push_back(bool_field("synth", "gap_signal", CEHR_ACC(c.synth.gap_signal)));
        f.push_back(double_field("synth", "p_gap", CEHR_ACC(c.synth.p_gap)));
        f.push_back(size_field("synth", "n_gap_concepts", CEHR_ACC(c.synth.n_gap_concepts)));
        f.push_back(bool_field("synth", "seasonal_signal", CEHR_ACC(c.synth.seasonal_signal)));
        f.push_back({"synth", "seasonal_months",
                     [](TomlReader& r, const toml::table& t, const std::string& w, RunConfig& c) {
                         const auto* node = t.get("seasonal_months");
                         if (!node) return;
                         std::vector<unsigned> months;
                         const auto* arr = node->as_array();
                         bool ok = arr != nullptr;
                         if (arr)
                             for (const auto& item : *arr) {
                                 const auto* i = item.as_integer();
                                 if (!i || i->get() < 0) ok = false;
                                 else months.push_back(static_cast<unsigned>(i->get()));
                             }
                         if (!ok) r.errors.push_back("'" + w + ".seasonal_months' must be an array of month numbers");
                         else c.synth.seasonal_months = std::move(months);
                     },
                     [](toml::table& t, const RunConfig& c) {
                         toml::array a;
                         for (unsigned m : c.synth.seasonal_months) a.push_back(static_cast<std::int64_t>(m));
                         t.insert_or_assign("seasonal_months", std::move(a));
                     }});
        f.push_back(double_field("synth", "p_seasonal", CEHR_ACC(c.synth.p_seasonal)));
        f.push_back(size_field("synth", "n_seasonal_concepts", CEHR_ACC(c.synth.n_seasonal_concepts)));
        f.push_back(bool_field("synth", "visit_type_signal", CEHR_ACC(c.synth.visit_type_signal)));
        f.push_back(bool_field("synth", "storyline", CEHR_ACC(c.synth.storyline)));
        f.push_back(double_field("synth", "p_t2dm", CEHR_ACC(c.synth.p_t2dm)));
        f.push_back(double_field("synth", "hf_hazard_t2dm", CEHR_ACC(c.synth.hf_hazard_t2dm)));
        f.push_back(double_field("synth", "hf_hazard_base", CEHR_ACC(c.synth.hf_hazard_base)));
        f.push_back(double_field("synth", "p_death_given_hf", CEHR_ACC(c.synth.p_death_given_hf)));
        f.push_back(double_field("synth", "p_death_base", CEHR_ACC(c.synth.p_death_base)));

        f.push_back(size_field("model", "n_layers", CEHR_ACC(c.model.n_layers)));
        f.push_back(size_field("model", "n_heads", CEHR_ACC(c.model.n_heads)));
        f.push_back(size_field("model", "d_model", CEHR_ACC(c.model.d_model)));
        f.push_back(size_field("model", "d_ff", CEHR_ACC(c.model.d_ff)));
        f.push_back(double_field("model", "dropout", CEHR_ACC(c.model.dropout)));
        f.push_back(size_field("model", "time2vec_dim", CEHR_ACC(c.model.time2vec_dim)));
        f.push_back(size_field("model", "context_window", CEHR_ACC(c.model.context_window)));
        f.push_back(bool_field("model", "vtp_self_attention", CEHR_ACC(c.model.vtp_self_attention)));
        f.push_back(double_field("model", "vtp_loss_weight", CEHR_ACC(c.model.vtp_loss_weight)));
        f.push_back(size_field("model", "lstm_hidden", CEHR_ACC(c.model.lstm_hidden)));
        f.push_back(double_field("model", "layer_norm_eps", CEHR_ACC(c.model.layer_norm_eps)));

        f.push_back(size_field("pretrain", "epochs", CEHR_ACC(c.pretrain.epochs)));
        f.push_back(size_field("pretrain", "batch_size", CEHR_ACC(c.pretrain.batch_size)));
        f.push_back(double_field("pretrain", "lr", CEHR_ACC(c.pretrain.initial_lr)));
        f.push_back(double_field("pretrain", "eta_min", CEHR_ACC(c.pretrain.eta_min)));
        f.push_back(double_field("pretrain", "mlm_rate", CEHR_ACC(c.pretrain.mlm.rate)));
        f.push_back(bool_field("pretrain", "mlm_replacement_split", CEHR_ACC(c.pretrain.mlm.replacement_split)));
        f.push_back(bool_field("pretrain", "mask_artificial_tokens", CEHR_ACC(c.pretrain.mlm.mask_artificial_tokens)));
        f.push_back(double_field("pretrain", "vtp_rate", CEHR_ACC(c.pretrain.vtp_rate)));
        f.push_back(bool_field("pretrain", "eligibility_filter", CEHR_ACC(c.pretrain.eligibility_filter)));
        f.push_back(size_field("pretrain", "min_events_exclusive", CEHR_ACC(c.pretrain.min_events_exclusive)));

        f.push_back(size_field("finetune", "max_epochs", CEHR_ACC(c.finetune.max_epochs)));
        f.push_back(size_field("finetune", "patience", CEHR_ACC(c.finetune.patience)));
        f.push_back(size_field("finetune", "batch_size", CEHR_ACC(c.finetune.batch_size)));
        f.push_back(double_field("finetune", "lr", CEHR_ACC(c.finetune.lr)));
        f.push_back(bool_field("finetune", "restore_best", CEHR_ACC(c.finetune.restore_best)));
        return f;
    }();
    return table;
}

#undef CEHR_ACC

const std::vector<std::string> kSections = {"harness", "synth", "model", "pretrain", "finetune"};

RunConfig preset(const std::string& budget_name) {
    RunConfig c;
    c.budget = budget_name;
    c.cohorts_dir = default_cohorts_dir();
    if (const auto b = find_budget(budget_name)) {
        c.model = b->model;
        c.pretrain = b->pretrain;
        c.finetune = b->finetune;
        c.synth.n_patients = b->synth_patients;
    }
    return c;
}

void apply_overrides(RunConfig& c, const RunOverrides& o) {
    if (o.seed) c.seed = *o.seed;
    if (o.out) c.out = *o.out;
    if (o.data) c.data = *o.data;
    if (o.checkpoint) c.checkpoint = *o.checkpoint;
    if (o.variant) c.variant = *o.variant;
    if (o.jobs) c.jobs = *o.jobs;
    if (o.fraction) c.fraction = *o.fraction;
    if (o.tasks) c.tasks = *o.tasks;
    if (o.task) c.tasks = {*o.task};
}

}  // namespace

Budget RunConfig::as_budget() const {
    Budget b;
    b.name = budget;
    b.model = model;
    b.pretrain = pretrain;
    b.finetune = finetune;
    b.synth_patients = synth.n_patients;
    return b;
}

std::string default_cohorts_dir() { return std::string(CEHR_CONFIG_DIR) + "/cohorts"; }

std::vector<std::string> validate(const RunConfig& c) {
    std::vector<std::string> errors;
    if (!find_budget(c.budget)) errors.push_back("budget must be one of tiny|small|paper-doc, got \"" + c.budget + "\"");
    if (c.jobs < 1) errors.push_back("jobs must be >= 1");
    if (!find_variant(c.variant)) {
        std::string names;
        for (const auto& v : ablation_variants()) names += (names.empty() ? "" : "|") + v.name;
        errors.push_back("variant must be one of " + names + ", got \"" + c.variant + "\"");
    }
    if (c.out.empty()) errors.push_back("out must not be empty");
    if (c.tasks.empty()) errors.push_back("tasks must not be empty");
    for (const auto& t : c.tasks)
        if (t.empty() || t.find_first_of("/\\,") != std::string::npos) errors.push_back("bad task name \"" + t + "\"");
    if (!(c.fraction > 0.0 && c.fraction <= 1.0)) errors.push_back("fraction must lie in (0, 1]");
    for (double f : c.fractions)
        if (!(f > 0.0 && f <= 1.0)) errors.push_back("every entry of fractions must lie in (0, 1]");
    if (!(c.logistic_l2 >= 0.0)) errors.push_back("harness.logistic_l2 must be >= 0");
    for (const auto& e : c.synth.validate()) errors.push_back("synth: " + e);
    ModelConfig m = c.model;
    m.vocab_size = Vocabulary::kFirstConcept + 1;  // known only once data is loaded
    m.n_visit_types = 1;
    for (const auto& e : m.validate()) errors.push_back("model: " + e);
    if (c.pretrain.epochs < 1) errors.push_back("pretrain: epochs must be >= 1");
    if (c.pretrain.batch_size < 1) errors.push_back("pretrain: batch_size must be >= 1");
    if (!(c.pretrain.initial_lr > 0.0)) errors.push_back("pretrain: lr must be > 0");
    if (!(c.pretrain.eta_min >= 0.0)) errors.push_back("pretrain: eta_min must be >= 0");
    if (!(c.pretrain.mlm.rate > 0.0 && c.pretrain.mlm.rate <= 1.0)) errors.push_back("pretrain: mlm_rate must lie in (0, 1]");
    if (!(c.pretrain.vtp_rate >= 0.0 && c.pretrain.vtp_rate <= 1.0)) errors.push_back("pretrain: vtp_rate must lie in [0, 1]");
    if (c.finetune.max_epochs < 1) errors.push_back("finetune: max_epochs must be >= 1");
    if (c.finetune.batch_size < 1) errors.push_back("finetune: batch_size must be >= 1");
    if (!(c.finetune.lr > 0.0)) errors.push_back("finetune: lr must be > 0");
    return errors;
}

RunConfig parse_run_config(const std::string& toml_text, const std::string& source, const RunOverrides& overrides) {
    toml::table doc;
    try {
        doc = toml::parse(toml_text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(source, {msg.str()});
    }
    TomlReader r;
    std::string budget = "small";
    budget = r.get_string(doc, "", "budget", budget);
    if (overrides.budget) budget = *overrides.budget;
    RunConfig c = preset(budget);

    std::vector<std::string> top_keys(kSections.begin(), kSections.end());
    std::map<std::string, std::vector<std::string>> section_keys;
    for (const auto& f : fields()) (f.section.empty() ? top_keys : section_keys[f.section]).push_back(f.key);
    for (const auto& [k, v] : doc)
        if (std::find(top_keys.begin(), top_keys.end(), k.str()) == top_keys.end())
            r.errors.push_back("unknown key '" + std::string(k.str()) + "'");
    for (const auto& s : kSections)
        if (const auto* t = r.get_table(doc, s.c_str()))
            for (const auto& [k, v] : *t)
                if (std::find(section_keys[s].begin(), section_keys[s].end(), k.str()) == section_keys[s].end())
                    r.errors.push_back("unknown key '" + s + "." + std::string(k.str()) + "'");

    for (const auto& f : fields()) {
        if (f.section.empty()) {
            f.read(r, doc, "", c);
        } else if (const auto* node = doc.get(f.section); node && node->as_table()) {
            f.read(r, *node->as_table(), f.section, c);
        }
    }
    c.budget = budget;
    apply_overrides(c, overrides);
    auto errors = std::move(r.errors);
    for (auto& e : validate(c)) errors.push_back(std::move(e));
    if (!errors.empty()) throw ConfigError(source, errors);
    return c;
}

RunConfig resolve_run_config(const std::string& path, const RunOverrides& overrides) {
    std::string text;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError(path, {"cannot read config file"});
        std::ostringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    return parse_run_config(text, path.empty() ? "<defaults>" : path, overrides);
}

std::string to_toml(const RunConfig& c) {
    toml::table doc;
    std::map<std::string, toml::table> sections;
    for (const auto& f : fields()) f.write(f.section.empty() ? doc : sections[f.section], c);
    for (const auto& s : kSections) doc.insert_or_assign(s, std::move(sections[s]));
    std::ostringstream out;
    out << toml::toml_formatter(doc, toml::toml_formatter::default_flags & ~toml::format_flags::indentation) << '\n';
    return out.str();
}

std::vector<Task> load_tasks(const EventStore& store, const RunConfig& config, const std::vector<std::string>& names) {
    std::vector<Task> out;
    std::vector<std::string> errors;
    std::vector<CohortDefinition> defs;
    for (const auto& name : names) {
        const auto path = (std::filesystem::path(config.cohorts_dir) / (name + ".toml")).string();
        if (!std::filesystem::exists(path)) {
            errors.push_back("task '" + name + "': no cohort definition at " + path);
            continue;
        }
        try {
            auto def = load_cohort_definition(path);
            if (config.observation_days) def.observation_window_days = *config.observation_days;
            const auto problems = def.validate();
            for (const auto& p : problems) errors.push_back("task '" + name + "': " + p);
            if (problems.empty()) defs.push_back(std::move(def));
        } catch (const ConfigError& e) {
            errors.push_back(e.what());
        }
    }
    if (!errors.empty()) throw ConfigError("tasks", errors);
    for (std::size_t i = 0; i < defs.size(); ++i) out.push_back({names[i], build_cohort(store, defs[i])});
    return out;
}

}  // namespace cehr
