#include "cehr/cohort.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "cehr/config_error.hpp"
#include "cehr/csv.hpp"
#include "toml_reader.hpp"

namespace cehr {

std::string to_string(CohortLayout layout) { return layout == CohortLayout::standard ? "standard" : "post_index"; }

namespace {

bool intersects(const std::set<std::string>& a, const std::set<std::string>& b) {
    for (const auto& x : a)
        if (b.count(x)) return true;
    return false;
}

// Two optional constraints can be met by the same record unless both are set and disjoint.
bool may_share(const std::set<std::string>& a, const std::set<std::string>& b) {
    return a.empty() || b.empty() || intersects(a, b);
}

}  // namespace

std::vector<std::string> CohortDefinition::validate() const {
    std::vector<std::string> errors;
    if (name.empty()) errors.push_back("name must not be empty");
    if (observation_window_days && *observation_window_days < 0) errors.push_back("observation_window_days must be >= 0");
    if (hold_off_days < 0) errors.push_back("hold_off_days must be >= 0");
    if (prediction_window_days && *prediction_window_days < 0) errors.push_back("prediction_window_days must be >= 0");
    if (layout == CohortLayout::standard && observation_window_days && hold_off_days > *observation_window_days) {
        errors.push_back("hold_off_days exceeds observation_window_days, leaving no feature window");
    }
    if (layout == CohortLayout::post_index && !observation_window_days) {
        errors.push_back("post_index layout needs a bounded observation_window_days");
    }
    if (index.anchor == IndexAnchor::event && index.concepts.empty()) {
        errors.push_back("index_event.anchor = \"event\" needs a concept_set");
    }
    for (std::size_t i = 0; i < inclusion.size(); ++i) {
        const auto& r = inclusion[i];
        const std::string where = "inclusion[" + std::to_string(i) + "]";
        if (r.max_count && *r.max_count < r.min_count) errors.push_back(where + ": max_count < min_count");
        if (r.kind == RuleKind::visits && r.window == RuleWindow::index_visit) {
            errors.push_back(where + ": kind \"visits\" cannot use window \"index_visit\"");
        }
    }
    if (outcome.concepts.empty() && outcome.visit_types.empty()) {
        errors.push_back("outcome_event needs a concept_set or visit_types");
    }
    if (!allow_index_outcome_overlap && may_share(index.concepts, outcome.concepts) &&
        may_share(index.visit_types, outcome.visit_types)) {
        errors.push_back("index and outcome predicates can match the same record; set allow_index_outcome_overlap = true");
    }
    if (outcome_on_index_day && outcome.concepts.empty()) {
        errors.push_back("outcome_on_index_day needs an outcome concept set");
    }
    return errors;
}

std::set<std::string> load_concept_set(const std::string& path) {
    std::set<std::string> out;
    read_csv(path, {"concept_id"}, [&](const std::vector<std::string_view>& f, std::size_t line) {
        if (f[0].empty()) throw_row_error(path, line, "empty concept_id");
        out.emplace(f[0]);
    });
    return out;
}


CohortDefinition parse_cohort_definition(const std::string& toml_text, const std::string& base_dir,
                                         const std::string& source) {
    toml::table doc;
    try {
        doc = toml::parse(toml_text, source);
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(source, {msg.str()});
    }
    detail::TomlReader r(base_dir);
    CohortDefinition def;
    r.check_keys(doc, "", {"name", "layout", "observation_window_days", "hold_off_days", "prediction_window_days",
                           "allow_index_outcome_overlap", "outcome_on_index_day", "index_event", "inclusion", "outcome_event"});
    def.name = r.get_string(doc, "", "name", "", true);
    def.layout = r.get_enum(doc, "", "layout", CohortLayout::standard,
                            {{"standard", CohortLayout::standard}, {"post_index", CohortLayout::post_index}});
    def.observation_window_days = r.get_window(doc, "", "observation_window_days");
    def.hold_off_days = static_cast<int>(r.get_int(doc, "", "hold_off_days", 0));
    def.prediction_window_days = r.get_window(doc, "", "prediction_window_days");
    def.allow_index_outcome_overlap = r.get_bool(doc, "", "allow_index_outcome_overlap", false);
    def.outcome_on_index_day = r.get_bool(doc, "", "outcome_on_index_day", false);

    if (const auto* idx = doc.get_as<toml::table>("index_event")) {
        const std::string w = "index_event";
        r.check_keys(*idx, w, {"concept_set", "visit_types", "discharge_to", "first_visit", "min_prior_visits", "anchor"});
        def.index.concepts = r.get_concept_set(*idx, w);
        def.index.visit_types = r.get_strings(*idx, w, "visit_types");
        def.index.discharge_to = r.get_strings(*idx, w, "discharge_to");
        for (const auto& d : def.index.discharge_to)
            if (!valid_discharge(d)) r.errors.push_back("index_event.discharge_to: unknown value \"" + d + "\"");
        def.index.first_visit = r.get_bool(*idx, w, "first_visit", false);
        const auto prior = r.get_int(*idx, w, "min_prior_visits", 0);
        if (prior < 0) r.errors.push_back("index_event.min_prior_visits must be >= 0");
        def.index.min_prior_visits = static_cast<std::size_t>(std::max<std::int64_t>(prior, 0));
        def.index.anchor = r.get_enum(*idx, w, "anchor", IndexAnchor::visit_start,
                                      {{"visit_start", IndexAnchor::visit_start},
                                       {"visit_end", IndexAnchor::visit_end},
                                       {"event", IndexAnchor::event}});
    } else {
        r.errors.push_back("missing table [index_event]");
    }

    if (const auto* node = doc.get("inclusion")) {
        const auto* arr = node->as_array();
        if (!arr) r.errors.push_back("'inclusion' must be an array of tables ([[inclusion]])");
        for (std::size_t i = 0; arr && i < arr->size(); ++i) {
            const std::string w = "inclusion[" + std::to_string(i) + "]";
            const auto* t = (*arr)[i].as_table();
            if (!t) {
                r.errors.push_back(w + " must be a table");
                continue;
            }
            r.check_keys(*t, w, {"kind", "concept_set", "visit_types", "window", "min_count", "max_count"});
            InclusionRule rule;
            rule.kind = r.get_enum(*t, w, "kind", RuleKind::events,
                                   {{"events", RuleKind::events}, {"visits", RuleKind::visits}});
            rule.concepts = r.get_concept_set(*t, w);
            rule.visit_types = r.get_strings(*t, w, "visit_types");
            rule.window = r.get_enum(*t, w, "window", RuleWindow::prior,
                                     {{"observation", RuleWindow::observation},
                                      {"prior", RuleWindow::prior},
                                      {"index_visit", RuleWindow::index_visit}});
            const auto lo = r.get_int(*t, w, "min_count", 1);
            if (lo < 0) r.errors.push_back(w + ".min_count must be >= 0");
            rule.min_count = static_cast<std::size_t>(std::max<std::int64_t>(lo, 0));
            if (t->contains("max_count")) {
                const auto hi = r.get_int(*t, w, "max_count", 0);
                if (hi < 0) r.errors.push_back(w + ".max_count must be >= 0");
                rule.max_count = static_cast<std::size_t>(std::max<std::int64_t>(hi, 0));
            }
            def.inclusion.push_back(std::move(rule));
        }
    }

    if (const auto* out = doc.get_as<toml::table>("outcome_event")) {
        r.check_keys(*out, "outcome_event", {"concept_set", "visit_types"});
        def.outcome.concepts = r.get_concept_set(*out, "outcome_event");
        def.outcome.visit_types = r.get_strings(*out, "outcome_event", "visit_types");
    } else {
        r.errors.push_back("missing table [outcome_event]");
    }

    for (auto& e : def.validate()) r.errors.push_back(std::move(e));
    if (!r.errors.empty()) throw ConfigError(source, r.errors);
    return def;
}

CohortDefinition load_cohort_definition(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, {"cannot open file"});
    std::stringstream text;
    text << in.rdbuf();
    return parse_cohort_definition(text.str(), std::filesystem::path(path).parent_path().string(), path);
}

// ---- cohort construction ------------------------------------------------------

std::size_t LabeledExample::feature_event_count() const {
    std::size_t n = 0;
    for (const auto& v : feature_visits) n += v.events.size();
    return n;
}

std::pair<int, std::optional<int>> outcome_window(const CohortDefinition& def) {
    const int lo = def.layout == CohortLayout::standard ? 0 : *def.observation_window_days + def.hold_off_days;
    if (!def.prediction_window_days) return {lo, std::nullopt};
    return {lo, lo + *def.prediction_window_days};
}

std::pair<std::optional<Date>, Date> feature_window(const CohortDefinition& def, Date index_date) {
    if (def.layout == CohortLayout::post_index) return {index_date, index_date + *def.observation_window_days};
    std::optional<Date> lo;
    if (def.observation_window_days) lo = index_date - *def.observation_window_days;
    return {lo, index_date - def.hold_off_days};
}

namespace {

bool in_set(const std::set<std::string>& s, const std::string& x) { return s.empty() || s.count(x) != 0; }

struct DateRange {
    std::optional<Date> lo;
    Date hi;
    bool contains(Date d) const { return (!lo || d >= *lo) && d <= hi; }
};

std::size_t count_matches(const EventStore& store, std::size_t person, std::size_t index_visit, const InclusionRule& rule,
                          const DateRange& window) {
    std::size_t n = 0;
    const std::size_t first = store.visit_begin(person), last = store.visit_end(person);
    for (std::size_t v = first; v < last; ++v) {
        const auto& visit = store.visits()[v];
        if (!in_set(rule.visit_types, visit.visit_type)) continue;
        const auto events = store.events_of_visit(v);
        if (rule.kind == RuleKind::visits) {
            if (!window.contains(visit.start_date)) continue;
            const bool has = rule.concepts.empty() || std::any_of(events.begin(), events.end(), [&](const DomainEvent& e) {
                                 return rule.concepts.count(e.concept_id) != 0;
                             });
            n += has ? 1 : 0;
            continue;
        }
        if (rule.window == RuleWindow::index_visit && v != index_visit) continue;
        for (const auto& e : events) {
            if (!in_set(rule.concepts, e.concept_id)) continue;
            if (rule.window != RuleWindow::index_visit && !window.contains(e.event_date)) continue;
            ++n;
        }
    }
    return n;
}

}  // namespace

std::vector<LabeledExample> build_cohort(const EventStore& store, const CohortDefinition& def) {
    if (const auto errors = def.validate(); !errors.empty()) throw ConfigError(def.name.empty() ? "cohort" : def.name, errors);
    if (store.persons().empty()) throw std::invalid_argument("build_cohort: empty store");

    const auto [out_lo, out_hi] = outcome_window(def);
    std::vector<LabeledExample> examples;
    for (std::size_t p = 0; p < store.persons().size(); ++p) {
        const std::size_t first = store.visit_begin(p), last = store.visit_end(p);
        std::optional<std::size_t> index_visit;
        Date index_date = 0;
        for (std::size_t v = first; v < last && !index_visit; ++v) {
            const auto& visit = store.visits()[v];
            const std::size_t position = v - first;
            if (def.index.first_visit && position != 0) break;
            if (position < def.index.min_prior_visits) continue;
            if (!in_set(def.index.visit_types, visit.visit_type)) continue;
            if (!in_set(def.index.discharge_to, visit.discharge_to)) continue;
            std::optional<Date> first_match;
            for (const auto& e : store.events_of_visit(v)) {
                if (def.index.concepts.count(e.concept_id) && (!first_match || e.event_date < *first_match)) {
                    first_match = e.event_date;
                }
            }
            if (!def.index.concepts.empty() && !first_match) continue;
            index_visit = v;
            index_date = def.index.anchor == IndexAnchor::visit_start ? visit.start_date
                         : def.index.anchor == IndexAnchor::visit_end ? visit.end_date
                                                                      : *first_match;
        }
        if (!index_visit) continue;

        const auto [feat_lo, feat_hi] = feature_window(def, index_date);
        const DateRange features{feat_lo, feat_hi};
        bool included = true;
        for (const auto& rule : def.inclusion) {
            const DateRange window = rule.window == RuleWindow::observation ? features : DateRange{std::nullopt, index_date};
            const std::size_t n = count_matches(store, p, *index_visit, rule, window);
            if (n < rule.min_count || (rule.max_count && n > *rule.max_count)) {
                included = false;
                break;
            }
        }
        if (!included) continue;

        LabeledExample ex;
        ex.person_id = store.persons()[p].person_id;
        ex.person_index = p;
        ex.index_date = index_date;
        auto in_outcome = [&](Date d) {
            const int offset = d - index_date;
            return (def.outcome_on_index_day ? offset >= out_lo : offset > out_lo) && (!out_hi || offset <= *out_hi);
        };
        for (std::size_t v = first; v < last; ++v) {
            const auto& visit = store.visits()[v];
            const bool outcome_visit = in_set(def.outcome.visit_types, visit.visit_type);
            VisitContent content{&visit, {}};
            for (const auto& e : store.events_of_visit(v)) {
                if (!features.contains(e.event_date)) continue;
                if (def.outcome_on_index_day && outcome_visit && def.outcome.concepts.count(e.concept_id) &&
                    in_outcome(e.event_date)) {
                    continue;
                }
                content.events.push_back(&e);
            }
            if (!content.events.empty()) ex.feature_visits.push_back(std::move(content));

            if (ex.label || !outcome_visit) continue;
            if (def.outcome.concepts.empty()) {
                ex.label = in_outcome(visit.start_date) ? 1 : 0;
            } else {
                for (const auto& e : store.events_of_visit(v))
                    if (def.outcome.concepts.count(e.concept_id) && in_outcome(e.event_date)) ex.label = 1;
            }
        }
        if (ex.feature_visits.empty()) continue;
        examples.push_back(std::move(ex));
    }
    return examples;
}

void write_labeled_csv(const std::string& path, const std::vector<LabeledExample>& examples) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "person_id,index_date,label\n";
    for (const auto& e : examples) out << e.person_id << ',' << format_date(e.index_date) << ',' << e.label << '\n';
}

HierarchyMap load_hierarchy(const std::string& path) {
    HierarchyMap map;
    read_csv(path, {"concept_id", "rollup_code"}, [&](const std::vector<std::string_view>& f, std::size_t line) {
        if (f[0].empty() || f[1].empty()) throw_row_error(path, line, "empty field");
        if (!map.emplace(std::string(f[0]), std::string(f[1])).second) {
            throw_row_error(path, line, "duplicate concept_id '" + std::string(f[0]) + "'");
        }
    });
    return map;
}

void write_hierarchy(const std::string& path, const std::vector<std::pair<std::string, std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "concept_id,rollup_code\n";
    for (const auto& [c, r] : rows) out << c << ',' << r << '\n';
}

std::map<std::string, double> rollup_counts(const LabeledExample& example, const HierarchyMap& hierarchy) {
    std::map<std::string, double> counts;
    for (const auto& v : example.feature_visits) {
        for (const auto* e : v.events) {
            const auto it = hierarchy.find(e->concept_id);
            counts[it == hierarchy.end() ? e->concept_id : it->second] += 1.0;
        }
    }
    return counts;
}

FeatureSpace FeatureSpace::fit(const std::vector<std::map<std::string, double>>& rows) {
    std::set<std::string> codes;
    for (const auto& r : rows)
        for (const auto& [c, n] : r) codes.insert(c);
    FeatureSpace fs;
    fs.codes_.assign(codes.begin(), codes.end());
    for (std::size_t i = 0; i < fs.codes_.size(); ++i) fs.column_[fs.codes_[i]] = i;
    return fs;
}

std::vector<double> FeatureSpace::transform(const std::map<std::string, double>& counts) const {
    std::vector<double> row(codes_.size(), 0.0);
    for (const auto& [c, n] : counts)
        if (const auto it = column_.find(c); it != column_.end()) row[it->second] = n;
    return row;
}

}  // namespace cehr
