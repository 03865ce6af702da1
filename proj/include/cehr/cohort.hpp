#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cehr/event_store.hpp"
#include "cehr/sequence.hpp"

namespace cehr {

/// standard: features before the index date, outcome after it.
/// post_index: features in [index, index + observation], then hold-off, then
/// the prediction window.
enum class CohortLayout { standard, post_index };
enum class IndexAnchor { visit_start, visit_end, event };
enum class RuleWindow { observation, prior, index_visit };
enum class RuleKind { events, visits };

struct IndexRule {
    std::set<std::string> concepts;       // empty: any visit may qualify
    std::set<std::string> visit_types;    // empty: any type
    std::set<std::string> discharge_to;   // empty: any
    bool first_visit = false;             // only the person's first visit qualifies
    std::size_t min_prior_visits = 0;
    IndexAnchor anchor = IndexAnchor::visit_start;
};

/// Counts matching events (or visits) in a window; min_count <= n <= max_count.
struct InclusionRule {
    RuleKind kind = RuleKind::events;
    std::set<std::string> concepts;
    std::set<std::string> visit_types;
    RuleWindow window = RuleWindow::prior;
    std::size_t min_count = 1;
    std::optional<std::size_t> max_count;
};

/// Outcome dates: matching event dates when concepts are given, otherwise the
/// start dates of visits of the listed types.
struct OutcomeRule {
    std::set<std::string> concepts;
    std::set<std::string> visit_types;
};

struct CohortDefinition {
    std::string name;
    CohortLayout layout = CohortLayout::standard;
    std::optional<int> observation_window_days;  // nullopt: unbounded
    int hold_off_days = 0;
    std::optional<int> prediction_window_days;   // nullopt: unbounded
    IndexRule index;
    std::vector<InclusionRule> inclusion;
    OutcomeRule outcome;
    bool allow_index_outcome_overlap = false;
    /// Outcomes on the index day itself count, and outcome events inside the
    /// outcome window are withheld from the features.
    bool outcome_on_index_day = false;

    /// Every violated constraint, empty when valid.
    std::vector<std::string> validate() const;
};

/// Parses a cohort TOML document. Concept-set paths resolve against base_dir.
/// Throws ConfigError listing every problem (unknown keys included).
CohortDefinition parse_cohort_definition(const std::string& toml_text, const std::string& base_dir,
                                         const std::string& source = "cohort");
CohortDefinition load_cohort_definition(const std::string& path);

/// One concept_id per row under a "concept_id" header.
std::set<std::string> load_concept_set(const std::string& path);

struct LabeledExample {
    std::string person_id;
    std::size_t person_index = 0;
    Date index_date = 0;
    int label = 0;
    /// Visits with at least one event in the feature window, restricted to those events.
    std::vector<VisitContent> feature_visits;

    std::size_t feature_event_count() const;
};

/// One example per qualifying person at their first index event. Persons
/// failing an inclusion rule, or with no event in the feature window, are
/// left out. Throws std::invalid_argument on an invalid definition or empty store.
std::vector<LabeledExample> build_cohort(const EventStore& store, const CohortDefinition& def);

/// Label window (lo, hi] in days relative to index; hi nullopt = unbounded.
std::pair<int, std::optional<int>> outcome_window(const CohortDefinition& def);
/// Feature window [lo, hi] as dates, lo nullopt = unbounded.
std::pair<std::optional<Date>, Date> feature_window(const CohortDefinition& def, Date index_date);

void write_labeled_csv(const std::string& path, const std::vector<LabeledExample>& examples);

using HierarchyMap = std::unordered_map<std::string, std::string>;
/// concept_id,rollup_code
HierarchyMap load_hierarchy(const std::string& path);
void write_hierarchy(const std::string& path, const std::vector<std::pair<std::string, std::string>>& rows);

/// Concept counts in the feature window after rolling each concept up to its
/// code when mapped; unmapped concepts are kept verbatim.
std::map<std::string, double> rollup_counts(const LabeledExample& example, const HierarchyMap& hierarchy);

/// Column space for the linear baseline, fitted on training examples.
class FeatureSpace {
   public:
    static FeatureSpace fit(const std::vector<std::map<std::string, double>>& rows);
    std::size_t size() const { return codes_.size(); }
    const std::vector<std::string>& codes() const { return codes_; }
    /// Dense row; codes unseen at fit time are dropped.
    std::vector<double> transform(const std::map<std::string, double>& counts) const;

   private:
    std::vector<std::string> codes_;
    std::unordered_map<std::string, std::size_t> column_;
};

std::string to_string(CohortLayout layout);

}  // namespace cehr
