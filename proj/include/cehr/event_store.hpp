#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cehr/csv.hpp"
#include "cehr/date.hpp"

namespace cehr {

enum class Gender : std::uint8_t { female, male, other };
enum class Domain : std::uint8_t { condition, procedure, medication };

std::string_view to_string(Gender g);
std::string_view to_string(Domain d);
std::optional<Gender> parse_gender(std::string_view s);
std::optional<Domain> parse_domain(std::string_view s);
/// "", "home", "nursing" and "other" are the accepted discharge values.
bool valid_discharge(std::string_view s);

struct Person {
    std::string person_id;
    Date birth_date = 0;
    Gender gender = Gender::other;
    bool operator==(const Person&) const = default;
};

struct VisitRecord {
    std::string visit_id;
    std::string person_id;
    std::string visit_type;
    Date start_date = 0;
    Date end_date = 0;
    std::string discharge_to;  // empty when unknown
    bool operator==(const VisitRecord&) const = default;
};

struct DomainEvent {
    std::string person_id;
    std::string visit_id;
    Domain domain = Domain::condition;
    std::string concept_id;
    Date event_date = 0;
    bool operator==(const DomainEvent&) const = default;
};

/// Validated, immutable, person-indexed event data.
///
/// Canonical order: persons by id; a person's visits by (start_date,
/// visit_id); a visit's events by (event_date, domain, concept_id).
class EventStore {
   public:
    EventStore() = default;

    /// Validates referential integrity and date order, then sorts into
    /// canonical order. Throws DataError naming the offending record.
    static EventStore build(std::vector<Person> persons, std::vector<VisitRecord> visits,
                            std::vector<DomainEvent> events);

    const std::vector<Person>& persons() const { return persons_; }
    const std::vector<VisitRecord>& visits() const { return visits_; }
    const std::vector<DomainEvent>& events() const { return events_; }

    std::optional<std::size_t> find_person(std::string_view person_id) const;
    /// Global visit indices [first, last) of person p.
    std::size_t visit_begin(std::size_t p) const { return person_visit_offset_[p]; }
    std::size_t visit_end(std::size_t p) const { return person_visit_offset_[p + 1]; }
    std::span<const VisitRecord> visits_of(std::size_t p) const;
    std::span<const DomainEvent> events_of_visit(std::size_t v) const;
    std::size_t event_count_of(std::size_t p) const;

    bool operator==(const EventStore& other) const {
        return persons_ == other.persons_ && visits_ == other.visits_ && events_ == other.events_;
    }

   private:
    friend EventStore load_store(const std::string&, const std::string&, const std::string&);
    struct Provenance {
        std::string persons_path, visits_path, events_path;
        std::vector<std::size_t> person_lines, visit_lines, event_lines;
    };
    static EventStore build_impl(std::vector<Person> persons, std::vector<VisitRecord> visits,
                                 std::vector<DomainEvent> events, const Provenance* where);

    std::vector<Person> persons_;
    std::vector<VisitRecord> visits_;
    std::vector<DomainEvent> events_;
    std::vector<std::size_t> person_visit_offset_;  // size persons+1
    std::vector<std::size_t> visit_event_offset_;   // size visits+1
};

EventStore load_store(const std::string& persons_path, const std::string& visits_path,
                      const std::string& events_path);
/// Loads persons.csv, visits.csv and events.csv from one directory.
EventStore load_store_dir(const std::string& dir);
/// Writes the three CSVs in canonical order.
void write_store(const EventStore& store, const std::string& dir);
std::string emit_persons_csv(const EventStore& store);
std::string emit_visits_csv(const EventStore& store);
std::string emit_events_csv(const EventStore& store);

struct Distribution {
    double mean = 0, std = 0, min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

struct SummaryStats {
    std::size_t n_persons = 0;
    std::size_t n_visits = 0;
    std::size_t n_events = 0;
    Distribution visits_per_person;
    Distribution records_per_person;
};

/// Population std; quartiles by linear interpolation between order statistics.
Distribution describe(std::vector<double> values);
SummaryStats summary_stats(const EventStore& store);
std::string format_summary(const SummaryStats& s);

}  // namespace cehr
