#include "cehr/event_store.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace cehr {

std::string_view to_string(Gender g) {
    switch (g) {
        case Gender::female: return "female";
        case Gender::male: return "male";
        default: return "other";
    }
}

std::string_view to_string(Domain d) {
    switch (d) {
        case Domain::condition: return "condition";
        case Domain::procedure: return "procedure";
        default: return "medication";
    }
}

std::optional<Gender> parse_gender(std::string_view s) {
    if (s == "female") return Gender::female;
    if (s == "male") return Gender::male;
    if (s == "other") return Gender::other;
    return std::nullopt;
}

std::optional<Domain> parse_domain(std::string_view s) {
    if (s == "condition") return Domain::condition;
    if (s == "procedure") return Domain::procedure;
    if (s == "medication") return Domain::medication;
    return std::nullopt;
}

bool valid_discharge(std::string_view s) { return s.empty() || s == "home" || s == "nursing" || s == "other"; }

namespace {

[[noreturn]] void fail(const std::string& path, const std::vector<std::size_t>* lines, std::size_t i,
                       const std::string& what, const std::string& detail) {
    if (lines && i < lines->size()) throw_row_error(path, (*lines)[i], detail);
    throw DataError(what + ": " + detail);
}

}  // namespace

EventStore EventStore::build(std::vector<Person> persons, std::vector<VisitRecord> visits,
                             std::vector<DomainEvent> events) {
    return build_impl(std::move(persons), std::move(visits), std::move(events), nullptr);
}

EventStore EventStore::build_impl(std::vector<Person> persons, std::vector<VisitRecord> visits,
                                  std::vector<DomainEvent> events, const Provenance* where) {
    const std::string ppath = where ? where->persons_path : "";
    const std::string vpath = where ? where->visits_path : "";
    const std::string epath = where ? where->events_path : "";
    const auto* plines = where ? &where->person_lines : nullptr;
    const auto* vlines = where ? &where->visit_lines : nullptr;
    const auto* elines = where ? &where->event_lines : nullptr;

    std::unordered_map<std::string, std::size_t> person_of;
    for (std::size_t i = 0; i < persons.size(); ++i) {
        const auto& p = persons[i];
        const std::string what = "person '" + p.person_id + "'";
        if (p.person_id.empty()) fail(ppath, plines, i, what, "empty person_id");
        if (!person_of.emplace(p.person_id, i).second) fail(ppath, plines, i, what, "duplicate person_id");
    }

    std::unordered_map<std::string, std::size_t> visit_of;
    for (std::size_t i = 0; i < visits.size(); ++i) {
        const auto& v = visits[i];
        const std::string what = "visit '" + v.visit_id + "'";
        if (v.visit_id.empty()) fail(vpath, vlines, i, what, "empty visit_id");
        if (!visit_of.emplace(v.visit_id, i).second) fail(vpath, vlines, i, what, "duplicate visit_id");
        auto owner = person_of.find(v.person_id);
        if (owner == person_of.end()) fail(vpath, vlines, i, what, "unknown person_id '" + v.person_id + "'");
        if (v.visit_type.empty()) fail(vpath, vlines, i, what, "empty visit_type");
        if (v.start_date > v.end_date) fail(vpath, vlines, i, what, "start_date after end_date");
        if (v.start_date < persons[owner->second].birth_date) fail(vpath, vlines, i, what, "visit before birth_date");
        if (!valid_discharge(v.discharge_to)) fail(vpath, vlines, i, what, "bad discharge_to '" + v.discharge_to + "'");
    }

    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        const std::string what = "event " + std::to_string(i) + " (" + e.concept_id + ")";
        if (e.visit_id.empty()) fail(epath, elines, i, what, "event has no visit_id");
        if (e.concept_id.empty()) fail(epath, elines, i, what, "empty concept_id");
        auto v = visit_of.find(e.visit_id);
        if (v == visit_of.end()) fail(epath, elines, i, what, "unknown visit_id '" + e.visit_id + "'");
        const auto& visit = visits[v->second];
        if (visit.person_id != e.person_id) {
            fail(epath, elines, i, what, "visit '" + e.visit_id + "' belongs to person '" + visit.person_id + "'");
        }
        if (e.event_date < visit.start_date) {
            fail(epath, elines, i, what,
                 "event dated " + format_date(e.event_date) + " before start of visit '" + e.visit_id + "'");
        }
        if (e.event_date > visit.end_date) {
            fail(epath, elines, i, what,
                 "event dated " + format_date(e.event_date) + " after end of visit '" + e.visit_id + "'");
        }
    }

    EventStore store;
    std::vector<std::size_t> porder(persons.size());
    std::iota(porder.begin(), porder.end(), 0);
    std::sort(porder.begin(), porder.end(),
              [&](std::size_t a, std::size_t b) { return persons[a].person_id < persons[b].person_id; });
    std::unordered_map<std::string, std::size_t> prank;
    for (std::size_t r = 0; r < porder.size(); ++r) {
        prank[persons[porder[r]].person_id] = r;
        store.persons_.push_back(std::move(persons[porder[r]]));
    }

    std::vector<std::size_t> vorder(visits.size());
    std::iota(vorder.begin(), vorder.end(), 0);
    std::sort(vorder.begin(), vorder.end(), [&](std::size_t a, std::size_t b) {
        const auto& x = visits[a];
        const auto& y = visits[b];
        const auto px = prank[x.person_id], py = prank[y.person_id];
        if (px != py) return px < py;
        if (x.start_date != y.start_date) return x.start_date < y.start_date;
        return x.visit_id < y.visit_id;
    });
    for (std::size_t r = 1; r < vorder.size(); ++r) {
        const auto& prev = visits[vorder[r - 1]];
        const auto& cur = visits[vorder[r]];
        if (prev.person_id == cur.person_id && cur.start_date < prev.end_date) {
            fail(vpath, vlines, vorder[r], "visit '" + cur.visit_id + "'",
                 "overlaps visit '" + prev.visit_id + "' of the same person");
        }
    }
    std::unordered_map<std::string, std::size_t> vrank;
    store.person_visit_offset_.assign(store.persons_.size() + 1, 0);
    for (std::size_t r = 0; r < vorder.size(); ++r) {
        vrank[visits[vorder[r]].visit_id] = r;
        ++store.person_visit_offset_[prank[visits[vorder[r]].person_id] + 1];
        store.visits_.push_back(std::move(visits[vorder[r]]));
    }
    std::partial_sum(store.person_visit_offset_.begin(), store.person_visit_offset_.end(),
                     store.person_visit_offset_.begin());

    std::vector<std::size_t> eorder(events.size());
    std::vector<std::size_t> evisit(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) evisit[i] = vrank[events[i].visit_id];
    std::iota(eorder.begin(), eorder.end(), 0);
    std::stable_sort(eorder.begin(), eorder.end(), [&](std::size_t a, std::size_t b) {
        const auto& x = events[a];
        const auto& y = events[b];
        if (evisit[a] != evisit[b]) return evisit[a] < evisit[b];
        if (x.event_date != y.event_date) return x.event_date < y.event_date;
        if (x.domain != y.domain) return x.domain < y.domain;
        return x.concept_id < y.concept_id;
    });
    store.visit_event_offset_.assign(store.visits_.size() + 1, 0);
    for (std::size_t i : eorder) {
        ++store.visit_event_offset_[evisit[i] + 1];
        store.events_.push_back(std::move(events[i]));
    }
    std::partial_sum(store.visit_event_offset_.begin(), store.visit_event_offset_.end(),
                     store.visit_event_offset_.begin());
    return store;
}

std::optional<std::size_t> EventStore::find_person(std::string_view person_id) const {
    auto it = std::lower_bound(persons_.begin(), persons_.end(), person_id,
                               [](const Person& p, std::string_view id) { return p.person_id < id; });
    if (it == persons_.end() || it->person_id != person_id) return std::nullopt;
    return static_cast<std::size_t>(it - persons_.begin());
}

std::span<const VisitRecord> EventStore::visits_of(std::size_t p) const {
    return std::span<const VisitRecord>(visits_).subspan(visit_begin(p), visit_end(p) - visit_begin(p));
}

std::span<const DomainEvent> EventStore::events_of_visit(std::size_t v) const {
    return std::span<const DomainEvent>(events_).subspan(visit_event_offset_[v],
                                                         visit_event_offset_[v + 1] - visit_event_offset_[v]);
}

std::size_t EventStore::event_count_of(std::size_t p) const {
    return visit_event_offset_[visit_end(p)] - visit_event_offset_[visit_begin(p)];
}

EventStore load_store(const std::string& persons_path, const std::string& visits_path,
                      const std::string& events_path) {
    EventStore::Provenance where{persons_path, visits_path, events_path, {}, {}, {}};
    std::vector<Person> persons;
    std::vector<VisitRecord> visits;
    std::vector<DomainEvent> events;

    auto date_or_fail = [](const std::string& path, std::size_t line, std::string_view text, const char* column) {
        try {
            return parse_date(text);
        } catch (const std::invalid_argument&) {
            throw_row_error(path, line, std::string("bad ") + column + " '" + std::string(text) + "'");
        }
    };

    read_csv(persons_path, {"person_id", "birth_date", "gender"}, [&](const auto& f, std::size_t line) {
        auto g = parse_gender(f[2]);
        if (!g) throw_row_error(persons_path, line, "bad gender '" + std::string(f[2]) + "'");
        persons.push_back({std::string(f[0]), date_or_fail(persons_path, line, f[1], "birth_date"), *g});
        where.person_lines.push_back(line);
    });
    read_csv(visits_path, {"visit_id", "person_id", "visit_type", "start_date", "end_date", "discharge_to"},
             [&](const auto& f, std::size_t line) {
                 visits.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2]),
                                   date_or_fail(visits_path, line, f[3], "start_date"),
                                   date_or_fail(visits_path, line, f[4], "end_date"), std::string(f[5])});
                 where.visit_lines.push_back(line);
             });
    read_csv(events_path, {"person_id", "visit_id", "domain", "concept_id", "event_date"},
             [&](const auto& f, std::size_t line) {
                 auto d = parse_domain(f[2]);
                 if (!d) throw_row_error(events_path, line, "bad domain '" + std::string(f[2]) + "'");
                 events.push_back({std::string(f[0]), std::string(f[1]), *d, std::string(f[3]),
                                   date_or_fail(events_path, line, f[4], "event_date")});
                 where.event_lines.push_back(line);
             });
    return EventStore::build_impl(std::move(persons), std::move(visits), std::move(events), &where);
}

EventStore load_store_dir(const std::string& dir) {
    const std::filesystem::path d(dir);
    return load_store((d / "persons.csv").string(), (d / "visits.csv").string(), (d / "events.csv").string());
}

std::string emit_persons_csv(const EventStore& store) {
    std::string out = "person_id,birth_date,gender\n";
    for (const auto& p : store.persons()) {
        out += p.person_id + "," + format_date(p.birth_date) + "," + std::string(to_string(p.gender)) + "\n";
    }
    return out;
}

std::string emit_visits_csv(const EventStore& store) {
    std::string out = "visit_id,person_id,visit_type,start_date,end_date,discharge_to\n";
    for (const auto& v : store.visits()) {
        out += v.visit_id + "," + v.person_id + "," + v.visit_type + "," + format_date(v.start_date) + "," +
               format_date(v.end_date) + "," + v.discharge_to + "\n";
    }
    return out;
}

std::string emit_events_csv(const EventStore& store) {
    std::string out = "person_id,visit_id,domain,concept_id,event_date\n";
    for (const auto& e : store.events()) {
        out += e.person_id + "," + e.visit_id + "," + std::string(to_string(e.domain)) + "," + e.concept_id + "," +
               format_date(e.event_date) + "\n";
    }
    return out;
}

void write_store(const EventStore& store, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path d(dir);
    auto put = [&](const char* name, const std::string& text) {
        std::ofstream out(d / name, std::ios::binary);
        if (!out) throw DataError((d / name).string() + ": cannot open for writing");
        out << text;
    };
    put("persons.csv", emit_persons_csv(store));
    put("visits.csv", emit_visits_csv(store));
    put("events.csv", emit_events_csv(store));
}

Distribution describe(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("describe: no values");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    Distribution d;
    d.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0;
    for (double v : values) ss += (v - d.mean) * (v - d.mean);
    d.std = std::sqrt(ss / n);
    auto quantile = [&](double q) {
        const double pos = q * (n - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
    };
    d.min = values.front();
    d.q1 = quantile(0.25);
    d.median = quantile(0.5);
    d.q3 = quantile(0.75);
    d.max = values.back();
    return d;
}

SummaryStats summary_stats(const EventStore& store) {
    if (store.persons().empty()) throw std::invalid_argument("summary_stats: empty store");
    SummaryStats s;
    s.n_persons = store.persons().size();
    s.n_visits = store.visits().size();
    s.n_events = store.events().size();
    std::vector<double> visits, records;
    for (std::size_t p = 0; p < s.n_persons; ++p) {
        visits.push_back(static_cast<double>(store.visit_end(p) - store.visit_begin(p)));
        records.push_back(static_cast<double>(store.event_count_of(p)));
    }
    s.visits_per_person = describe(std::move(visits));
    s.records_per_person = describe(std::move(records));
    return s;
}

std::string format_summary(const SummaryStats& s) {
    std::ostringstream out;
    out << "persons," << s.n_persons << "\nvisits," << s.n_visits << "\nevents," << s.n_events << "\n";
    out << "statistic,visits_per_patient,records_per_patient\n";
    auto row = [&](const char* name, double a, double b) { out << name << ',' << a << ',' << b << '\n'; };
    const auto& v = s.visits_per_person;
    const auto& r = s.records_per_person;
    row("mean", v.mean, r.mean);
    row("std", v.std, r.std);
    row("min", v.min, r.min);
    row("25%", v.q1, r.q1);
    row("50%", v.median, r.median);
    row("75%", v.q3, r.q3);
    row("max", v.max, r.max);
    return out.str();
}

}  // namespace cehr
