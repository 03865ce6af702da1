#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "cehr/event_store.hpp"
#include "cehr/synth.hpp"
#include "test_util.hpp"

using namespace cehr;
using cehr::testing::TempDir;
using cehr::testing::write_file;

namespace {

const char* kPersons =
    "person_id,birth_date,gender\n"
    "p2,1950-06-01,male\n"
    "p1,1970-01-15,female\n";
const char* kVisits =
    "visit_id,person_id,visit_type,start_date,end_date,discharge_to\n"
    "v1,p1,outpatient,2020-01-10,2020-01-10,\n"
    "v2,p1,inpatient,2020-03-01,2020-03-05,home\n"
    "v3,p2,office,2019-05-05,2019-05-05,\n"
    "v4,p2,emergency,2019-05-20,2019-05-20,\n"
    "v5,p2,inpatient,2021-01-02,2021-01-09,nursing\n";
const char* kEvents =
    "person_id,visit_id,domain,concept_id,event_date\n"
    "p1,v1,condition,c1,2020-01-10\n"
    "p1,v1,medication,m1,2020-01-10\n"
    "p1,v2,condition,c2,2020-03-02\n"
    "p1,v2,procedure,x1,2020-03-01\n"
    "p1,v2,condition,c1,2020-03-01\n"
    "p2,v3,condition,c3,2019-05-05\n"
    "p2,v3,medication,m2,2019-05-05\n"
    "p2,v4,condition,c1,2019-05-20\n"
    "p2,v5,condition,c4,2021-01-03\n"
    "p2,v5,procedure,x2,2021-01-02\n"
    "p2,v5,medication,m1,2021-01-09\n"
    "p2,v5,condition,c3,2021-01-02\n";

EventStore load_fixture(const TempDir& dir, const std::string& events = kEvents) {
    write_file(dir.file("persons.csv"), kPersons);
    write_file(dir.file("visits.csv"), kVisits);
    write_file(dir.file("events.csv"), events);
    return load_store_dir(dir.path().string());
}

}  // namespace

TEST(Date, ParseFormatRoundTrip) {
    EXPECT_EQ(parse_date("1970-01-01"), 0);
    EXPECT_EQ(parse_date("1970-01-02"), 1);
    EXPECT_EQ(parse_date("1969-12-31"), -1);
    EXPECT_EQ(format_date(parse_date("2020-02-29")), "2020-02-29");
    EXPECT_EQ(month_of(parse_date("2021-12-31")), 12u);
    EXPECT_THROW(parse_date("2021-02-29"), std::invalid_argument);
    EXPECT_THROW(parse_date("2021/01/01"), std::invalid_argument);
    EXPECT_THROW(parse_date("2021-1-01x"), std::invalid_argument);
}

TEST(EventStore, FixtureCountsAndCanonicalOrder) {
    TempDir dir;
    auto store = load_fixture(dir);
    EXPECT_EQ(store.persons().size(), 2u);
    EXPECT_EQ(store.visits().size(), 5u);
    EXPECT_EQ(store.events().size(), 12u);
    EXPECT_EQ(store.persons()[0].person_id, "p1");
    auto p2 = store.find_person("p2");
    ASSERT_TRUE(p2);
    EXPECT_EQ(store.visits_of(*p2).size(), 3u);
    EXPECT_EQ(store.event_count_of(*p2), 7u);
    // v2 events: date first, then domain, then concept id.
    auto ev = store.events_of_visit(1);
    ASSERT_EQ(ev.size(), 3u);
    EXPECT_EQ(ev[0].concept_id, "c1");
    EXPECT_EQ(ev[1].concept_id, "x1");
    EXPECT_EQ(ev[2].concept_id, "c2");
    EXPECT_FALSE(store.find_person("nobody"));
}

TEST(EventStore, CanonicalRoundTrip) {
    TempDir dir;
    auto store = load_fixture(dir);
    TempDir out;
    write_store(store, out.path().string());
    auto again = load_store_dir(out.path().string());
    EXPECT_TRUE(again == store);
    EXPECT_EQ(emit_events_csv(again), emit_events_csv(store));
    EXPECT_EQ(emit_visits_csv(again), emit_visits_csv(store));
    EXPECT_EQ(emit_persons_csv(again), emit_persons_csv(store));
}

TEST(EventStore, SmallRoundTripIsByteIdentical) {
    TempDir dir;
    const std::string persons = "person_id,birth_date,gender\na,1980-01-01,other\n";
    const std::string visits = "visit_id,person_id,visit_type,start_date,end_date,discharge_to\nva,a,exam,2000-01-01,2000-01-01,\n";
    const std::string events = "person_id,visit_id,domain,concept_id,event_date\na,va,condition,k,2000-01-01\n";
    write_file(dir.file("persons.csv"), persons);
    write_file(dir.file("visits.csv"), visits);
    write_file(dir.file("events.csv"), events);
    auto store = load_store_dir(dir.path().string());
    EXPECT_EQ(emit_persons_csv(store), persons);
    EXPECT_EQ(emit_visits_csv(store), visits);
    EXPECT_EQ(emit_events_csv(store), events);
}

TEST(EventStore, ErrorsNameTheOffendingRow) {
    TempDir dir;
    std::string bad = kEvents;
    bad += "p1,v2,condition,early,2020-02-28\n";
    try {
        load_fixture(dir, bad);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("events.csv:14"), std::string::npos) << msg;
        EXPECT_NE(msg.find("before start of visit 'v2'"), std::string::npos) << msg;
    }

    std::string wrong_owner = kEvents;
    wrong_owner += "p2,v1,condition,c9,2020-01-10\n";
    EXPECT_THROW(load_fixture(dir, wrong_owner), DataError);

    std::string no_visit = kEvents;
    no_visit += "p2,,condition,c9,2020-01-10\n";
    EXPECT_THROW(load_fixture(dir, no_visit), DataError);

    std::string malformed = kEvents;
    malformed += "p2,v5,condition\n";
    try {
        load_fixture(dir, malformed);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find(":14:"), std::string::npos);
    }

    EXPECT_THROW(load_store(dir.file("nope.csv"), dir.file("visits.csv"), dir.file("events.csv")), DataError);
}

TEST(EventStore, RejectsVisitProblems) {
    std::vector<Person> persons{{"a", parse_date("1990-01-01"), Gender::male}};
    auto visit = [](std::string id, const char* s, const char* e) {
        return VisitRecord{std::move(id), "a", "office", parse_date(s), parse_date(e), ""};
    };
    EXPECT_THROW(EventStore::build(persons, {visit("x", "2020-01-05", "2020-01-01")}, {}), DataError);
    EXPECT_THROW(EventStore::build(persons, {visit("x", "1980-01-05", "1980-01-05")}, {}), DataError);
    EXPECT_THROW(EventStore::build(persons, {visit("x", "2020-01-01", "2020-01-09"), visit("y", "2020-01-05", "2020-01-05")}, {}),
                 DataError);
    EXPECT_THROW(EventStore::build(persons, {visit("x", "2020-01-01", "2020-01-01"), visit("x", "2020-02-01", "2020-02-01")}, {}),
                 DataError);
    EXPECT_NO_THROW(EventStore::build(persons, {visit("x", "2020-01-01", "2020-01-09"), visit("y", "2020-01-09", "2020-01-09")}, {}));
}

TEST(SummaryStats, HandCountedCases) {
    std::vector<Person> persons{{"a", parse_date("1990-01-01"), Gender::female}};
    std::vector<VisitRecord> visits;
    std::vector<DomainEvent> events;
    const int per_visit[4] = {2, 3, 1, 3};
    for (int v = 0; v < 4; ++v) {
        const Date d = parse_date("2020-01-01") + 10 * v;
        visits.push_back({"v" + std::to_string(v), "a", "office", d, d, ""});
        for (int e = 0; e < per_visit[v]; ++e) {
            events.push_back({"a", "v" + std::to_string(v), Domain::condition, "c" + std::to_string(e), d});
        }
    }
    auto s = summary_stats(EventStore::build(persons, visits, events));
    EXPECT_DOUBLE_EQ(s.visits_per_person.mean, 4.0);
    EXPECT_DOUBLE_EQ(s.records_per_person.mean, 9.0);
    EXPECT_DOUBLE_EQ(s.visits_per_person.std, 0.0);
    EXPECT_THROW(summary_stats(EventStore{}), std::invalid_argument);

    auto d = describe({1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(d.q1, 1.75);
    EXPECT_DOUBLE_EQ(d.median, 2.5);
    EXPECT_DOUBLE_EQ(d.q3, 3.25);
    EXPECT_DOUBLE_EQ(d.std, std::sqrt(1.25));
}

TEST(SummaryStats, TotalsMatchIndependentRecount) {
    SynthConfig cfg;
    cfg.n_patients = 150;
    auto store = generate_synthetic(cfg, 3);
    std::map<std::string, double> visits, records;
    for (const auto& v : store.visits()) visits[v.person_id] += 1;
    for (const auto& e : store.events()) records[e.person_id] += 1;
    double vs = 0, rs = 0, vmax = 0;
    for (const auto& [id, n] : visits) {
        vs += n;
        vmax = std::max(vmax, n);
    }
    for (const auto& [id, n] : records) rs += n;
    auto s = summary_stats(store);
    EXPECT_NEAR(s.visits_per_person.mean, vs / 150.0, 1e-12);
    EXPECT_NEAR(s.records_per_person.mean, rs / 150.0, 1e-12);
    EXPECT_EQ(s.visits_per_person.max, vmax);
}

TEST(Synth, DeterministicAndValid) {
    SynthConfig cfg;
    cfg.n_patients = 200;
    auto a = generate_synthetic(cfg, 11);
    auto b = generate_synthetic(cfg, 11);
    EXPECT_EQ(emit_events_csv(a), emit_events_csv(b));
    EXPECT_EQ(emit_visits_csv(a), emit_visits_csv(b));
    EXPECT_EQ(emit_persons_csv(a), emit_persons_csv(b));
    auto c = generate_synthetic(cfg, 12);
    EXPECT_NE(emit_events_csv(a), emit_events_csv(c));
}

TEST(Synth, StoreInvariantsHoldAcrossSeeds) {
    SynthConfig cfg;
    cfg.n_patients = 80;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto store = generate_synthetic(cfg, seed);
        // Round trip through CSV re-runs every load-time validation.
        TempDir dir;
        write_store(store, dir.path().string());
        auto again = load_store_dir(dir.path().string());
        EXPECT_TRUE(again == store);
        for (std::size_t p = 0; p < store.persons().size(); ++p) {
            EXPECT_GE(store.visit_end(p) - store.visit_begin(p), 1u);
            for (const auto& v : store.visits_of(p)) EXPECT_LE(store.persons()[p].birth_date, v.start_date);
        }
    }
}

TEST(Synth, InvalidConfigListsEveryProblem) {
    SynthConfig cfg;
    cfg.p_gap = 1.5;
    cfg.p_seasonal = -0.1;
    cfg.long_gap_min_days = 300;
    auto errors = cfg.validate();
    EXPECT_EQ(errors.size(), 3u);
    EXPECT_THROW(generate_synthetic(cfg, 1), std::invalid_argument);
}

namespace {

// Fraction of visits carrying a GAP concept, split by the preceding gap.
std::pair<double, double> gap_frequencies(const EventStore& store, const SynthConfig& cfg) {
    const auto gaps = gap_concepts(cfg);
    std::size_t long_n = 0, long_hit = 0, short_n = 0, short_hit = 0;
    for (std::size_t p = 0; p < store.persons().size(); ++p) {
        for (std::size_t v = store.visit_begin(p) + 1; v < store.visit_end(p); ++v) {
            const int gap = store.visits()[v].start_date - store.visits()[v - 1].start_date;
            bool hit = false;
            for (const auto& e : store.events_of_visit(v)) {
                hit = hit || std::find(gaps.begin(), gaps.end(), e.concept_id) != gaps.end();
            }
            if (gap > 365) {
                ++long_n;
                long_hit += hit;
            } else {
                ++short_n;
                short_hit += hit;
            }
        }
    }
    return {static_cast<double>(long_hit) / long_n, short_n ? static_cast<double>(short_hit) / short_n : 0.0};
}

}  // namespace

TEST(Synth, GapSignalFrequencies) {
    SynthConfig cfg;
    auto store = generate_synthetic(cfg, 5);
    auto [after_long, after_short] = gap_frequencies(store, cfg);
    EXPECT_EQ(after_short, 0.0);
    // Binomial sampling error at ~1000+ long gaps stays well under 0.05.
    EXPECT_NEAR(after_long - after_short, cfg.p_gap, 0.05);

    cfg.p_gap = 1.0;
    cfg.n_patients = 200;
    auto forced = generate_synthetic(cfg, 5);
    EXPECT_EQ(gap_frequencies(forced, cfg).first, 1.0);
}

TEST(Synth, TogglingOneSignalLeavesOthersUntouched) {
    SynthConfig cfg;
    cfg.n_patients = 100;
    auto with = generate_synthetic(cfg, 9);
    cfg.seasonal_signal = false;
    auto without = generate_synthetic(cfg, 9);
    EXPECT_EQ(emit_visits_csv(with), emit_visits_csv(without));
    std::size_t flu = 0, other_with = 0, other_without = 0;
    for (const auto& e : with.events()) {
        if (e.concept_id.rfind("cond_flu", 0) == 0) ++flu;
        else ++other_with;
    }
    for (const auto& e : without.events()) {
        EXPECT_NE(e.concept_id.rfind("cond_flu", 0), 0u);
        ++other_without;
    }
    EXPECT_GT(flu, 0u);
    EXPECT_EQ(other_with, other_without);
}

TEST(Synth, SeasonalConceptsOnlyInConfiguredMonths) {
    SynthConfig cfg;
    cfg.n_patients = 300;
    auto store = generate_synthetic(cfg, 4);
    std::size_t seen = 0;
    for (const auto& e : store.events()) {
        if (e.concept_id.rfind("cond_flu", 0) != 0) continue;
        ++seen;
        const unsigned m = month_of(e.event_date);
        EXPECT_TRUE(m == 12 || m == 1 || m == 2) << m;
    }
    EXPECT_GT(seen, 50u);
}

TEST(Synth, VisitTypesHaveDistinctProfiles) {
    SynthConfig cfg;
    cfg.n_patients = 600;
    auto store = generate_synthetic(cfg, 2);
    std::map<std::string, std::map<std::string, int>> counts;
    for (std::size_t v = 0; v < store.visits().size(); ++v) {
        for (const auto& e : store.events_of_visit(v)) {
            if (e.domain == Domain::condition) ++counts[store.visits()[v].visit_type][e.concept_id];
        }
    }
    auto top = [&](const std::string& type) {
        std::string best;
        int n = -1;
        for (const auto& [c, k] : counts[type]) {
            if (k > n) {
                n = k;
                best = c;
            }
        }
        return best;
    };
    EXPECT_NE(top("outpatient"), top("inpatient"));
}
