#pragma once

// Twelve hand-traced persons for the shipped cohort definitions. Day 0 is
// 2010-01-01; every expected label below was worked out by hand from the
// visit list, not by running the engine.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "cehr/date.hpp"
#include "cehr/event_store.hpp"

namespace cehr::testing {

struct FixtureBuilder {
    std::vector<Person> persons;
    std::vector<VisitRecord> visits;
    std::vector<DomainEvent> events;
    Date day0 = make_date(2010, 1, 1);

    void person(const std::string& pid) { persons.push_back({pid, make_date(1950, 6, 1), Gender::female}); }
    std::string visit(const std::string& pid, const std::string& type, int start, int end = -1,
                      const std::string& discharge = "") {
        const std::string vid = pid + "_v" + std::to_string(visits.size());
        visits.push_back({vid, pid, type, day0 + start, day0 + (end < 0 ? start : end), discharge});
        return vid;
    }
    void event(const std::string& vid, const std::string& concept_id, int day) {
        const auto& v = *std::find_if(visits.begin(), visits.end(), [&](const VisitRecord& r) { return r.visit_id == vid; });
        const Domain d = concept_id.rfind("med_", 0) == 0 ? Domain::medication
                         : concept_id.rfind("proc_", 0) == 0 ? Domain::procedure
                                                              : Domain::condition;
        events.push_back({v.person_id, vid, d, concept_id, day0 + day});
    }
    EventStore build() const { return EventStore::build(persons, visits, events); }
};

inline EventStore cohort_fixture() {
    FixtureBuilder b;
    std::string v;

    b.person("P01");  // readmitted 10 days after an HF stay
    v = b.visit("P01", "outpatient", -100);
    b.event(v, "cond_hf", -100);
    b.event(v, "med_diuretic", -100);
    v = b.visit("P01", "inpatient", 0, 3, "home");
    b.event(v, "cond_hf", 0);
    b.event(v, "proc_0007", 1);
    v = b.visit("P01", "inpatient", 13, 14, "home");
    b.event(v, "cond_0003", 13);

    b.person("P02");  // readmitted exactly 30 days after discharge
    v = b.visit("P02", "emergency+inpatient", 0, 2, "nursing");
    b.event(v, "cond_hf", 0);
    b.event(v, "med_diuretic", 1);
    v = b.visit("P02", "inpatient", 32, 33, "other");
    b.event(v, "cond_0004", 32);

    b.person("P03");  // readmitted 31 days after discharge
    v = b.visit("P03", "inpatient", 0, 2, "home");
    b.event(v, "cond_hf", 0);
    b.event(v, "med_diuretic", 0);
    v = b.visit("P03", "inpatient", 33, 35, "other");
    b.event(v, "cond_0004", 33);

    b.person("P04");  // HF stay without any HF treatment; dies 5 days after discharge
    v = b.visit("P04", "inpatient", 0, 1, "home");
    b.event(v, "cond_hf", 0);
    v = b.visit("P04", "inpatient", 5, 6, "other");
    b.event(v, "cond_0001", 5);
    b.event(v, "cond_death", 6);

    b.person("P05");  // T2DM, heart failure 400 days later
    v = b.visit("P05", "office", 0);
    b.event(v, "cond_t2dm", 0);
    b.event(v, "med_metformin", 0);
    v = b.visit("P05", "office", 400);
    b.event(v, "cond_hf", 400);

    b.person("P06");  // heart failure before T2DM
    v = b.visit("P06", "office", 0);
    b.event(v, "cond_hf", 0);
    v = b.visit("P06", "office", 50);
    b.event(v, "cond_t2dm", 50);

    b.person("P07");  // T2DM and heart failure on the same day
    v = b.visit("P07", "office", 0);
    b.event(v, "cond_t2dm", 0);
    b.event(v, "cond_hf", 0);

    b.person("P08");  // death recorded on the discharge date itself
    v = b.visit("P08", "inpatient", 0, 4, "home");
    b.event(v, "cond_0002", 0);
    b.event(v, "cond_death", 4);

    b.person("P09");  // 31 visits inside the 540-day observation window
    for (int k = 0; k < 31; ++k) {
        v = b.visit("P09", "office", 10 * k);
        b.event(v, "cond_0005", 10 * k);
    }

    b.person("P10");  // hospitalized 800 days after the first visit
    v = b.visit("P10", "office", 0);
    b.event(v, "cond_0001", 0);
    v = b.visit("P10", "office", 100);
    b.event(v, "cond_0002", 100);
    v = b.visit("P10", "inpatient", 800, 802, "other");
    b.event(v, "cond_0003", 800);

    b.person("P11");  // second visit falls in the hold-off period
    v = b.visit("P11", "office", 0);
    b.event(v, "cond_0001", 0);
    v = b.visit("P11", "inpatient", 600, 601);
    b.event(v, "cond_0002", 600);

    b.person("P12");  // T2DM without heart failure; history reaching back 400 days
    v = b.visit("P12", "office", -400);
    b.event(v, "cond_0001", -400);
    v = b.visit("P12", "office", -100);
    b.event(v, "cond_0002", -100);
    v = b.visit("P12", "office", 0);
    b.event(v, "cond_t2dm", 0);
    v = b.visit("P12", "office", 30);
    b.event(v, "cond_0003", 30);

    return b.build();
}

struct ExpectedExample {
    int index_day;
    int label;
};

/// cohort name -> person -> (index day, label); absent persons are excluded.
inline std::map<std::string, std::map<std::string, ExpectedExample>> cohort_fixture_expected() {
    return {
        {"t2dm_hf", {{"P05", {0, 1}}, {"P12", {0, 0}}}},
        {"hf_readmit", {{"P01", {3, 1}}, {"P02", {2, 1}}, {"P03", {2, 0}}}},
        {"discharge_home_death",
         {{"P01", {3, 0}}, {"P02", {2, 0}}, {"P03", {2, 0}}, {"P04", {1, 1}}, {"P08", {4, 0}}}},
        {"hospitalization",
         {{"P01", {-100, 0}},
          {"P02", {0, 0}},
          {"P03", {0, 0}},
          {"P04", {0, 0}},
          {"P05", {0, 0}},
          {"P06", {0, 0}},
          {"P10", {0, 1}},
          {"P12", {-400, 0}}}},
    };
}

}  // namespace cehr::testing
