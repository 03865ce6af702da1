#include "cehr/synth.hpp"
#include "cehr/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace cehr {

namespace {

enum Stream : std::uint32_t { kStructure = 1, kConcepts, kGap, kSeasonal, kStoryline, kProfile };

Rng stream_rng(std::uint64_t seed, Stream stream, std::uint64_t patient) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(patient),
                      static_cast<std::uint32_t>(patient >> 32)};
    return Rng(seq);
}

bool bernoulli(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

std::string numbered(const char* prefix, std::size_t i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s_%04zu", prefix, i);
    return buf;
}

bool is_inpatient(const std::string& type) { return type.find("inpatient") != std::string::npos; }

struct Profiles {
    // [type][domain] -> (concept ids in rank order, sampler over ranks)
    std::vector<std::array<std::vector<std::string>, 3>> ranked;
    std::array<std::discrete_distribution<std::size_t>, 3> zipf;
};

Profiles make_profiles(const SynthConfig& cfg, std::uint64_t seed) {
    Profiles out;
    const std::array<std::size_t, 3> sizes{cfg.n_conditions, cfg.n_procedures, cfg.n_medications};
    const std::array<const char*, 3> prefixes{"cond", "proc", "med"};
    for (std::size_t d = 0; d < 3; ++d) {
        std::vector<double> w(sizes[d]);
        for (std::size_t r = 0; r < w.size(); ++r) w[r] = 1.0 / std::pow(static_cast<double>(r + 1), cfg.zipf_exponent);
        out.zipf[d] = std::discrete_distribution<std::size_t>(w.begin(), w.end());
    }
    Rng rng = stream_rng(seed, kProfile, 0);
    const std::size_t n_profiles = cfg.visit_type_signal ? cfg.visit_type_mix.size() : 1;
    for (std::size_t t = 0; t < n_profiles; ++t) {
        std::array<std::vector<std::string>, 3> ranked;
        for (std::size_t d = 0; d < 3; ++d) {
            std::vector<std::size_t> perm(sizes[d]);
            std::iota(perm.begin(), perm.end(), 1);
            std::shuffle(perm.begin(), perm.end(), rng);
            for (auto i : perm) ranked[d].push_back(numbered(prefixes[d], i));
        }
        out.ranked.push_back(std::move(ranked));
    }
    return out;
}

}  // namespace

std::vector<std::string> SynthConfig::validate() const {
    std::vector<std::string> errors;
    auto prob = [&](const char* name, double p) {
        if (!(p >= 0.0 && p <= 1.0)) errors.push_back(std::string(name) + " must lie in [0,1]");
    };
    prob("p_long_after_long", p_long_after_long);
    prob("p_long_after_short", p_long_after_short);
    prob("p_gap", p_gap);
    prob("p_seasonal", p_seasonal);
    prob("p_t2dm", p_t2dm);
    prob("hf_hazard_t2dm", hf_hazard_t2dm);
    prob("hf_hazard_base", hf_hazard_base);
    prob("p_death_given_hf", p_death_given_hf);
    prob("p_death_base", p_death_base);
    if (n_patients < 1) errors.push_back("n_patients must be >= 1");
    if (!(mean_visits >= 1.0)) errors.push_back("mean_visits must be >= 1");
    if (max_visits < 1) errors.push_back("max_visits must be >= 1");
    if (!(mean_concepts_per_visit >= 1.0)) errors.push_back("mean_concepts_per_visit must be >= 1");
    if (n_conditions < 1 || n_procedures < 1 || n_medications < 1) errors.push_back("vocabulary sizes must be >= 1");
    if (!(zipf_exponent >= 0.0)) errors.push_back("zipf_exponent must be >= 0");
    if (visit_type_mix.empty()) errors.push_back("visit_type_mix must not be empty");
    double total = 0;
    std::set<std::string> names;
    for (const auto& [name, w] : visit_type_mix) {
        if (name.empty() || name.find(',') != std::string::npos) errors.push_back("bad visit type name '" + name + "'");
        if (!names.insert(name).second) errors.push_back("duplicate visit type '" + name + "'");
        if (!(w >= 0.0)) errors.push_back("visit type weight for '" + name + "' must be >= 0");
        total += w;
    }
    if (!visit_type_mix.empty() && !(total > 0.0)) errors.push_back("visit_type_mix weights must sum to > 0");
    if (first_year > last_year) errors.push_back("first_year must not exceed last_year");
    if (min_age_years < 0 || min_age_years > max_age_years) errors.push_back("age range is invalid");
    if (long_gap_min_days <= 365) errors.push_back("long_gap_min_days must exceed 365");
    if (long_gap_max_days < long_gap_min_days) errors.push_back("long_gap_max_days must be >= long_gap_min_days");
    if (!(short_gap_mean_days >= 1.0)) errors.push_back("short_gap_mean_days must be >= 1");
    for (unsigned m : seasonal_months) {
        if (m < 1 || m > 12) errors.push_back("seasonal month " + std::to_string(m) + " outside 1..12");
    }
    if (gap_signal && n_gap_concepts < 1) errors.push_back("n_gap_concepts must be >= 1");
    if (seasonal_signal && n_seasonal_concepts < 1) errors.push_back("n_seasonal_concepts must be >= 1");
    return errors;
}

std::vector<std::string> gap_concepts(const SynthConfig& config) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= config.n_gap_concepts; ++i) out.push_back(numbered("cond_gap", i));
    return out;
}

std::vector<std::string> seasonal_concepts(const SynthConfig& config) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i <= config.n_seasonal_concepts; ++i) out.push_back(numbered("cond_flu", i));
    return out;
}

std::vector<std::pair<std::string, std::string>> synthetic_hierarchy(const SynthConfig& config) {
    std::vector<std::pair<std::string, std::string>> rows;
    auto add = [&](const char* prefix, std::size_t n) {
        for (std::size_t i = 1; i <= n; ++i) {
            char group[48];
            std::snprintf(group, sizeof group, "%s_g%02zu", prefix, i / 10);
            rows.emplace_back(numbered(prefix, i), group);
        }
    };
    add("cond", config.n_conditions);
    add("proc", config.n_procedures);
    add("med", config.n_medications);
    return rows;
}

EventStore generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
    if (auto errors = cfg.validate(); !errors.empty()) {
        std::string msg = "invalid synth config:";
        for (const auto& e : errors) msg += " " + e + ";";
        throw std::invalid_argument(msg);
    }
    Profiles profiles = make_profiles(cfg, seed);
    const auto gaps = gap_concepts(cfg);
    const auto flu = seasonal_concepts(cfg);

    std::vector<double> mix;
    for (const auto& entry : cfg.visit_type_mix) mix.push_back(entry.second);
    const Date range_lo = make_date(cfg.first_year, 1, 1);
    const Date range_hi = make_date(cfg.last_year, 12, 31);

    std::vector<Person> persons;
    std::vector<VisitRecord> visits;
    std::vector<DomainEvent> events;

    for (std::size_t p = 0; p < cfg.n_patients; ++p) {
        const std::string pid = numbered("P", p + 1);
        Rng s = stream_rng(seed, kStructure, p);
        Rng c = stream_rng(seed, kConcepts, p);
        Rng g = stream_rng(seed, kGap, p);
        Rng f = stream_rng(seed, kSeasonal, p);
        Rng t = stream_rng(seed, kStoryline, p);

        // Structure: demographics, visit dates and types.
        const double gender_draw = std::uniform_real_distribution<double>(0, 1)(s);
        const Gender gender = gender_draw < 0.49 ? Gender::male : gender_draw < 0.98 ? Gender::female : Gender::other;
        const Date first = std::uniform_int_distribution<Date>(range_lo, range_hi)(s);
        const int age = std::uniform_int_distribution<int>(cfg.min_age_years, cfg.max_age_years)(s);
        const Date birth = first - static_cast<Date>(std::floor(age * kDaysPerYear)) -
                           std::uniform_int_distribution<Date>(0, 364)(s);
        persons.push_back({pid, birth, gender});

        std::size_t n_visits = 1 + std::poisson_distribution<std::size_t>(cfg.mean_visits - 1.0)(s);
        n_visits = std::min(n_visits, cfg.max_visits);
        std::discrete_distribution<std::size_t> type_pick(mix.begin(), mix.end());
        bool long_regime = bernoulli(s, cfg.p_long_after_short);

        const std::size_t first_visit = visits.size();
        std::vector<int> gap_before(n_visits, 0);
        for (std::size_t k = 0; k < n_visits; ++k) {
            VisitRecord v;
            v.visit_id = pid + "_v" + std::to_string(k + 1);
            v.person_id = pid;
            v.visit_type = cfg.visit_type_mix[type_pick(s)].first;
            const int duration = is_inpatient(v.visit_type) ? std::uniform_int_distribution<int>(1, 7)(s) : 0;
            if (is_inpatient(v.visit_type)) {
                const double d = std::uniform_real_distribution<double>(0, 1)(s);
                v.discharge_to = d < 0.8 ? "home" : d < 0.95 ? "nursing" : "other";
            }
            if (k == 0) {
                v.start_date = first;
            } else {
                long_regime = bernoulli(s, long_regime ? cfg.p_long_after_long : cfg.p_long_after_short);
                int gap;
                if (long_regime) {
                    gap = std::uniform_int_distribution<int>(cfg.long_gap_min_days, cfg.long_gap_max_days)(s);
                } else {
                    const double e = std::exponential_distribution<double>(1.0 / cfg.short_gap_mean_days)(s);
                    gap = std::clamp(static_cast<int>(std::lround(e)), 1, 365);
                }
                const auto& prev = visits.back();
                gap = std::max(gap, prev.end_date - prev.start_date);
                gap_before[k] = gap;
                v.start_date = prev.start_date + gap;
            }
            v.end_date = v.start_date + duration;
            visits.push_back(std::move(v));
        }

        auto emit = [&](const VisitRecord& v, Domain d, const std::string& concept_id, Date date) {
            events.push_back({pid, v.visit_id, d, concept_id, date});
        };

        // Background concepts, drawn from the visit type's profile.
        for (std::size_t k = 0; k < n_visits; ++k) {
            const auto& v = visits[first_visit + k];
            std::size_t type_index = 0;
            if (cfg.visit_type_signal) {
                while (cfg.visit_type_mix[type_index].first != v.visit_type) ++type_index;
            }
            const auto& ranked = profiles.ranked[type_index];
            std::size_t n = 1 + std::poisson_distribution<std::size_t>(cfg.mean_concepts_per_visit - 1.0)(c);
            if (is_inpatient(v.visit_type)) n += 2;
            for (std::size_t i = 0; i < n; ++i) {
                const double u = std::uniform_real_distribution<double>(0, 1)(c);
                const std::size_t d = u < 0.5 ? 0 : u < 0.75 ? 1 : 2;
                const std::string& concept_id = ranked[d][profiles.zipf[d](c)];
                const Date date = std::uniform_int_distribution<Date>(v.start_date, v.end_date)(c);
                emit(v, static_cast<Domain>(d), concept_id, date);
            }
        }

        if (cfg.gap_signal) {
            for (std::size_t k = 1; k < n_visits; ++k) {
                if (gap_before[k] <= 365) continue;
                if (bernoulli(g, cfg.p_gap)) {
                    const auto& v = visits[first_visit + k];
                    emit(v, Domain::condition, gaps[std::uniform_int_distribution<std::size_t>(0, gaps.size() - 1)(g)],
                         v.start_date);
                }
            }
        }

        if (cfg.seasonal_signal) {
            for (std::size_t k = 0; k < n_visits; ++k) {
                const auto& v = visits[first_visit + k];
                const unsigned m = month_of(v.start_date);
                if (std::find(cfg.seasonal_months.begin(), cfg.seasonal_months.end(), m) == cfg.seasonal_months.end()) {
                    continue;
                }
                if (bernoulli(f, cfg.p_seasonal)) {
                    emit(v, Domain::condition, flu[std::uniform_int_distribution<std::size_t>(0, flu.size() - 1)(f)],
                         v.start_date);
                }
            }
        }

        if (cfg.storyline) {
            const bool t2dm = bernoulli(t, cfg.p_t2dm);
            const std::size_t t2dm_onset = std::uniform_int_distribution<std::size_t>(0, n_visits - 1)(t);
            bool hf = false;
            for (std::size_t k = 0; k < n_visits; ++k) {
                const auto& v = visits[first_visit + k];
                if (t2dm && k == t2dm_onset) {
                    emit(v, Domain::condition, kConceptT2dm, v.start_date);
                    emit(v, Domain::medication, kConceptMetformin, v.start_date);
                } else if (t2dm && k > t2dm_onset) {
                    if (bernoulli(t, 0.3)) emit(v, Domain::condition, kConceptT2dm, v.start_date);
                    if (bernoulli(t, 0.5)) emit(v, Domain::medication, kConceptMetformin, v.start_date);
                }
                if (!hf) {
                    const double hazard = (t2dm && k > t2dm_onset) ? cfg.hf_hazard_t2dm : cfg.hf_hazard_base;
                    if (bernoulli(t, hazard)) {
                        hf = true;
                        emit(v, Domain::condition, kConceptHf, v.start_date);
                        emit(v, Domain::procedure, kConceptBnpTest, v.start_date);
                    }
                } else {
                    const double p_hf = is_inpatient(v.visit_type) ? 0.8 : 0.4;
                    if (bernoulli(t, p_hf)) emit(v, Domain::condition, kConceptHf, v.start_date);
                    if (bernoulli(t, 0.5)) emit(v, Domain::medication, kConceptDiuretic, v.start_date);
                }
            }
            if (bernoulli(t, hf ? cfg.p_death_given_hf : cfg.p_death_base)) {
                const auto& last = visits[first_visit + n_visits - 1];
                emit(last, Domain::condition, kConceptDeath, last.end_date);
            }
        }
    }
    return EventStore::build(std::move(persons), std::move(visits), std::move(events));
}

}  // namespace cehr
