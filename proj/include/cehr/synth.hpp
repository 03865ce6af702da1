#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cehr/event_store.hpp"

namespace cehr {

/// Knobs for the synthetic generator. Each planted signal draws from its own
/// random stream, so switching one off leaves everything else untouched.
struct SynthConfig {
    std::size_t n_patients = 1000;
    double mean_visits = 8.0;  // 1 + Poisson(mean - 1), capped at max_visits
    std::size_t max_visits = 60;
    double mean_concepts_per_visit = 4.0;
    std::size_t n_conditions = 120;
    std::size_t n_procedures = 60;
    std::size_t n_medications = 80;
    /// Zipf exponent of within-profile concept frequencies.
    double zipf_exponent = 1.0;
    std::vector<std::pair<std::string, double>> visit_type_mix = {
        {"outpatient", 0.32}, {"office", 0.25}, {"emergency", 0.10}, {"inpatient", 0.12},
        {"emergency+inpatient", 0.05}, {"home", 0.06}, {"exam", 0.10}};
    int first_year = 2000;
    int last_year = 2012;  // first visits fall in [first_year, last_year]
    int min_age_years = 18;
    int max_age_years = 85;

    // Inter-visit gaps (start to start) follow a two-state regime.
    double p_long_after_long = 0.85;
    double p_long_after_short = 0.10;
    int long_gap_min_days = 366;
    int long_gap_max_days = 900;
    double short_gap_mean_days = 45.0;

    bool gap_signal = true;
    double p_gap = 0.7;
    std::size_t n_gap_concepts = 4;

    bool seasonal_signal = true;
    std::vector<unsigned> seasonal_months = {12, 1, 2};
    double p_seasonal = 0.5;
    std::size_t n_seasonal_concepts = 4;

    bool visit_type_signal = true;

    /// T2DM -> heart failure -> death storyline backing the shipped cohorts.
    bool storyline = true;
    double p_t2dm = 0.25;
    double hf_hazard_t2dm = 0.08;  // per visit after diagnosis
    double hf_hazard_base = 0.01;
    double p_death_given_hf = 0.35;
    double p_death_base = 0.03;

    /// Every violated constraint, empty when valid.
    std::vector<std::string> validate() const;
};

/// Deterministic for a fixed (config, seed).
EventStore generate_synthetic(const SynthConfig& config, std::uint64_t seed);

/// Concept ids the generator plants for each signal.
std::vector<std::string> gap_concepts(const SynthConfig& config);
std::vector<std::string> seasonal_concepts(const SynthConfig& config);
/// Hierarchy rows (concept_id, rollup_code) for every background concept.
std::vector<std::pair<std::string, std::string>> synthetic_hierarchy(const SynthConfig& config);

inline constexpr const char* kConceptT2dm = "cond_t2dm";
inline constexpr const char* kConceptHf = "cond_hf";
inline constexpr const char* kConceptDeath = "cond_death";
inline constexpr const char* kConceptMetformin = "med_metformin";
inline constexpr const char* kConceptDiuretic = "med_diuretic";
inline constexpr const char* kConceptBnpTest = "proc_bnp";

}  // namespace cehr
