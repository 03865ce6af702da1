#include "cehr/sequence.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "cehr/csv.hpp"

namespace cehr {

std::string_view to_string(Representation r) {
    switch (r) {
        case Representation::cehr: return "cehr";
        case Representation::behrt_style: return "behrt_style";
        case Representation::medbert_style: return "medbert_style";
        default: return "no_vs_ve";
    }
}

std::optional<Representation> parse_representation(std::string_view s) {
    for (auto r : kAllRepresentations) {
        if (to_string(r) == s) return r;
    }
    return std::nullopt;
}

std::string att_token(int interval_days) {
    if (interval_days < 0) throw std::invalid_argument("att_token: negative interval " + std::to_string(interval_days));
    if (interval_days < 28) return "W" + std::to_string(interval_days / 7);
    if (interval_days <= 365) return "M" + std::to_string(std::clamp(interval_days / 30, 1, 11));
    return "LT";
}

Vocabulary::Vocabulary() {
    for (const char* t : {"[PAD]", "[MASK]", "[UNK]", "[SEP]", "VS", "VE"}) add(t);
    for (int w = 0; w <= 3; ++w) add("W" + std::to_string(w));
    for (int m = 1; m <= 11; ++m) add("M" + std::to_string(m));
    add("LT");
}

void Vocabulary::add(std::string token) {
    const auto id = static_cast<std::int32_t>(tokens_.size());
    if (!ids_.emplace(token, id).second) throw std::invalid_argument("vocabulary: duplicate token '" + token + "'");
    tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::from_store(const EventStore& store) {
    Vocabulary v;
    std::set<std::string> concepts, types;
    for (const auto& e : store.events()) concepts.insert(e.concept_id);
    for (const auto& visit : store.visits()) types.insert(visit.visit_type);
    for (const auto& c : concepts) {
        if (v.ids_.count(c)) throw std::invalid_argument("vocabulary: concept id '" + c + "' collides with a reserved token");
        v.add(c);
    }
    v.visit_types_.assign(types.begin(), types.end());
    return v;
}

std::int32_t Vocabulary::id(std::string_view token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

std::int32_t Vocabulary::type_id(std::string_view visit_type) const {
    auto it = std::lower_bound(visit_types_.begin(), visit_types_.end(), visit_type);
    if (it == visit_types_.end() || *it != visit_type) {
        throw std::invalid_argument("vocabulary: unknown visit type '" + std::string(visit_type) + "'");
    }
    return static_cast<std::int32_t>(it - visit_types_.begin()) + 1;
}

void Vocabulary::save(const std::string& vocab_path, const std::string& types_path) const {
    std::ofstream out(vocab_path);
    if (!out) throw DataError(vocab_path + ": cannot open for writing");
    out << "token,id\n";
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << ',' << i << '\n';
    std::ofstream types(types_path);
    if (!types) throw DataError(types_path + ": cannot open for writing");
    types << "visit_type,id\n";
    for (std::size_t i = 0; i < visit_types_.size(); ++i) types << visit_types_[i] << ',' << i + 1 << '\n';
}

Vocabulary Vocabulary::load(const std::string& vocab_path, const std::string& types_path) {
    Vocabulary fresh;
    Vocabulary v;
    v.tokens_.clear();
    v.ids_.clear();
    read_csv(vocab_path, {"token", "id"}, [&](const auto& f, std::size_t line) {
        if (f[1] != std::to_string(v.tokens_.size())) throw_row_error(vocab_path, line, "ids must be 0,1,2,... in order");
        v.add(std::string(f[0]));
    });
    if (v.tokens_.size() < fresh.tokens_.size() ||
        !std::equal(fresh.tokens_.begin(), fresh.tokens_.end(), v.tokens_.begin())) {
        throw DataError(vocab_path + ": reserved tokens missing or out of place");
    }
    read_csv(types_path, {"visit_type", "id"}, [&](const auto& f, std::size_t line) {
        if (f[1] != std::to_string(v.visit_types_.size() + 1)) throw_row_error(types_path, line, "ids must be 1,2,3,...");
        if (!v.visit_types_.empty() && !(v.visit_types_.back() < f[0])) throw_row_error(types_path, line, "types must be sorted");
        v.visit_types_.emplace_back(f[0]);
    });
    return v;
}

std::size_t TokenSequence::length() const {
    std::size_t n = 0;
    for (auto m : attention_mask) n += m;
    return n;
}

void TokenSequence::push(std::int32_t id, double time, double age, std::int32_t segment, std::int32_t type) {
    token_ids.push_back(id);
    time_years.push_back(time);
    age_years.push_back(age);
    visit_segment.push_back(segment);
    visit_type_ids.push_back(type);
    attention_mask.push_back(1);
}

std::vector<VisitContent> all_visits(const EventStore& store, std::size_t person_index) {
    std::vector<VisitContent> out;
    for (std::size_t v = store.visit_begin(person_index); v < store.visit_end(person_index); ++v) {
        VisitContent c{&store.visits()[v], {}};
        for (const auto& e : store.events_of_visit(v)) c.events.push_back(&e);
        out.push_back(std::move(c));
    }
    return out;
}

TokenSequence build_sequence(const Person& person, std::span<const VisitContent> visits, Representation variant,
                             const Vocabulary& vocab) {
    std::vector<const VisitContent*> kept;
    for (const auto& v : visits) {
        if (!v.events.empty()) kept.push_back(&v);
    }
    if (kept.empty()) throw std::invalid_argument("build_sequence: person '" + person.person_id + "' has no visits with events");

    TokenSequence seq;
    seq.person_id = person.person_id;
    for (std::size_t k = 0; k < kept.size(); ++k) {
        const VisitRecord& visit = *kept[k]->visit;
        const double time = visit.start_date / kDaysPerYear;
        const double age = (visit.start_date - person.birth_date) / kDaysPerYear;
        const std::int32_t segment = k % 2 == 0 ? 1 : 2;
        const std::int32_t type = vocab.type_id(visit.visit_type);
        if (k > 0) {
            const std::int32_t prev_segment = segment == 1 ? 2 : 1;
            const int interval = visit.start_date - kept[k - 1]->visit->start_date;
            if (variant == Representation::cehr || variant == Representation::no_vs_ve) {
                seq.push(vocab.id(att_token(interval)), time, age, prev_segment, 0);
            } else if (variant == Representation::behrt_style) {
                seq.push(Vocabulary::kSep, time, age, prev_segment, 0);
            }
        }
        if (variant == Representation::cehr) seq.push(Vocabulary::kVs, time, age, segment, type);
        for (const DomainEvent* e : kept[k]->events) seq.push(vocab.id(e->concept_id), time, age, segment, type);
        if (variant == Representation::cehr) seq.push(Vocabulary::kVe, time, age, segment, type);
    }
    return seq;
}

TokenSequence build_sequence(const EventStore& store, std::string_view person_id, Representation variant,
                             const Vocabulary& vocab) {
    auto p = store.find_person(person_id);
    if (!p) throw std::invalid_argument("build_sequence: unknown person '" + std::string(person_id) + "'");
    const auto visits = all_visits(store, *p);
    return build_sequence(store.persons()[*p], visits, variant, vocab);
}

TokenSequence window(const TokenSequence& seq, std::size_t context_window, WindowMode mode, Rng& rng) {
    if (context_window < 1) throw std::invalid_argument("window: context_window must be >= 1");
    const std::size_t n = seq.length();
    std::size_t start = 0;
    if (n > context_window) {
        start = mode == WindowMode::finetune_pre_truncate
                    ? n - context_window
                    : std::uniform_int_distribution<std::size_t>(0, n - context_window)(rng);
    }
    const std::size_t take = std::min(n, context_window);
    TokenSequence out;
    out.person_id = seq.person_id;
    auto copy = [&](const auto& src, auto& dst, auto pad) {
        dst.assign(src.begin() + static_cast<std::ptrdiff_t>(start),
                   src.begin() + static_cast<std::ptrdiff_t>(start + take));
        dst.resize(context_window, pad);
    };
    copy(seq.token_ids, out.token_ids, Vocabulary::kPad);
    copy(seq.time_years, out.time_years, 0.0);
    copy(seq.age_years, out.age_years, 0.0);
    copy(seq.visit_segment, out.visit_segment, 0);
    copy(seq.visit_type_ids, out.visit_type_ids, 0);
    copy(seq.attention_mask, out.attention_mask, std::uint8_t{0});
    return out;
}

std::vector<std::string> check_window(const TokenSequence& seq, std::size_t context_window) {
    std::vector<std::string> errors;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) errors.push_back(seq.person_id + ": " + what);
    };
    expect(seq.token_ids.size() == context_window, "window size " + std::to_string(seq.token_ids.size()));
    expect(seq.time_years.size() == seq.size() && seq.age_years.size() == seq.size() &&
               seq.visit_segment.size() == seq.size() && seq.visit_type_ids.size() == seq.size() &&
               seq.attention_mask.size() == seq.size(),
           "channel lengths differ");
    if (!errors.empty()) return errors;
    bool in_pad = false;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const bool pad = seq.token_ids[i] == Vocabulary::kPad;
        expect(pad == (seq.attention_mask[i] == 0), "mask disagrees with PAD at " + std::to_string(i));
        if (pad) {
            in_pad = true;
            expect(seq.visit_segment[i] == 0 && seq.visit_type_ids[i] == 0, "pad channels not zeroed at " + std::to_string(i));
        } else {
            expect(!in_pad, "token after padding at " + std::to_string(i));
        }
    }
    return errors;
}

std::vector<std::string> check_sequence(const TokenSequence& seq, Representation variant, const Vocabulary& vocab,
                                        std::optional<std::size_t> n_visits) {
    std::vector<std::string> errors;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) errors.push_back(seq.person_id + " [" + std::string(to_string(variant)) + "]: " + what);
    };
    const std::size_t n = seq.size();
    expect(seq.time_years.size() == n && seq.age_years.size() == n && seq.visit_segment.size() == n &&
               seq.visit_type_ids.size() == n && seq.attention_mask.size() == n,
           "channel lengths differ");
    if (!errors.empty()) return errors;
    const std::size_t len = seq.length();
    for (std::size_t i = 0; i < n; ++i) {
        expect((i < len) == (seq.attention_mask[i] != 0), "padding is not a trailing block");
        const auto id = seq.token_ids[i];
        expect(id >= 0 && static_cast<std::size_t>(id) < vocab.size(), "token id out of range");
        if (i >= len) expect(id == Vocabulary::kPad, "non-PAD token under a false mask");
    }
    if (!errors.empty()) return errors;

    std::size_t vs = 0, ve = 0, att = 0, sep = 0, flips = 0;
    bool open = false;
    for (std::size_t i = 0; i < len; ++i) {
        const auto id = seq.token_ids[i];
        const bool artificial_gap = vocab.is_att(id) || id == Vocabulary::kSep;
        expect(id != Vocabulary::kPad && id != Vocabulary::kMask, "PAD or MASK inside the sequence");
        expect(seq.visit_segment[i] == 1 || seq.visit_segment[i] == 2, "segment outside {1,2}");
        expect(artificial_gap == (seq.visit_type_ids[i] == 0), "visit type must be 0 exactly on ATT/SEP");
        if (i == 0) {
            expect(seq.visit_segment[0] == 1, "first segment is not 1");
        } else {
            expect(seq.time_years[i] >= seq.time_years[i - 1], "time decreases at " + std::to_string(i));
            expect(seq.age_years[i] >= seq.age_years[i - 1], "age decreases at " + std::to_string(i));
            if (seq.visit_segment[i] != seq.visit_segment[i - 1]) {
                ++flips;
                const auto prev = seq.token_ids[i - 1];
                if (variant == Representation::cehr) expect(id == Vocabulary::kVs, "segment changes away from VS");
                if (variant == Representation::behrt_style) expect(prev == Vocabulary::kSep, "segment changes away from SEP");
                if (variant == Representation::no_vs_ve) expect(vocab.is_att(prev), "segment changes away from ATT");
            }
        }
        if (id == Vocabulary::kVs) {
            expect(!open, "VS inside an open visit");
            open = true;
            ++vs;
        } else if (id == Vocabulary::kVe) {
            expect(open, "VE without VS");
            open = false;
            ++ve;
        } else if (vocab.is_att(id)) {
            ++att;
            if (variant == Representation::cehr) {
                expect(i > 0 && seq.token_ids[i - 1] == Vocabulary::kVe, "ATT not preceded by VE");
                expect(i + 1 < len && seq.token_ids[i + 1] == Vocabulary::kVs, "ATT not followed by VS");
            } else {
                expect(i > 0 && i + 1 < len, "ATT at a sequence edge");
            }
        } else if (id == Vocabulary::kSep) {
            ++sep;
        }
    }
    expect(!open, "unclosed visit");
    const std::size_t visits = flips + 1;
    if (n_visits) expect(visits == *n_visits, "segment flips imply " + std::to_string(visits) + " visits");
    switch (variant) {
        case Representation::cehr:
            expect(vs == visits && ve == visits, "VS/VE count differs from visit count");
            expect(att + 1 == visits && sep == 0, "ATT count is not visits-1");
            break;
        case Representation::no_vs_ve:
            expect(vs == 0 && ve == 0 && sep == 0, "unexpected VS/VE/SEP");
            expect(att + 1 == visits, "ATT count is not visits-1");
            break;
        case Representation::behrt_style:
            expect(vs == 0 && ve == 0 && att == 0, "unexpected VS/VE/ATT");
            expect(sep + 1 == visits, "SEP count is not visits-1");
            break;
        case Representation::medbert_style:
            expect(vs == 0 && ve == 0 && att == 0 && sep == 0, "artificial tokens present");
            break;
    }
    return errors;
}

MlmMask apply_mlm_mask(const TokenSequence& seq, std::size_t vocab_size, Rng& rng, const MlmOptions& options) {
    if (!(options.rate >= 0.0 && options.rate <= 1.0)) throw std::invalid_argument("apply_mlm_mask: rate outside [0,1]");
    if (vocab_size <= static_cast<std::size_t>(Vocabulary::kUnk)) throw std::invalid_argument("apply_mlm_mask: vocabulary too small");
    const std::size_t n = seq.size();
    std::vector<std::size_t> maskable;
    for (std::size_t i = 0; i < n; ++i) {
        const auto id = seq.token_ids[i];
        if (!seq.attention_mask[i] || id == Vocabulary::kPad || id == Vocabulary::kMask) continue;
        if (!options.mask_artificial_tokens && id < Vocabulary::kFirstConcept && id != Vocabulary::kUnk) continue;
        maskable.push_back(i);
    }
    if (maskable.empty()) throw std::invalid_argument("apply_mlm_mask: nothing maskable in '" + seq.person_id + "'");

    MlmMask out{seq.token_ids, std::vector<std::int32_t>(n, 0), std::vector<double>(n, 0.0)};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::int32_t> random_token(Vocabulary::kUnk, static_cast<std::int32_t>(vocab_size) - 1);
    auto select = [&](std::size_t i) {
        out.labels[i] = seq.token_ids[i];
        out.weights[i] = 1.0;
        if (!options.replacement_split) {
            out.input_ids[i] = Vocabulary::kMask;
            return;
        }
        const double r = u(rng);
        if (r < 0.8) {
            out.input_ids[i] = Vocabulary::kMask;
        } else if (r < 0.9) {
            out.input_ids[i] = random_token(rng);
        }
    };
    bool any = false;
    for (std::size_t i : maskable) {
        if (u(rng) < options.rate) {
            select(i);
            any = true;
        }
    }
    if (!any && options.at_least_one) {
        select(maskable[std::uniform_int_distribution<std::size_t>(0, maskable.size() - 1)(rng)]);
    }
    return out;
}

VtpMask apply_vtp_mask(std::span<const std::int32_t> visit_type_ids, std::int32_t type_mask_id, double rate, Rng& rng,
                       bool at_least_one) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("apply_vtp_mask: rate outside [0,1]");
    const std::size_t n = visit_type_ids.size();
    VtpMask out{{visit_type_ids.begin(), visit_type_ids.end()}, std::vector<std::int32_t>(n, 0), std::vector<double>(n, 0.0)};
    std::vector<std::size_t> typed;
    for (std::size_t i = 0; i < n; ++i) {
        if (visit_type_ids[i] != 0) typed.push_back(i);
    }
    if (typed.empty()) throw std::invalid_argument("apply_vtp_mask: no typed positions");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto select = [&](std::size_t i) {
        out.type_labels[i] = visit_type_ids[i];
        out.weights[i] = 1.0;
        out.masked_type_ids[i] = type_mask_id;
    };
    bool any = false;
    for (std::size_t i : typed) {
        if (u(rng) < rate) {
            select(i);
            any = true;
        }
    }
    if (!any && at_least_one) select(typed[std::uniform_int_distribution<std::size_t>(0, typed.size() - 1)(rng)]);
    return out;
}

std::string to_jsonl(const TokenSequence& seq) {
    nlohmann::json j;
    j["person_id"] = seq.person_id;
    j["token_ids"] = seq.token_ids;
    j["time_years"] = seq.time_years;
    j["age_years"] = seq.age_years;
    j["visit_segment"] = seq.visit_segment;
    j["visit_type_ids"] = seq.visit_type_ids;
    std::vector<int> mask(seq.attention_mask.begin(), seq.attention_mask.end());
    j["attention_mask"] = mask;
    return j.dump() + "\n";
}

}  // namespace cehr
