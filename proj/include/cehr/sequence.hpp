#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cehr/event_store.hpp"
#include "cehr/tensor.hpp"

namespace cehr {

enum class Representation { cehr, behrt_style, medbert_style, no_vs_ve };

std::string_view to_string(Representation r);
std::optional<Representation> parse_representation(std::string_view s);
inline constexpr Representation kAllRepresentations[] = {Representation::cehr, Representation::behrt_style,
                                                         Representation::medbert_style, Representation::no_vs_ve};

/// ATT token for a day interval between consecutive visit starts.
/// Throws std::invalid_argument for negative intervals.
std::string att_token(int interval_days);

/// Token and visit-type id spaces.
///
/// Token ids: PAD 0, MASK 1, UNK 2, SEP 3, VS 4, VE 5, W0..W3 6..9,
/// M1..M11 10..20, LT 21, then concepts in lexicographic order.
/// Visit-type ids: 0 none, 1..n types in lexicographic order, n+1 the
/// VTP mask id.
class Vocabulary {
   public:
    static constexpr std::int32_t kPad = 0, kMask = 1, kUnk = 2, kSep = 3, kVs = 4, kVe = 5;
    static constexpr std::int32_t kFirstAtt = 6, kLt = 21, kFirstConcept = 22;

    Vocabulary();
    static Vocabulary from_store(const EventStore& store);

    std::int32_t id(std::string_view token) const;  // UNK when unknown
    const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return tokens_.size(); }
    bool is_att(std::int32_t id) const { return id >= kFirstAtt && id <= kLt; }
    bool is_concept(std::int32_t id) const { return id >= kFirstConcept; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::int32_t type_id(std::string_view visit_type) const;  // throws for unknown types
    std::size_t n_visit_types() const { return visit_types_.size(); }
    std::int32_t type_mask_id() const { return static_cast<std::int32_t>(visit_types_.size()) + 1; }
    const std::vector<std::string>& visit_types() const { return visit_types_; }

    /// vocab.csv (token,id) and visit_types.csv (visit_type,id).
    void save(const std::string& vocab_path, const std::string& types_path) const;
    static Vocabulary load(const std::string& vocab_path, const std::string& types_path);

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && visit_types_ == o.visit_types_; }

   private:
    void add(std::string token);
    std::vector<std::string> tokens_;
    std::map<std::string, std::int32_t, std::less<>> ids_;
    std::vector<std::string> visit_types_;
};

/// One patient's aligned channels.
struct TokenSequence {
    std::string person_id;
    std::vector<std::int32_t> token_ids;
    std::vector<double> time_years;
    std::vector<double> age_years;
    std::vector<std::int32_t> visit_segment;   // 0 pad, 1 A, 2 B
    std::vector<std::int32_t> visit_type_ids;  // 0 none
    std::vector<std::uint8_t> attention_mask;

    std::size_t size() const { return token_ids.size(); }
    /// Non-pad positions; pads only ever trail.
    std::size_t length() const;
    void push(std::int32_t id, double time, double age, std::int32_t segment, std::int32_t type);
};

/// A visit and the subset of its events that should be tokenized.
struct VisitContent {
    const VisitRecord* visit = nullptr;
    std::vector<const DomainEvent*> events;
};

/// Visits without events are dropped; throws when nothing is left.
TokenSequence build_sequence(const Person& person, std::span<const VisitContent> visits, Representation variant,
                             const Vocabulary& vocab);
/// Whole history of one person.
TokenSequence build_sequence(const EventStore& store, std::string_view person_id, Representation variant,
                             const Vocabulary& vocab);
std::vector<VisitContent> all_visits(const EventStore& store, std::size_t person_index);

enum class WindowMode { pretrain_random_slice, finetune_pre_truncate };

/// Exactly `context_window` long: slice or keep the tail, then post-pad.
TokenSequence window(const TokenSequence& seq, std::size_t context_window, WindowMode mode, Rng& rng);

/// Every invariant of a built (optionally windowed) sequence; empty when
/// all hold. `n_visits` is checked for the CEHR layout when given.
std::vector<std::string> check_sequence(const TokenSequence& seq, Representation variant, const Vocabulary& vocab,
                                        std::optional<std::size_t> n_visits = std::nullopt);

/// Window invariants: exact size, pads only trailing, attention_mask false
/// exactly on pads, pad channels zeroed.
std::vector<std::string> check_window(const TokenSequence& seq, std::size_t context_window);

struct MlmOptions {
    double rate = 0.15;
    /// 80% MASK / 10% random / 10% unchanged; off means always MASK.
    bool replacement_split = true;
    /// ATT, VS, VE and SEP may be selected alongside concepts.
    bool mask_artificial_tokens = true;
    /// Select one maskable position when sampling picked none.
    bool at_least_one = false;
};

struct MlmMask {
    std::vector<std::int32_t> input_ids;
    std::vector<std::int32_t> labels;
    std::vector<double> weights;
};

/// Random replacements are uniform over ids [UNK, vocab_size).
/// Throws std::invalid_argument when no position is maskable.
MlmMask apply_mlm_mask(const TokenSequence& seq, std::size_t vocab_size, Rng& rng, const MlmOptions& options = {});

struct VtpMask {
    std::vector<std::int32_t> masked_type_ids;
    std::vector<std::int32_t> type_labels;  // original type ids
    std::vector<double> weights;
};

/// Throws std::invalid_argument when no position carries a visit type.
VtpMask apply_vtp_mask(std::span<const std::int32_t> visit_type_ids, std::int32_t type_mask_id, double rate, Rng& rng,
                       bool at_least_one = false);

/// One JSON object per line with the six channels.
std::string to_jsonl(const TokenSequence& seq);

}  // namespace cehr
