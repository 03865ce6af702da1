#include "cehr/folds.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "cehr/tensor.hpp"

namespace cehr {

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

namespace {

Rng derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    return Rng(seq);
}

std::size_t share(std::size_t total, std::size_t cls, std::size_t n) {
    return round_half_up(static_cast<double>(total) * static_cast<double>(cls) / static_cast<double>(n));
}

}  // namespace

FoldPlan make_folds(std::span<const int> labels, std::uint64_t seed, std::size_t n_folds) {
    const std::size_t n = labels.size();
    if (n < 20) throw std::invalid_argument("make_folds: need at least 20 examples, got " + std::to_string(n));
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (labels[i] == 1 ? pos : neg).push_back(i);

    const std::size_t n_test = round_half_up(0.15 * static_cast<double>(n));
    const std::size_t n_val = round_half_up(0.10 * static_cast<double>(n));
    auto split_class = [&](std::size_t total) {
        // positives per split, clamped so both classes keep >= 1 in each split
        std::size_t p = share(total, pos.size(), n);
        p = std::clamp<std::size_t>(p, 1, total - 1);
        return p;
    };
    if (pos.size() < 3 || neg.size() < 3) {
        throw std::invalid_argument("make_folds: each class needs at least 3 examples (positives " +
                                    std::to_string(pos.size()) + ", negatives " + std::to_string(neg.size()) + ")");
    }
    const std::size_t test_pos = split_class(n_test), val_pos = split_class(n_val);
    if (test_pos + val_pos >= pos.size() || (n_test - test_pos) + (n_val - val_pos) >= neg.size()) {
        throw std::invalid_argument("make_folds: a class would be absent from the training split");
    }

    FoldPlan plan;
    plan.seed = seed;
    for (std::size_t f = 0; f < n_folds; ++f) {
        Rng rng = derived_rng(seed, 0x464F4C44u, f);
        auto p = pos, q = neg;
        std::shuffle(p.begin(), p.end(), rng);
        std::shuffle(q.begin(), q.end(), rng);
        Fold fold;
        auto take = [](std::vector<std::size_t>& from, std::size_t k, std::vector<std::size_t>& to) {
            to.insert(to.end(), from.end() - static_cast<std::ptrdiff_t>(k), from.end());
            from.resize(from.size() - k);
        };
        take(p, test_pos, fold.test);
        take(q, n_test - test_pos, fold.test);
        take(p, val_pos, fold.val);
        take(q, n_val - val_pos, fold.val);
        fold.train = p;
        fold.train.insert(fold.train.end(), q.begin(), q.end());
        for (auto* s : {&fold.train, &fold.val, &fold.test}) std::sort(s->begin(), s->end());
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

std::map<double, std::vector<std::size_t>> few_shot_plan(const Fold& fold, std::span<const int> labels,
                                                         std::span<const double> fractions, std::uint64_t seed,
                                                         bool nested) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i : fold.train) (labels[i] == 1 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) throw std::invalid_argument("few_shot_plan: training split lacks a class");
    const std::size_t n = fold.train.size();

    std::map<double, std::vector<std::size_t>> out;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        const double f = fractions[k];
        if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("few_shot_plan: fractions must lie in (0, 1]");
        Rng rng = derived_rng(seed, 0x46455753u, nested ? 0 : k + 1);
        auto p = pos, q = neg;
        std::shuffle(p.begin(), p.end(), rng);
        std::shuffle(q.begin(), q.end(), rng);
        const std::size_t size = std::max<std::size_t>(round_half_up(f * static_cast<double>(n)), 2);
        const std::size_t k_pos = std::clamp<std::size_t>(share(size, pos.size(), n), 1, std::min(pos.size(), size - 1));
        const std::size_t k_neg = std::min(size - k_pos, neg.size());
        std::vector<std::size_t> subset(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(k_pos));
        subset.insert(subset.end(), q.begin(), q.begin() + static_cast<std::ptrdiff_t>(k_neg));
        std::sort(subset.begin(), subset.end());
        out[f] = std::move(subset);
    }
    return out;
}

}  // namespace cehr
