#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace cehr {

struct Fold {
    std::vector<std::size_t> train, val, test;
};

struct FoldPlan {
    std::uint64_t seed = 0;
    std::vector<Fold> folds;
};

/// Four independent label-stratified 75:10:15 splits. Split sizes are
/// round-half-up of the exact proportions (train takes the remainder); each
/// class is spread over the splits by the same rounding, with at least one
/// example of each class in every split. Throws when N < 20 or a class would
/// be missing from a split.
FoldPlan make_folds(std::span<const int> labels, std::uint64_t seed, std::size_t n_folds = 4);

inline const std::vector<double> kFewShotFractions{0.05, 0.10, 0.20, 0.40, 0.80};

/// Training subsets for each fraction of `fold.train`. Subset size is
/// round-half-up(fraction * |train|), at least one example per class. With
/// nested = true the subsets are prefixes of one stratified shuffle, so a
/// smaller fraction is contained in every larger one; otherwise each fraction
/// is drawn independently.
std::map<double, std::vector<std::size_t>> few_shot_plan(const Fold& fold, std::span<const int> labels,
                                                         std::span<const double> fractions, std::uint64_t seed,
                                                         bool nested = true);

std::size_t round_half_up(double x);

}  // namespace cehr
