#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace cehr {

/// P(score+ > score-) + P(tie)/2 via average ranks. Throws std::invalid_argument
/// unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Step-wise area under the precision-recall curve: sum over thresholds of
/// (recall increment) x precision, tied scores entering together. Throws
/// without positives.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct Pca2d {
    std::vector<double> coords;                     // n x 2, row-major
    std::vector<std::vector<double>> components;    // 2 unit vectors of length d
    std::vector<double> eigenvalues;                // matching covariance eigenvalues
};

/// Mean-centred projection of n x d rows onto the top two covariance
/// eigenvectors, found by power iteration with deflation. Each component's
/// first non-negligible loading is made positive. Throws when n < 2.
Pca2d pca_2d(std::span<const double> rows, std::size_t n, std::size_t d);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population
};
MeanStd mean_std(std::span<const double> values);

}  // namespace cehr
