#include "cehr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cehr {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* op) {
    if (scores.size() != labels.size()) throw std::invalid_argument(std::string(op) + ": size mismatch");
    for (int y : labels)
        if (y != 0 && y != 1) throw std::invalid_argument(std::string(op) + ": labels must be 0 or 1");
    for (double s : scores)
        if (!std::isfinite(s)) throw std::invalid_argument(std::string(op) + ": non-finite score");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return descending ? scores[a] > scores[b] : scores[a] < scores[b];
    });
    return order;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels, "roc_auc");
    const auto order = order_by_score(scores, false);
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum += avg_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: both classes must be present");
    const double p = static_cast<double>(n_pos), q = static_cast<double>(n_neg);
    return (rank_sum - p * (p + 1) / 2) / (p * q);
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels, "pr_auc");
    const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    if (total_pos == 0) throw std::invalid_argument("pr_auc: no positives");
    const auto order = order_by_score(scores, true);
    double area = 0.0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i, group_pos = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? group_pos : fp) += 1;
            ++j;
        }
        tp += group_pos;
        if (group_pos) {
            const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
            area += precision * static_cast<double>(group_pos) / static_cast<double>(total_pos);
        }
        i = j;
    }
    return area;
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("mean_std: no values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / n)};
}

namespace {

// Iterate v <- C v / |C v| until successive unit vectors differ by < tol.
// Starting vectors are fixed so results are reproducible. A residual below
// `negligible` means the deflated spectrum is zero; v is then kept as is.
std::vector<double> power_iteration(const std::vector<double>& cov, std::size_t d,
                                    const std::vector<std::vector<double>>& orthogonal_to, double negligible) {
    constexpr double kTolerance = 1e-12;
    constexpr std::size_t kMaxIterations = 200000;
    std::vector<double> v(d), next(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i) / static_cast<double>(d);
    auto orthonormalize = [&](std::vector<double>& x, double floor) {
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& u : orthogonal_to) {
                const double dot = std::inner_product(x.begin(), x.end(), u.begin(), 0.0);
                for (std::size_t i = 0; i < d; ++i) x[i] -= dot * u[i];
            }
        }
        const double norm = std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
        if (norm <= floor) return false;
        for (auto& e : x) e /= norm;
        return true;
    };
    if (!orthonormalize(v, 1e-8)) {
        std::fill(v.begin(), v.end(), 0.0);
        v[d - 1] = 1.0;
        orthonormalize(v, 0.0);
    }
    for (std::size_t it = 0; it < kMaxIterations; ++it) {
        for (std::size_t i = 0; i < d; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += cov[i * d + j] * v[j];
            next[i] = s;
        }
        if (!orthonormalize(next, negligible)) return v;
        double diff = 0.0;
        for (std::size_t i = 0; i < d; ++i) diff = std::max(diff, std::abs(next[i] - v[i]));
        v.swap(next);
        if (diff < kTolerance) break;
    }
    return v;
}

}  // namespace

Pca2d pca_2d(std::span<const double> rows, std::size_t n, std::size_t d) {
    if (n < 2) throw std::invalid_argument("pca_2d: need at least 2 rows");
    if (d < 1 || rows.size() != n * d) throw std::invalid_argument("pca_2d: rows must be n x d with d >= 1");
    std::vector<double> mean(d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) mean[c] += rows[r * d + c];
    for (auto& m : mean) m /= static_cast<double>(n);
    std::vector<double> centred(n * d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) centred[r * d + c] = rows[r * d + c] - mean[c];
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) cov[i * d + j] += centred[r * d + i] * centred[r * d + j];
    for (auto& c : cov) c /= static_cast<double>(n - 1);

    Pca2d out;
    double scale = 0.0;
    for (double c : cov) scale = std::max(scale, std::abs(c));
    for (std::size_t k = 0; k < 2; ++k) {
        std::vector<double> v(d, 0.0);
        if (k < d) v = power_iteration(cov, d, out.components, 1e-12 * scale);
        // Sign: first loading that is not round-off becomes positive.
        for (double& x : v) {
            if (std::abs(x) > 1e-10) {
                if (x < 0)
                    for (double& y : v) y = -y;
                break;
            }
        }
        double lambda = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) lambda += v[i] * cov[i * d + j] * v[j];
        out.components.push_back(v);
        out.eigenvalues.push_back(lambda);
    }
    out.coords.assign(n * 2, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t c = 0; c < d; ++c) out.coords[r * 2 + k] += centred[r * d + c] * out.components[k][c];
    return out;
}

}  // namespace cehr
