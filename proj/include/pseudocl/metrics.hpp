#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pseudocl/errors.hpp"
#include "pseudocl/linalg.hpp"

namespace pseudocl {

using Partition = std::vector<std::int64_t>;

/// Counts N_ij of samples in predicted cluster i with true class j. Labels
/// of either side are compacted to 0..k-1 in ascending order.
struct Contingency {
    std::vector<std::vector<std::size_t>> counts;
    std::vector<std::size_t> row_sums;
    std::vector<std::size_t> col_sums;
    std::size_t total = 0;

    std::size_t rows() const noexcept { return row_sums.size(); }
    std::size_t cols() const noexcept { return col_sums.size(); }
};

namespace detail {

inline std::vector<std::size_t> compact(std::span<const std::int64_t> labels, std::size_t& distinct) {
    std::map<std::int64_t, std::size_t> index;
    for (auto l : labels) index.emplace(l, 0);
    std::size_t next = 0;
    for (auto& [label, idx] : index) idx = next++;
    distinct = next;
    std::vector<std::size_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = index[labels[i]];
    return out;
}

inline void check_lengths(std::span<const std::int64_t> a, std::span<const std::int64_t> b, std::size_t min_len) {
    if (a.size() != b.size())
        throw DataError("partition lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    if (a.size() < min_len) throw ParameterError("partitions need at least " + std::to_string(min_len) + " points");
}

inline double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace detail

inline Contingency contingency(std::span<const std::int64_t> pred, std::span<const std::int64_t> truth) {
    detail::check_lengths(pred, truth, 1);
    std::size_t kr = 0, kc = 0;
    const auto r = detail::compact(pred, kr);
    const auto c = detail::compact(truth, kc);
    Contingency t;
    t.counts.assign(kr, std::vector<std::size_t>(kc, 0));
    t.row_sums.assign(kr, 0);
    t.col_sums.assign(kc, 0);
    for (std::size_t i = 0; i < r.size(); ++i) {
        ++t.counts[r[i]][c[i]];
        ++t.row_sums[r[i]];
        ++t.col_sums[c[i]];
    }
    t.total = r.size();
    return t;
}

/// Injective row -> column assignment.
struct Matching {
    std::vector<std::size_t> row_to_col;
    double cost = 0.0;
};

/// Minimum-cost perfect assignment on a square matrix: Kuhn-Munkres with
/// row/column potentials, O(n^3).
inline Matching hungarian(const Matrix& cost) {
    const std::size_t n = cost.rows();
    if (cost.cols() != n) throw InputShapeError("hungarian: cost matrix must be square");
    if (!all_finite(cost.values())) throw DataError("hungarian: non-finite cost");
    Matching out;
    if (n == 0) return out;

    const double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; column 0 is a virtual root.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    out.row_to_col.assign(n, 0);
    for (std::size_t j = 1; j <= n; ++j) out.row_to_col[p[j] - 1] = j - 1;
    for (std::size_t i = 0; i < n; ++i) out.cost += cost(i, out.row_to_col[i]);
    return out;
}

/// Fraction of samples correctly classified after the best one-to-one
/// matching of predicted clusters to true classes.
inline double cluster_accuracy(std::span<const std::int64_t> pred, std::span<const std::int64_t> truth) {
    const auto t = contingency(pred, truth);
    const std::size_t n = std::max(t.rows(), t.cols());
    Matrix cost(n, n, 0.0);
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) cost(i, j) = -static_cast<double>(t.counts[i][j]);
    const auto match = hungarian(cost);
    std::size_t matched = 0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const std::size_t j = match.row_to_col[i];
        if (j < t.cols()) matched += t.counts[i][j];
    }
    return static_cast<double>(matched) / static_cast<double>(t.total);
}

/// I(A,B) / sqrt(H(A) H(B)) with natural logs; 0 when either entropy is 0.
inline double nmi(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
    const auto t = contingency(a, b);
    const double n = static_cast<double>(t.total);
    double ha = 0.0, hb = 0.0, mi = 0.0;
    for (auto s : t.row_sums) {
        const double p = static_cast<double>(s) / n;
        ha -= p * std::log(p);
    }
    for (auto s : t.col_sums) {
        const double p = static_cast<double>(s) / n;
        hb -= p * std::log(p);
    }
    if (ha <= 0.0 || hb <= 0.0) return 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) {
            const auto c = t.counts[i][j];
            if (c == 0) continue;
            const double pij = static_cast<double>(c) / n;
            mi += pij * std::log(static_cast<double>(c) * n /
                                 (static_cast<double>(t.row_sums[i]) * static_cast<double>(t.col_sums[j])));
        }
    return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

/// Adjusted Rand index from pair counts. Can be negative. When the
/// denominator vanishes (both partitions trivial in the same way) the two
/// partitions agree on every pair and 1 is returned.
inline double ari(std::span<const std::int64_t> a, std::span<const std::int64_t> b) {
    detail::check_lengths(a, b, 2);
    const auto t = contingency(a, b);
    double sum_ij = 0.0, sum_i = 0.0, sum_j = 0.0;
    for (const auto& row : t.counts)
        for (auto c : row) sum_ij += detail::choose2(static_cast<double>(c));
    for (auto s : t.row_sums) sum_i += detail::choose2(static_cast<double>(s));
    for (auto s : t.col_sums) sum_j += detail::choose2(static_cast<double>(s));
    const double expected = sum_i * sum_j / detail::choose2(static_cast<double>(t.total));
    const double max_index = 0.5 * (sum_i + sum_j);
    const double denom = max_index - expected;
    if (denom == 0.0) return 1.0;
    return (sum_ij - expected) / denom;
}

struct StepReport {
    std::size_t step = 0;  // 1-based task index
    std::size_t classes_seen = 0;
    double acc = 0.0;
    double nmi = 0.0;
    double ari = 0.0;

    bool operator==(const StepReport&) const = default;
};

inline StepReport step_report(std::size_t step, std::size_t classes_seen, std::span<const std::int64_t> pred,
                              std::span<const std::int64_t> truth) {
    StepReport r;
    r.step = step;
    r.classes_seen = classes_seen;
    r.acc = cluster_accuracy(pred, truth);
    r.nmi = nmi(truth, pred);
    r.ari = truth.size() >= 2 ? ari(truth, pred) : 1.0;
    return r;
}

/// Avg over the given steps and the value at the final one.
struct Summary {
    double avg_acc = 0.0;
    double last_acc = 0.0;
    double avg_nmi = 0.0;
    double last_nmi = 0.0;
    double avg_ari = 0.0;
    double last_ari = 0.0;
};

inline Summary aggregate(std::span<const StepReport> reports) {
    if (reports.empty()) throw ParameterError("aggregate: no step reports");
    Summary s;
    for (const auto& r : reports) {
        s.avg_acc += r.acc;
        s.avg_nmi += r.nmi;
        s.avg_ari += r.ari;
    }
    const double n = static_cast<double>(reports.size());
    s.avg_acc /= n;
    s.avg_nmi /= n;
    s.avg_ari /= n;
    s.last_acc = reports.back().acc;
    s.last_nmi = reports.back().nmi;
    s.last_ari = reports.back().ari;
    return s;
}

}  // namespace pseudocl
