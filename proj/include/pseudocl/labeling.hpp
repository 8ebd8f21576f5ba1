#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pseudocl/errors.hpp"
#include "pseudocl/linalg.hpp"
#include "pseudocl/rng.hpp"

namespace pseudocl {

/// Pseudo labels for one step: label = cluster assignment + m (0-indexed,
/// so the step's labels occupy m .. m+n-1).
struct PseudoLabelSet {
    std::vector<std::size_t> labels;
    std::size_t offset = 0;
    std::size_t step = 0;
};

inline PseudoLabelSet assign_pseudo_labels(std::span<const std::size_t> assignments, std::size_t m,
                                           std::size_t step = 0) {
    PseudoLabelSet out{std::vector<std::size_t>(assignments.size()), m, step};
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        if (assignments[i] > std::numeric_limits<std::size_t>::max() - m)
            throw ParameterError("assign_pseudo_labels: label overflow");
        out.labels[i] = assignments[i] + m;
    }
    return out;
}

struct Exemplar {
    std::uint64_t sample_id = 0;
    std::size_t label = 0;
    bool operator==(const Exemplar&) const = default;
};

/// Replay memory: at most q samples per (pseudo-)class. A class is added
/// once, as a whole, and its label never changes afterwards.
class ExemplarStore {
public:
    ExemplarStore() = default;
    explicit ExemplarStore(std::size_t q) : q_(q) {
        if (q == 0) throw ParameterError("ExemplarStore: q must be at least 1");
    }

    std::size_t q() const noexcept { return q_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<Exemplar>& entries() const noexcept { return entries_; }
    std::size_t class_count() const noexcept { return per_class_.size(); }

    std::size_t count_for(std::size_t label) const {
        auto it = per_class_.find(label);
        return it == per_class_.end() ? 0 : it->second;
    }

    void add_class(std::size_t label, std::span<const std::uint64_t> sample_ids) {
        if (per_class_.count(label)) throw SelectionError("ExemplarStore: class " + std::to_string(label) + " already stored");
        if (sample_ids.size() > q_)
            throw SelectionError("ExemplarStore: " + std::to_string(sample_ids.size()) + " exemplars exceed q = " +
                                 std::to_string(q_));
        per_class_[label] = sample_ids.size();
        for (auto id : sample_ids) entries_.push_back({id, label});
    }

    /// Append every class of `other` (same q) to this store.
    void absorb(const ExemplarStore& other) {
        if (other.q_ != q_) throw SelectionError("ExemplarStore: quota mismatch");
        std::map<std::size_t, std::vector<std::uint64_t>> grouped;
        for (const auto& e : other.entries_) grouped[e.label].push_back(e.sample_id);
        for (const auto& [label, ids] : grouped) add_class(label, ids);
    }

    bool operator==(const ExemplarStore&) const = default;

private:
    std::size_t q_ = 1;
    std::vector<Exemplar> entries_;
    std::map<std::size_t, std::size_t> per_class_;
};

/// Greedy herding inside one group: pick k = 1..q, each time the member that
/// brings the running exemplar mean closest (Euclidean) to the group mean.
/// Rows of `features` are the group members; returns row indices in pick
/// order. Ties go to the lowest row index; distances within a relative
/// 1e-12 of each other count as tied, so rounding cannot break a symmetric tie.
inline std::vector<std::size_t> herding_order(const Matrix& features, std::size_t q) {
    const std::size_t n = features.rows(), d = features.cols();
    if (q == 0) throw ParameterError("herding: q must be at least 1");
    if (n == 0) throw SelectionError("herding: empty cluster");
    std::vector<double> mu(d, 0.0), running(d, 0.0), candidate(d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mu[j] += features(i, j);
    for (double& v : mu) v /= static_cast<double>(n);

    std::vector<char> taken(n, 0);
    std::vector<std::size_t> picks;
    const std::size_t target = std::min(q, n);
    for (std::size_t k = 1; k <= target; ++k) {
        std::size_t best = n;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            auto x = features.row(i);
            for (std::size_t j = 0; j < d; ++j) candidate[j] = (running[j] + x[j]) / static_cast<double>(k);
            const double dist = squared_distance(mu, candidate);
            if (best == n || dist < best_d - 1e-12 * best_d) {
                best_d = dist;
                best = i;
            }
        }
        taken[best] = 1;
        picks.push_back(best);
        auto x = features.row(best);
        for (std::size_t j = 0; j < d; ++j) running[j] += x[j];
    }
    return picks;
}

namespace detail {

struct Groups {
    std::vector<std::vector<std::size_t>> members;  // sample positions per cluster
    std::vector<std::size_t> labels;                // label of each cluster
};

// Cluster j's members share one label. `expected_clusters` > 0 demands
// clusters 0..expected-1 all be present.
inline Groups group_by_cluster(std::span<const std::size_t> assignments, std::span<const std::size_t> labels,
                               std::size_t expected_clusters) {
    if (assignments.size() != labels.size()) throw InputShapeError("exemplar selection: assignment/label length mismatch");
    std::size_t k = expected_clusters;
    for (auto a : assignments) k = std::max(k, a + 1);
    Groups g{std::vector<std::vector<std::size_t>>(k), std::vector<std::size_t>(k, 0)};
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        auto& mem = g.members[assignments[i]];
        if (mem.empty()) g.labels[assignments[i]] = labels[i];
        else if (g.labels[assignments[i]] != labels[i])
            throw SelectionError("exemplar selection: cluster " + std::to_string(assignments[i]) +
                                 " mixes pseudo labels");
        mem.push_back(i);
    }
    for (std::size_t j = 0; j < k; ++j)
        if (g.members[j].empty())
            throw SelectionError("exemplar selection: cluster " + std::to_string(j) + " is empty");
    return g;
}

}  // namespace detail

/// Herding exemplar selection per cluster in feature space. Row i of
/// `features` belongs to sample_ids[i].
inline ExemplarStore select_exemplars_herding(const Matrix& features, std::span<const std::size_t> assignments,
                                              std::span<const std::size_t> pseudo_labels,
                                              std::span<const std::uint64_t> sample_ids, std::size_t q,
                                              std::size_t expected_clusters = 0) {
    if (features.rows() != assignments.size() || sample_ids.size() != assignments.size())
        throw InputShapeError("select_exemplars_herding: input lengths differ");
    ExemplarStore store(q);
    const auto groups = detail::group_by_cluster(assignments, pseudo_labels, expected_clusters);
    for (std::size_t j = 0; j < groups.members.size(); ++j) {
        const auto& mem = groups.members[j];
        Matrix sub(mem.size(), features.cols());
        for (std::size_t r = 0; r < mem.size(); ++r) {
            auto src = features.row(mem[r]);
            std::copy(src.begin(), src.end(), sub.row(r).begin());
        }
        std::vector<std::uint64_t> ids;
        for (auto r : herding_order(sub, q)) ids.push_back(sample_ids[mem[r]]);
        store.add_class(groups.labels[j], ids);
    }
    return store;
}

/// Uniform sample without replacement of min(q, |cluster|) per cluster.
inline ExemplarStore select_exemplars_random(std::span<const std::size_t> assignments,
                                             std::span<const std::size_t> pseudo_labels,
                                             std::span<const std::uint64_t> sample_ids, std::size_t q,
                                             std::uint64_t seed, std::size_t expected_clusters = 0) {
    if (sample_ids.size() != assignments.size())
        throw InputShapeError("select_exemplars_random: input lengths differ");
    ExemplarStore store(q);
    const auto groups = detail::group_by_cluster(assignments, pseudo_labels, expected_clusters);
    Rng rng(seed);
    for (std::size_t j = 0; j < groups.members.size(); ++j) {
        auto mem = groups.members[j];
        const std::size_t take = std::min(q, mem.size());
        // partial Fisher-Yates
        for (std::size_t i = 0; i < take; ++i) {
            const auto r = i + static_cast<std::size_t>(rng.below(mem.size() - i));
            std::swap(mem[i], mem[r]);
        }
        std::vector<std::uint64_t> ids;
        for (std::size_t i = 0; i < take; ++i) ids.push_back(sample_ids[mem[i]]);
        store.add_class(groups.labels[j], ids);
    }
    return store;
}

struct TrainingItem {
    std::uint64_t sample_id = 0;
    std::size_t label = 0;
    bool operator==(const TrainingItem&) const = default;
};

/// New data plus every stored exemplar, shuffled with a seed.
inline std::vector<TrainingItem> merge_replay(std::span<const std::uint64_t> new_ids,
                                              std::span<const std::size_t> new_labels, const ExemplarStore& store,
                                              std::uint64_t seed) {
    if (new_ids.size() != new_labels.size()) throw InputShapeError("merge_replay: id/label length mismatch");
    std::vector<TrainingItem> out;
    out.reserve(new_ids.size() + store.size());
    for (std::size_t i = 0; i < new_ids.size(); ++i) out.push_back({new_ids[i], new_labels[i]});
    for (const auto& e : store.entries()) out.push_back({e.sample_id, e.label});
    Rng rng(seed);
    rng.shuffle(out);
    return out;
}

}  // namespace pseudocl
