#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "pseudocl/labeling.hpp"

using namespace pseudocl;

namespace {

Matrix column(std::initializer_list<double> xs) {
    Matrix m;
    for (double x : xs) m.push_row(std::vector<double>{x});
    return m;
}

}  // namespace

TEST(PseudoLabels, Offsets) {
    const std::vector<std::size_t> one = {0};
    EXPECT_EQ(assign_pseudo_labels(one, 50).labels, (std::vector<std::size_t>{50}));
    const std::vector<std::size_t> a = {0, 2, 1};
    EXPECT_EQ(assign_pseudo_labels(a, 0).labels, a);
    EXPECT_EQ(assign_pseudo_labels(a, 10).labels, (std::vector<std::size_t>{10, 12, 11}));
    const auto s = assign_pseudo_labels(a, 10, 3);
    EXPECT_EQ(s.offset, 10u);
    EXPECT_EQ(s.step, 3u);
}

TEST(PseudoLabels, ConsecutiveStepsAreDisjoint) {
    const std::vector<std::size_t> a = {0, 1, 2, 3, 4, 4, 0};
    std::set<std::size_t> seen;
    for (std::size_t step = 0; step < 4; ++step) {
        const auto labels = assign_pseudo_labels(a, 5 * step).labels;
        for (auto l : std::set<std::size_t>(labels.begin(), labels.end())) EXPECT_TRUE(seen.insert(l).second);
    }
}

TEST(Herding, HandExample) {
    const auto f = column({0, 2, 3});
    EXPECT_EQ(herding_order(f, 1), (std::vector<std::size_t>{1}));
    EXPECT_EQ(herding_order(f, 2), (std::vector<std::size_t>{1, 0}));
    auto all = herding_order(f, 3);
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(herding_order(f, 10).size(), 3u);
}

TEST(Herding, TiesGoToLowestIndex) {
    EXPECT_EQ(herding_order(column({-1, 1}), 1), (std::vector<std::size_t>{0}));
    // two points are always equidistant from their mean, even when the
    // subtraction rounds differently on each side
    Rng rng(15);
    for (int t = 0; t < 200; ++t) {
        Matrix m;
        m.push_row(std::vector<double>{rng.normal(), rng.normal()});
        m.push_row(std::vector<double>{rng.normal(), rng.normal()});
        EXPECT_EQ(herding_order(m, 2), (std::vector<std::size_t>{0, 1}));
    }
}

TEST(Herding, MatchesRecurrenceBruteForce) {
    Rng rng(31);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 1 + rng.below(8), d = 1 + rng.below(3), q = 1 + rng.below(3);
        std::vector<std::vector<double>> pts(n, std::vector<double>(d));
        Matrix m;
        for (auto& p : pts) {
            for (double& x : p) x = rng.normal();
            m.push_row(p);
        }
        EXPECT_EQ(herding_order(m, q), oracle::herding_brute_force(pts, q));
        // first pick is the point nearest the mean
        std::vector<double> mu(d, 0.0);
        for (const auto& p : pts)
            for (std::size_t j = 0; j < d; ++j) mu[j] += p[j] / static_cast<double>(n);
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (squared_distance(m.row(i), mu) < squared_distance(m.row(best), mu)) best = i;
        EXPECT_EQ(herding_order(m, 1)[0], best);
    }
}

TEST(Herding, PerClusterStore) {
    const auto f = column({0, 2, 3, 100, 101});
    const std::vector<std::size_t> assign = {0, 0, 0, 1, 1};
    const std::vector<std::size_t> labels = {7, 7, 7, 8, 8};
    const std::vector<std::uint64_t> ids = {10, 11, 12, 13, 14};
    const auto s = select_exemplars_herding(f, assign, labels, ids, 1);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s.entries()[0], (Exemplar{11, 7}));
    EXPECT_EQ(s.count_for(8), 1u);
    EXPECT_THROW(select_exemplars_herding(f, assign, labels, ids, 1, 3), SelectionError);
}

TEST(Herding, MixedLabelsInClusterRejected) {
    const auto f = column({0, 1});
    const std::vector<std::size_t> assign = {0, 0}, labels = {1, 2};
    const std::vector<std::uint64_t> ids = {0, 1};
    EXPECT_THROW(select_exemplars_herding(f, assign, labels, ids, 1), SelectionError);
}

TEST(RandomSelection, ExhaustionAndDeterminism) {
    const std::vector<std::size_t> assign = {0, 0, 0, 1, 1}, labels = {5, 5, 5, 6, 6};
    const std::vector<std::uint64_t> ids = {1, 2, 3, 4, 5};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto s = select_exemplars_random(assign, labels, ids, 3, seed);
        EXPECT_EQ(s.size(), 5u);
    }
    EXPECT_EQ(select_exemplars_random(assign, labels, ids, 2, 9), select_exemplars_random(assign, labels, ids, 2, 9));
}

TEST(RandomSelection, UniformOverSeeds) {
    const std::vector<std::size_t> assign = {0, 0, 0, 0}, labels = {0, 0, 0, 0};
    const std::vector<std::uint64_t> ids = {0, 1, 2, 3};
    std::vector<double> freq(4, 0.0);
    const int trials = 10000;
    for (int s = 0; s < trials; ++s)
        freq[select_exemplars_random(assign, labels, ids, 1, static_cast<std::uint64_t>(s)).entries()[0].sample_id] += 1;
    for (double f : freq) EXPECT_NEAR(f / trials, 0.25, 0.02);
}

TEST(ExemplarStore, QuotaAndImmutability) {
    ExemplarStore s(2);
    const std::vector<std::uint64_t> two = {1, 2}, three = {1, 2, 3};
    s.add_class(0, two);
    EXPECT_THROW(s.add_class(0, two), SelectionError);
    EXPECT_THROW(s.add_class(1, three), SelectionError);
    EXPECT_THROW(ExemplarStore(0), ParameterError);
    ExemplarStore other(2);
    other.add_class(4, two);
    s.absorb(other);
    EXPECT_EQ(s.size(), 4u);
    EXPECT_EQ(s.class_count(), 2u);
    EXPECT_LE(s.size(), s.q() * s.class_count());
}

TEST(MergeReplay, CardinalityAndDeterminism) {
    std::vector<std::uint64_t> ids(100);
    std::vector<std::size_t> labels(100, 3);
    for (std::size_t i = 0; i < 100; ++i) ids[i] = i;
    EXPECT_EQ(merge_replay(ids, labels, ExemplarStore(1), 0).size(), 100u);

    ExemplarStore store(20);
    for (std::size_t c = 0; c < 2; ++c) {
        std::vector<std::uint64_t> ex;
        for (std::uint64_t k = 0; k < 20; ++k) ex.push_back(1000 + 20 * c + k);
        store.add_class(c, ex);
    }
    const auto a = merge_replay(ids, labels, store, 5);
    EXPECT_EQ(a.size(), 140u);
    EXPECT_EQ(a, merge_replay(ids, labels, store, 5));
    std::set<std::uint64_t> uniq;
    for (const auto& it : a) uniq.insert(it.sample_id);
    EXPECT_EQ(uniq.size(), 140u);
}
