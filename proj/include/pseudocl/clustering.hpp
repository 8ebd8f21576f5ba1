#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pseudocl/errors.hpp"
#include "pseudocl/linalg.hpp"
#include "pseudocl/rng.hpp"

namespace pseudocl {

struct ClusterResult {
    Matrix centroids;                      // k x d
    std::vector<std::size_t> assignments;  // one per point
    double objective = 0.0;                // mean squared distance to assigned centroid
    std::size_t iterations = 0;
    bool converged = false;
    /// Objective after every assignment step, plus the final value.
    std::vector<double> objective_trace;
};

struct KMeansOptions {
    std::size_t max_iter = 300;
    /// Convergence threshold on the largest centroid displacement.
    double tol = 1e-6;
    /// Independent seeded runs; the lowest objective wins (first on ties).
    std::size_t restarts = 1;
};

namespace detail {

inline void check_points(const Matrix& points, std::size_t k) {
    if (k == 0) throw ParameterError("clustering: k must be at least 1");
    if (points.rows() < k)
        throw CardinalityError("clustering: " + std::to_string(points.rows()) + " points for " + std::to_string(k) +
                               " clusters");
    if (!all_finite(points.values())) throw DataError("clustering: non-finite point");
}

inline std::size_t nearest(const Matrix& centroids, std::span<const double> x, double* dist_out = nullptr) {
    std::size_t best = 0;
    double best_d = squared_distance(centroids.row(0), x);
    for (std::size_t c = 1; c < centroids.rows(); ++c) {
        const double d = squared_distance(centroids.row(c), x);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    if (dist_out) *dist_out = best_d;
    return best;
}

inline Matrix kmeanspp_init(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    Matrix centroids(k, points.cols());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t pick = static_cast<std::size_t>(rng.below(n));
    for (std::size_t c = 0; c < k; ++c) {
        auto src = points.row(pick);
        std::copy(src.begin(), src.end(), centroids.row(c).begin());
        if (c + 1 == k) break;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(c)));
            total += d2[i];
        }
        if (total <= 0.0) {
            pick = static_cast<std::size_t>(rng.below(n));
            continue;
        }
        const double target = rng.uniform01() * total;
        double acc = 0.0;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (d2[i] <= 0.0) continue;
            acc += d2[i];
            if (acc > target) {
                pick = i;
                break;
            }
        }
        if (pick == n) {  // rounding at the tail end
            for (std::size_t i = n; i-- > 0;)
                if (d2[i] > 0.0) {
                    pick = i;
                    break;
                }
        }
    }
    return centroids;
}

inline void compute_means(const Matrix& points, const std::vector<std::size_t>& assign, Matrix& means,
                          std::vector<std::size_t>& counts) {
    const std::size_t k = means.rows();
    std::fill(means.values().begin(), means.values().end(), 0.0);
    counts.assign(k, 0);
    for (std::size_t i = 0; i < points.rows(); ++i) {
        auto row = means.row(assign[i]);
        auto x = points.row(i);
        for (std::size_t d = 0; d < x.size(); ++d) row[d] += x[d];
        ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] > 0)
            for (double& v : means.row(c)) v /= static_cast<double>(counts[c]);
}

inline double mean_objective(const Matrix& points, const Matrix& centroids, const std::vector<std::size_t>& assign) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) total += squared_distance(points.row(i), centroids.row(assign[i]));
    return total / static_cast<double>(points.rows());
}

inline ClusterResult kmeans_single(const Matrix& points, std::size_t k, std::uint64_t seed,
                                   const KMeansOptions& opt) {
    const std::size_t n = points.rows();
    Rng rng(seed);
    ClusterResult res;
    res.centroids = kmeanspp_init(points, k, rng);
    res.assignments.assign(n, 0);
    Matrix means(k, points.cols());
    std::vector<std::size_t> counts;

    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d;
            res.assignments[i] = nearest(res.centroids, points.row(i), &d);
            total += d;
        }
        res.objective_trace.push_back(total / static_cast<double>(n));

        compute_means(points, res.assignments, means, counts);
        // Empty-cluster repair: move the point farthest from its own mean
        // (taken from a cluster with at least two members) into the empty one.
        for (std::size_t e = 0; e < k; ++e) {
            if (counts[e] > 0) continue;
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[res.assignments[i]] < 2) continue;
                const double d = squared_distance(points.row(i), means.row(res.assignments[i]));
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far == n) throw CardinalityError("kmeans: cannot repair empty cluster");
            res.assignments[far] = e;
            compute_means(points, res.assignments, means, counts);
        }

        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(squared_distance(means.row(c), res.centroids.row(c))));
        res.centroids = means;
        res.iterations = it + 1;
        if (shift < opt.tol || shift == 0.0) {
            res.converged = true;
            break;
        }
    }
    res.objective = mean_objective(points, res.centroids, res.assignments);
    res.objective_trace.push_back(res.objective);
    return res;
}

}  // namespace detail

/// Lloyd's algorithm from a k-means++ seeding. Ties in the assignment step go
/// to the lowest centroid index; the result is a deterministic function of
/// (points, k, seed, options).
inline ClusterResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opt = {}) {
    detail::check_points(points, k);
    if (opt.restarts == 0) throw ParameterError("kmeans: restarts must be at least 1");
    ClusterResult best = detail::kmeans_single(points, k, seed, opt);
    for (std::size_t r = 1; r < opt.restarts; ++r) {
        auto cand = detail::kmeans_single(points, k, derive_seed(seed, {r}), opt);
        if (cand.objective < best.objective) best = std::move(cand);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Diagonal-covariance Gaussian mixture
// ---------------------------------------------------------------------------

struct GmmResult {
    Matrix means;      // k x d
    Matrix variances;  // k x d, each >= var_floor
    std::vector<double> weights;
    std::vector<std::size_t> assignments;  // argmax responsibility
    /// Mean per-point log-likelihood under the returned parameters.
    double log_likelihood = 0.0;
    std::vector<double> log_likelihood_trace;
    std::size_t iterations = 0;
    bool converged = false;
};

struct GmmOptions {
    std::size_t max_iter = 300;
    double tol = 1e-6;
    double var_floor = 1e-6;
    KMeansOptions init;
};

/// EM for a diagonal Gaussian mixture, initialised from a k-means solution
/// with the same seed. The variance floor is part of the M-step (a
/// constrained maximisation), so the likelihood stays monotone.
inline GmmResult gmm_em(const Matrix& points, std::size_t k, std::uint64_t seed, const GmmOptions& opt = {}) {
    detail::check_points(points, k);
    if (!(opt.var_floor > 0.0)) throw ParameterError("gmm_em: var_floor must be positive");
    const std::size_t n = points.rows(), d = points.cols();
    const auto init = kmeans(points, k, seed, opt.init);

    GmmResult g;
    g.means = init.centroids;
    g.variances = Matrix(k, d);
    g.weights.assign(k, 0.0);
    {
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = init.assignments[i];
            ++counts[c];
            auto x = points.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = x[j] - g.means(c, j);
                g.variances(c, j) += diff * diff;
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            g.weights[c] = static_cast<double>(counts[c]) / static_cast<double>(n);
            for (std::size_t j = 0; j < d; ++j)
                g.variances(c, j) = std::max(opt.var_floor, g.variances(c, j) / static_cast<double>(counts[c]));
        }
    }

    Matrix resp(n, k);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    double prev = -std::numeric_limits<double>::infinity();
    g.assignments.assign(n, 0);

    for (std::size_t it = 0;; ++it) {
        // E-step
        std::vector<double> log_norm(k);
        for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += std::log(g.variances(c, j));
            log_norm[c] = g.weights[c] > 0.0 ? std::log(g.weights[c]) - 0.5 * (d * log2pi + s)
                                             : -std::numeric_limits<double>::infinity();
        }
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            auto x = points.row(i);
            auto r = resp.row(i);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                if (!std::isfinite(log_norm[c])) {
                    r[c] = log_norm[c];
                    continue;
                }
                double q = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double diff = x[j] - g.means(c, j);
                    q += diff * diff / g.variances(c, j);
                }
                r[c] = log_norm[c] - 0.5 * q;
                mx = std::max(mx, r[c]);
            }
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) s += std::isfinite(r[c]) ? std::exp(r[c] - mx) : 0.0;
            const double lse = mx + std::log(s);
            ll += lse;
            std::size_t best = 0;
            for (std::size_t c = 0; c < k; ++c) {
                r[c] = std::isfinite(r[c]) ? std::exp(r[c] - lse) : 0.0;
                if (r[c] > r[best]) best = c;
            }
            g.assignments[i] = best;
        }
        ll /= static_cast<double>(n);
        g.log_likelihood_trace.push_back(ll);
        g.log_likelihood = ll;
        g.iterations = it;
        if (it > 0 && ll - prev < opt.tol) {
            g.converged = true;
            break;
        }
        if (it == opt.max_iter) break;
        prev = ll;

        // M-step
        for (std::size_t c = 0; c < k; ++c) {
            double nk = 0.0;
            for (std::size_t i = 0; i < n; ++i) nk += resp(i, c);
            g.weights[c] = nk / static_cast<double>(n);
            if (nk <= 0.0) continue;  // dead component keeps its parameters
            for (std::size_t j = 0; j < d; ++j) {
                double mu = 0.0;
                for (std::size_t i = 0; i < n; ++i) mu += resp(i, c) * points(i, j);
                mu /= nk;
                double var = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double diff = points(i, j) - mu;
                    var += resp(i, c) * diff * diff;
                }
                g.means(c, j) = mu;
                g.variances(c, j) = std::max(opt.var_floor, var / nk);
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaBasis {
    Matrix components;  // d_out x d, orthonormal rows
    std::vector<double> mean;
    std::vector<double> explained_variance;  // non-increasing
};

/// Top principal directions of the sample covariance (1/(n-1) normalisation).
inline PcaBasis pca_fit(const Matrix& points, std::size_t d_out) {
    const std::size_t n = points.rows(), d = points.cols();
    if (d_out == 0 || d_out > d) throw ParameterError("pca_fit: d_out must be in [1, d]");
    if (n < 2) throw CardinalityError("pca_fit: need at least two points");
    if (!all_finite(points.values())) throw DataError("pca_fit: non-finite point");

    PcaBasis basis;
    basis.mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) basis.mean[j] += points(i, j);
    for (double& m : basis.mean) m /= static_cast<double>(n);

    Matrix cov(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        auto x = points.row(i);
        for (std::size_t a = 0; a < d; ++a) {
            const double da = x[a] - basis.mean[a];
            for (std::size_t b = a; b < d; ++b) cov(a, b) += da * (x[b] - basis.mean[b]);
        }
    }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) {
            cov(a, b) /= static_cast<double>(n - 1);
            cov(b, a) = cov(a, b);
        }

    auto eig = symmetric_eigen(std::move(cov));
    basis.components = Matrix(d_out, d);
    basis.explained_variance.resize(d_out);
    for (std::size_t r = 0; r < d_out; ++r) {
        auto src = eig.vectors.row(r);
        std::copy(src.begin(), src.end(), basis.components.row(r).begin());
        basis.explained_variance[r] = std::max(0.0, eig.values[r]);
    }
    return basis;
}

inline std::vector<double> pca_project(const PcaBasis& basis, std::span<const double> point) {
    if (point.size() != basis.mean.size()) throw InputShapeError("pca_project: dimension mismatch");
    std::vector<double> centered(point.size());
    for (std::size_t j = 0; j < point.size(); ++j) centered[j] = point[j] - basis.mean[j];
    std::vector<double> out(basis.components.rows());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = dot(basis.components.row(r), centered);
    return out;
}

inline Matrix pca_project(const PcaBasis& basis, const Matrix& points) {
    Matrix out(points.rows(), basis.components.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) {
        const auto p = pca_project(basis, points.row(i));
        std::copy(p.begin(), p.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace pseudocl
