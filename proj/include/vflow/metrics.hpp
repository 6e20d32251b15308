#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "vflow/rng.hpp"
#include "vflow/tensor.hpp"

namespace vflow {

// Sample sets are plain [n, d] tensors with n >= 2 and finite entries. The
// kernel estimators need n >= 2 (they divide by n(n-1)); wasserstein2 and
// the correlations are well defined from a single point up.
inline void validate_sample_set(const Tensor& p, const char* who, int min_n = 2) {
    if (p.rank() != 2 || p.dim(0) < min_n) {
        throw ContractError(std::string(who) + ": expected [n >= " + std::to_string(min_n) +
                            ", d], got " + shape_str(p.shape()));
    }
    if (!p.all_finite()) throw NumericError(std::string(who) + ": non-finite sample");
}

namespace detail {

inline double sqdist(const float* a, const float* b, int d) {
    double acc = 0;
    for (int c = 0; c < d; ++c) {
        const double diff = static_cast<double>(a[c]) - b[c];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace detail

// MMD with k(x, y) = exp(-||x - y||^2), computed exactly as the estimator is
// printed: unbiased within-set terms, biased cross term. The value can be
// slightly negative, including for identical sets; that is intentional and
// preserved.
inline double mmd_rbf(const Tensor& P, const Tensor& Q) {
    validate_sample_set(P, "mmd_rbf P");
    validate_sample_set(Q, "mmd_rbf Q");
    if (P.dim(0) != Q.dim(0) || P.dim(1) != Q.dim(1)) {
        throw ContractError("mmd_rbf: sample sets must match, got " + shape_str(P.shape()) +
                            " vs " + shape_str(Q.shape()));
    }
    const int n = P.dim(0), d = P.dim(1);
    // summation order is canonical under argument swap, so mmd(P, Q) and
    // mmd(Q, P) agree bit for bit
    double within_p = 0, within_q = 0, cross = 0;
    for (int i = 0; i < n; ++i) {
        const float* pi = P.ptr() + static_cast<int64_t>(i) * d;
        const float* qi = Q.ptr() + static_cast<int64_t>(i) * d;
        cross += std::exp(-detail::sqdist(pi, qi, d));
        for (int j = i + 1; j < n; ++j) {
            const float* pj = P.ptr() + static_cast<int64_t>(j) * d;
            const float* qj = Q.ptr() + static_cast<int64_t>(j) * d;
            within_p += std::exp(-detail::sqdist(pi, pj, d));
            within_q += std::exp(-detail::sqdist(qi, qj, d));
            cross += std::exp(-detail::sqdist(pi, qj, d)) + std::exp(-detail::sqdist(pj, qi, d));
        }
    }
    const double nn1 = static_cast<double>(n) * (n - 1);
    return (2.0 * within_p) / nn1 + (2.0 * within_q) / nn1 - 2.0 * cross / (static_cast<double>(n) * n);
}

// MMD with a density-adaptive kernel K(x, y) = exp(-||x-y||^2 / (2 s_x s_y)).
// The per-point bandwidth s is the mean distance to the k_nn nearest
// neighbors within the pooled set P u Q, floored at 1e-8 so duplicates stay
// finite. `override_sigma` forces one bandwidth everywhere (with
// sqrt(1/2) the kernel reduces to the fixed-bandwidth one).
inline double adaptive_mmd(const Tensor& P, const Tensor& Q, int k_nn = 5,
                           std::optional<double> override_sigma = std::nullopt) {
    validate_sample_set(P, "adaptive_mmd P");
    validate_sample_set(Q, "adaptive_mmd Q");
    if (P.dim(0) != Q.dim(0) || P.dim(1) != Q.dim(1)) {
        throw ContractError("adaptive_mmd: sample sets must match, got " + shape_str(P.shape()) +
                            " vs " + shape_str(Q.shape()));
    }
    const int n = P.dim(0), d = P.dim(1);
    if (k_nn < 1 || k_nn >= n) {
        throw ContractError("adaptive_mmd: k_nn must lie in [1, min(|P|, |Q|)), got " +
                            std::to_string(k_nn));
    }

    const int pooled = 2 * n;
    auto point = [&](int i) { return i < n ? P.ptr() + static_cast<int64_t>(i) * d
                                           : Q.ptr() + static_cast<int64_t>(i - n) * d; };

    std::vector<double> sigma(static_cast<size_t>(pooled));
    if (override_sigma) {
        std::fill(sigma.begin(), sigma.end(), *override_sigma);
    } else {
        std::vector<double> dist(static_cast<size_t>(pooled));
        for (int i = 0; i < pooled; ++i) {
            for (int j = 0; j < pooled; ++j) {
                dist[static_cast<size_t>(j)] =
                    i == j ? std::numeric_limits<double>::infinity()
                           : std::sqrt(detail::sqdist(point(i), point(j), d));
            }
            // ascending partial sort pins the accumulation order of the mean
            std::partial_sort(dist.begin(), dist.begin() + k_nn, dist.end());
            double mean = 0;
            for (int k = 0; k < k_nn; ++k) mean += dist[static_cast<size_t>(k)];
            sigma[static_cast<size_t>(i)] = std::max(mean / k_nn, 1e-8);
        }
    }

    auto kernel = [&](int i, int j) {
        return std::exp(-detail::sqdist(point(i), point(j), d) /
                        (2.0 * sigma[static_cast<size_t>(i)] * sigma[static_cast<size_t>(j)]));
    };
    double within_p = 0, within_q = 0, cross = 0;
    for (int i = 0; i < n; ++i) {
        cross += kernel(i, n + i);
        for (int j = i + 1; j < n; ++j) {
            within_p += kernel(i, j);
            within_q += kernel(n + i, n + j);
            cross += kernel(i, n + j) + kernel(j, n + i);
        }
    }
    const double nn1 = static_cast<double>(n) * (n - 1);
    return (2.0 * within_p) / nn1 + (2.0 * within_q) / nn1 - 2.0 * cross / (static_cast<double>(n) * n);
}

// Exact min-cost perfect matching on an n x n cost matrix (shortest
// augmenting paths with potentials, O(n^3)). Returns row -> column.
inline std::vector<int> solve_assignment(const std::vector<double>& cost, int n) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(n) + 1, 0), v(static_cast<size_t>(n) + 1, 0);
    std::vector<int> match(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            const int i0 = match[static_cast<size_t>(j0)];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                const double cur = cost[static_cast<size_t>(i0 - 1) * n + (j - 1)] - u[static_cast<size_t>(i0)] -
                                   v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<size_t>(j0)];
            match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(static_cast<size_t>(n));
    for (int j = 1; j <= n; ++j) {
        if (match[static_cast<size_t>(j)] > 0) row_to_col[static_cast<size_t>(match[static_cast<size_t>(j)]) - 1] = j - 1;
    }
    return row_to_col;
}

// Empirical 2-Wasserstein for equal-size sets: sqrt of the mean optimal
// squared matching cost over permutations. The final sum runs in ascending
// row order so the value is reproducible against an oracle that does the
// same.
inline double wasserstein2(const Tensor& P, const Tensor& Q) {
    validate_sample_set(P, "wasserstein2 P", 1);
    validate_sample_set(Q, "wasserstein2 Q", 1);
    if (P.dim(0) != Q.dim(0) || P.dim(1) != Q.dim(1)) {
        throw ContractError("wasserstein2: sample sets must match, got " + shape_str(P.shape()) +
                            " vs " + shape_str(Q.shape()));
    }
    const int n = P.dim(0), d = P.dim(1);
    std::vector<double> cost(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            cost[static_cast<size_t>(i) * n + j] =
                detail::sqdist(P.ptr() + static_cast<int64_t>(i) * d, Q.ptr() + static_cast<int64_t>(j) * d, d);
        }
    const std::vector<int> match = solve_assignment(cost, n);
    double total = 0;
    for (int i = 0; i < n; ++i) total += cost[static_cast<size_t>(i) * n + match[static_cast<size_t>(i)]];
    return std::sqrt(total / n);
}

struct CorrelationStats {
    double r_squared = 0;
    double pearson = 0;
    double spearman = 0;
};

namespace detail {

inline std::vector<double> column_means(const Tensor& x) {
    const int n = x.dim(0), d = x.dim(1);
    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) mean[static_cast<size_t>(c)] += x[static_cast<int64_t>(i) * d + c];
    for (double& m : mean) m /= n;
    return mean;
}

inline double pearson_of(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t d = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < d; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(d);
    mb /= static_cast<double>(d);
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < d; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0 || sbb == 0) throw DomainError("correlation undefined: zero variance in a mean vector");
    return sab / std::sqrt(saa * sbb);
}

// average ranks, ties resolved to the mean rank
inline std::vector<double> ranks_of(const std::vector<double>& x) {
    const size_t d = x.size();
    std::vector<size_t> order(d);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
    std::vector<double> rank(d);
    size_t i = 0;
    while (i < d) {
        size_t j = i;
        while (j + 1 < d && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    return rank;
}

}  // namespace detail

// Correlations between the mean generated profile (P) and the mean ground
// truth profile (Q), computed over the d coordinates. R^2 treats Q's mean
// vector as the reference.
inline CorrelationStats mean_profile_correlations(const Tensor& P, const Tensor& Q) {
    validate_sample_set(P, "correlations P", 1);
    validate_sample_set(Q, "correlations Q", 1);
    if (P.dim(1) != Q.dim(1) || P.dim(1) < 2) {
        throw ContractError("correlations: need matching dimension >= 2, got " +
                            shape_str(P.shape()) + " vs " + shape_str(Q.shape()));
    }
    const std::vector<double> gen = detail::column_means(P);
    const std::vector<double> truth = detail::column_means(Q);

    CorrelationStats out;
    out.pearson = detail::pearson_of(gen, truth);

    double ss_res = 0, ss_tot = 0, truth_mean = 0;
    for (double t : truth) truth_mean += t;
    truth_mean /= static_cast<double>(truth.size());
    for (size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - gen[i]) * (truth[i] - gen[i]);
        ss_tot += (truth[i] - truth_mean) * (truth[i] - truth_mean);
    }
    if (ss_tot == 0) throw DomainError("correlation undefined: zero variance in a mean vector");
    out.r_squared = 1.0 - ss_res / ss_tot;

    out.spearman = detail::pearson_of(detail::ranks_of(gen), detail::ranks_of(truth));
    return out;
}

// KL between cluster-occupancy histograms, clusters fitted on the ground
// truth Q with seeded k-means (k-means++ start, Lloyd iterations). A fit
// that leaves one of Q's own clusters empty is refitted with a fresh seed,
// at most 5 attempts. Histograms get Laplace smoothing 1e-6. Returns
// KL(truth || generated).
inline double cluster_kld(const Tensor& P, const Tensor& Q, int n_clusters, uint64_t seed) {
    validate_sample_set(P, "cluster_kld P");
    validate_sample_set(Q, "cluster_kld Q");
    if (P.dim(1) != Q.dim(1)) throw ContractError("cluster_kld: dimension mismatch");
    if (n_clusters < 2) throw ContractError("cluster_kld: n_clusters must be >= 2");
    if (P.dim(0) < n_clusters || Q.dim(0) < n_clusters) {
        throw ContractError("cluster_kld: need at least n_clusters points per set");
    }
    const int nq = Q.dim(0), np = P.dim(0), d = P.dim(1), k = n_clusters;

    auto assign = [&](const Tensor& x, int i, const std::vector<double>& centers) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            double dist = 0;
            const float* p = x.ptr() + static_cast<int64_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                const double diff = p[j] - centers[static_cast<size_t>(c) * d + j];
                dist += diff * diff;
            }
            if (dist < best_d) {
                best_d = dist;
                best = c;
            }
        }
        return best;
    };

    for (int attempt = 0; attempt < 5; ++attempt) {
        Rng rng(seed + static_cast<uint64_t>(attempt), 55);
        // k-means++ seeding on Q
        std::vector<double> centers(static_cast<size_t>(k) * d);
        std::vector<double> min_d(static_cast<size_t>(nq), std::numeric_limits<double>::infinity());
        int first = static_cast<int>(rng.uniform_int(nq));
        for (int j = 0; j < d; ++j) centers[static_cast<size_t>(j)] = Q[static_cast<int64_t>(first) * d + j];
        for (int c = 1; c < k; ++c) {
            double total = 0;
            for (int i = 0; i < nq; ++i) {
                double dist = 0;
                for (int j = 0; j < d; ++j) {
                    const double diff = Q[static_cast<int64_t>(i) * d + j] - centers[static_cast<size_t>(c - 1) * d + j];
                    dist += diff * diff;
                }
                min_d[static_cast<size_t>(i)] = std::min(min_d[static_cast<size_t>(i)], dist);
                total += min_d[static_cast<size_t>(i)];
            }
            double pick = rng.uniform() * total;
            int chosen = nq - 1;
            for (int i = 0; i < nq; ++i) {
                pick -= min_d[static_cast<size_t>(i)];
                if (pick <= 0) {
                    chosen = i;
                    break;
                }
            }
            for (int j = 0; j < d; ++j) centers[static_cast<size_t>(c) * d + j] = Q[static_cast<int64_t>(chosen) * d + j];
        }
        // Lloyd iterations
        std::vector<int> label(static_cast<size_t>(nq), -1);
        for (int iter = 0; iter < 100; ++iter) {
            bool changed = false;
            for (int i = 0; i < nq; ++i) {
                const int a = assign(Q, i, centers);
                if (a != label[static_cast<size_t>(i)]) {
                    label[static_cast<size_t>(i)] = a;
                    changed = true;
                }
            }
            std::vector<double> sums(static_cast<size_t>(k) * d, 0.0);
            std::vector<int> counts(static_cast<size_t>(k), 0);
            for (int i = 0; i < nq; ++i) {
                counts[static_cast<size_t>(label[static_cast<size_t>(i)])]++;
                for (int j = 0; j < d; ++j) {
                    sums[static_cast<size_t>(label[static_cast<size_t>(i)]) * d + j] += Q[static_cast<int64_t>(i) * d + j];
                }
            }
            for (int c = 0; c < k; ++c) {
                if (counts[static_cast<size_t>(c)] > 0) {
                    for (int j = 0; j < d; ++j) {
                        centers[static_cast<size_t>(c) * d + j] =
                            sums[static_cast<size_t>(c) * d + j] / counts[static_cast<size_t>(c)];
                    }
                }
            }
            if (!changed) break;
        }
        // occupancy on the fit set; empty cluster -> refit
        std::vector<int> hist_q(static_cast<size_t>(k), 0);
        for (int i = 0; i < nq; ++i) hist_q[static_cast<size_t>(label[static_cast<size_t>(i)])]++;
        if (std::find(hist_q.begin(), hist_q.end(), 0) != hist_q.end()) continue;

        std::vector<int> hist_p(static_cast<size_t>(k), 0);
        for (int i = 0; i < np; ++i) hist_p[static_cast<size_t>(assign(P, i, centers))]++;

        const double eps = 1e-6;
        double kl = 0;
        for (int c = 0; c < k; ++c) {
            const double q_prob = (hist_q[static_cast<size_t>(c)] + eps) / (nq + k * eps);
            const double p_prob = (hist_p[static_cast<size_t>(c)] + eps) / (np + k * eps);
            kl += q_prob * std::log(q_prob / p_prob);
        }
        return kl;
    }
    throw NumericError("cluster_kld: could not fit " + std::to_string(k) +
                       " non-empty clusters in 5 attempts");
}

}  // namespace vflow
