#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vflow/metrics.hpp"
#include "vflow/rng.hpp"

using namespace vflow;

namespace {

// factorial-enumeration oracle, independent of the assignment solver
double w2_brute_force(const Tensor& P, const Tensor& Q) {
    const int n = P.dim(0), d = P.dim(1);
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_perm;
    do {
        double total = 0;
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < d; ++c) {
                const double diff = static_cast<double>(P[i * d + c]) - Q[perm[static_cast<size_t>(i)] * d + c];
                total += diff * diff;
            }
        }
        if (total < best) {
            best = total;
            best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    // canonical re-accumulation in ascending row order, same as the solver path
    double total = 0;
    for (int i = 0; i < n; ++i) {
        double c_i = 0;
        for (int c = 0; c < d; ++c) {
            const double diff = static_cast<double>(P[i * d + c]) - Q[best_perm[static_cast<size_t>(i)] * d + c];
            c_i += diff * diff;
        }
        total += c_i;
    }
    return std::sqrt(total / n);
}

Tensor shuffled_rows(const Tensor& x, Rng& rng) {
    const int n = x.dim(0), d = x.dim(1);
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
    Tensor out({n, d});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) out[i * d + c] = x[order[static_cast<size_t>(i)] * d + c];
    return out;
}

}  // namespace

TEST_CASE("mmd hand-evaluated two-point case") {
    // P = Q = {0, 1}: within terms e^-1 each, cross term 1 + e^-1,
    // so the printed estimator gives e^-1 - 1 (negative for identical sets)
    Tensor P({2, 1}, {0.f, 1.f});
    REQUIRE(mmd_rbf(P, P) == Catch::Approx(std::exp(-1.0) - 1.0).margin(1e-12));
}

TEST_CASE("mmd is symmetric and translation invariant") {
    Rng rng(1);
    Tensor P = rng.normal_tensor({16, 3});
    Tensor Q = rng.normal_tensor({16, 3}, 1.5, 0.4);
    REQUIRE(mmd_rbf(P, Q) == mmd_rbf(Q, P));

    Tensor Pt = P, Qt = Q;
    for (int i = 0; i < 16; ++i)
        for (int c = 0; c < 3; ++c) {
            Pt[i * 3 + c] += 0.75f * (c + 1);
            Qt[i * 3 + c] += 0.75f * (c + 1);
        }
    REQUIRE(mmd_rbf(Pt, Qt) == Catch::Approx(mmd_rbf(P, Q)).margin(1e-6));
}

TEST_CASE("mmd is invariant under within-set permutations") {
    Rng rng(2);
    Tensor P = rng.normal_tensor({12, 2});
    Tensor Q = rng.normal_tensor({12, 2}, 2.0);
    const double base = mmd_rbf(P, Q);
    Rng shuffle_rng(3);
    REQUIRE(mmd_rbf(shuffled_rows(P, shuffle_rng), shuffled_rows(Q, shuffle_rng)) ==
            Catch::Approx(base).margin(1e-12));

    const double abase = adaptive_mmd(P, Q);
    Rng shuffle_rng2(3);
    REQUIRE(adaptive_mmd(shuffled_rows(P, shuffle_rng2), shuffled_rows(Q, shuffle_rng2)) ==
            Catch::Approx(abase).margin(1e-12));
}

TEST_CASE("mmd size mismatch raises") {
    Rng rng(4);
    REQUIRE_THROWS_AS(mmd_rbf(rng.normal_tensor({4, 2}), rng.normal_tensor({5, 2})), ContractError);
}

TEST_CASE("adaptive mmd with uniform bandwidth reduces to the fixed kernel") {
    Rng rng(5);
    Tensor P = rng.normal_tensor({10, 2});
    Tensor Q = rng.normal_tensor({10, 2}, 1.2, 0.3);
    const double fixed = mmd_rbf(P, Q);
    const double uniform = adaptive_mmd(P, Q, 3, std::sqrt(0.5));
    REQUIRE(uniform == Catch::Approx(fixed).margin(1e-9));
}

TEST_CASE("adaptive mmd is symmetric and reacts to local scale") {
    Rng rng(6);
    // tight cluster vs spread cluster: adaptive and fixed disagree
    Tensor P = rng.normal_tensor({24, 2}, 0.02);
    Tensor Q = rng.normal_tensor({24, 2}, 2.0);
    REQUIRE(adaptive_mmd(P, Q) == adaptive_mmd(Q, P));
    REQUIRE(std::abs(adaptive_mmd(P, Q) - mmd_rbf(P, Q)) > 1e-3);

    REQUIRE_THROWS_AS(adaptive_mmd(P, Q, 24), ContractError);

    // duplicated points: sigma floor keeps the kernel finite
    Tensor dup({4, 1}, {1.f, 1.f, 1.f, 1.f});
    REQUIRE(std::isfinite(adaptive_mmd(dup, dup, 2)));
}

TEST_CASE("wasserstein2 single points and hand-enumerated pair") {
    REQUIRE(wasserstein2(Tensor({1, 1}, {0.f}), Tensor({1, 1}, {3.f})) == Catch::Approx(3.0));

    // {0,1} vs {1,2}: identity matching wins over the swap
    Tensor P({2, 1}, {0.f, 1.f});
    Tensor Q({2, 1}, {1.f, 2.f});
    REQUIRE(wasserstein2(P, Q) == Catch::Approx(1.0));
}

TEST_CASE("wasserstein2 equals factorial brute force exactly for n <= 6") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(5));
        const int d = 1 + static_cast<int>(rng.uniform_int(3));
        Tensor P = rng.normal_tensor({n, d}, 1.5);
        Tensor Q = rng.normal_tensor({n, d}, 1.5, 0.5);
        REQUIRE(wasserstein2(P, Q) == w2_brute_force(P, Q));
    }
}

TEST_CASE("wasserstein2 metric axioms on random triples") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor A = rng.normal_tensor({8, 2});
        Tensor B = rng.normal_tensor({8, 2}, 1.3);
        Tensor C = rng.normal_tensor({8, 2}, 0.7, 1.0);
        REQUIRE(wasserstein2(A, A) == 0.0);
        REQUIRE(wasserstein2(A, B) == Catch::Approx(wasserstein2(B, A)).margin(1e-12));
        REQUIRE(wasserstein2(A, C) <= wasserstein2(A, B) + wasserstein2(B, C) + 1e-9);
    }
}

TEST_CASE("correlations of a set with itself are all one") {
    Rng rng(9);
    Tensor P = rng.normal_tensor({20, 6});
    CorrelationStats s = mean_profile_correlations(P, P);
    REQUIRE(s.r_squared == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(s.pearson == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(s.spearman == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("negated mean profile has pearson -1") {
    Rng rng(10);
    Tensor P = rng.normal_tensor({30, 5});
    Tensor Q({30, 5});
    for (int64_t i = 0; i < Q.numel(); ++i) Q[i] = -P[i] + 2.f;
    CorrelationStats s = mean_profile_correlations(P, Q);
    REQUIRE(s.pearson == Catch::Approx(-1.0).margin(1e-6));
    REQUIRE(s.spearman == Catch::Approx(-1.0).margin(1e-6));
}

TEST_CASE("correlations match an independent formula oracle within 1e-10") {
    Rng rng(11);
    Tensor P = rng.normal_tensor({40, 10});
    Tensor Q = rng.normal_tensor({40, 10}, 1.4, 0.2);
    CorrelationStats s = mean_profile_correlations(P, Q);

    // oracle: separate accumulation of the defining formulas
    const int n = 40, d = 10;
    std::vector<double> gen(d, 0), truth(d, 0);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) {
            gen[static_cast<size_t>(c)] += P[i * d + c] / n;
            truth[static_cast<size_t>(c)] += Q[i * d + c] / n;
        }
    double mg = 0, mt = 0;
    for (int c = 0; c < d; ++c) {
        mg += gen[static_cast<size_t>(c)] / d;
        mt += truth[static_cast<size_t>(c)] / d;
    }
    double num = 0, va = 0, vb = 0, ss_res = 0, ss_tot = 0;
    for (int c = 0; c < d; ++c) {
        num += (gen[static_cast<size_t>(c)] - mg) * (truth[static_cast<size_t>(c)] - mt);
        va += (gen[static_cast<size_t>(c)] - mg) * (gen[static_cast<size_t>(c)] - mg);
        vb += (truth[static_cast<size_t>(c)] - mt) * (truth[static_cast<size_t>(c)] - mt);
        ss_res += (truth[static_cast<size_t>(c)] - gen[static_cast<size_t>(c)]) *
                  (truth[static_cast<size_t>(c)] - gen[static_cast<size_t>(c)]);
        ss_tot += (truth[static_cast<size_t>(c)] - mt) * (truth[static_cast<size_t>(c)] - mt);
    }
    REQUIRE(s.pearson == Catch::Approx(num / std::sqrt(va * vb)).margin(1e-10));
    REQUIRE(s.r_squared == Catch::Approx(1.0 - ss_res / ss_tot).margin(1e-10));

    // spearman oracle: quadratic rank counting
    auto rank_quadratic = [&](const std::vector<double>& x) {
        std::vector<double> r(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            double below = 0, equal = 0;
            for (size_t j = 0; j < x.size(); ++j) {
                below += x[j] < x[i] ? 1 : 0;
                equal += x[j] == x[i] ? 1 : 0;
            }
            r[i] = below + (equal + 1.0) / 2.0;
        }
        return r;
    };
    std::vector<double> rg = rank_quadratic(gen), rt = rank_quadratic(truth);
    double rnum = 0, rva = 0, rvb = 0, rmg = 0, rmt = 0;
    for (int c = 0; c < d; ++c) {
        rmg += rg[static_cast<size_t>(c)] / d;
        rmt += rt[static_cast<size_t>(c)] / d;
    }
    for (int c = 0; c < d; ++c) {
        rnum += (rg[static_cast<size_t>(c)] - rmg) * (rt[static_cast<size_t>(c)] - rmt);
        rva += (rg[static_cast<size_t>(c)] - rmg) * (rg[static_cast<size_t>(c)] - rmg);
        rvb += (rt[static_cast<size_t>(c)] - rmt) * (rt[static_cast<size_t>(c)] - rmt);
    }
    REQUIRE(s.spearman == Catch::Approx(rnum / std::sqrt(rva * rvb)).margin(1e-10));
}

TEST_CASE("zero variance in a mean profile is an error") {
    Tensor P({3, 2}, {1.f, 1.f, 1.f, 1.f, 1.f, 1.f});
    Rng rng(12);
    Tensor Q = rng.normal_tensor({3, 2});
    REQUIRE_THROWS_AS(mean_profile_correlations(P, Q), DomainError);
}

TEST_CASE("cluster kld near zero for identical sets") {
    Rng rng(13);
    // two well-separated blobs
    Tensor Q({40, 2});
    for (int i = 0; i < 40; ++i) {
        const float cx = i < 20 ? -5.f : 5.f;
        Q[i * 2] = cx + static_cast<float>(0.3 * rng.normal());
        Q[i * 2 + 1] = static_cast<float>(0.3 * rng.normal());
    }
    REQUIRE(cluster_kld(Q, Q, 2, 1) < 1e-3);
}

TEST_CASE("cluster kld grows when a mode is missing") {
    Rng rng(14);
    Tensor Q({60, 2});
    for (int i = 0; i < 60; ++i) {
        const float cx = i < 30 ? -5.f : 5.f;
        Q[i * 2] = cx + static_cast<float>(0.3 * rng.normal());
        Q[i * 2 + 1] = static_cast<float>(0.3 * rng.normal());
    }
    // P covers only the left mode
    Tensor P({60, 2});
    for (int i = 0; i < 60; ++i) {
        P[i * 2] = -5.f + static_cast<float>(0.3 * rng.normal());
        P[i * 2 + 1] = static_cast<float>(0.3 * rng.normal());
    }
    const double kl = cluster_kld(P, Q, 2, 1);
    REQUIRE(kl > 1.0);
    REQUIRE(kl >= 0.0);
    // deterministic per seed
    REQUIRE(cluster_kld(P, Q, 2, 1) == kl);
}

TEST_CASE("cluster kld contract checks") {
    Rng rng(15);
    Tensor P = rng.normal_tensor({5, 2});
    REQUIRE_THROWS_AS(cluster_kld(P, P, 1, 0), ContractError);
    REQUIRE_THROWS_AS(cluster_kld(P, P, 6, 0), ContractError);
}
