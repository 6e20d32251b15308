#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "vflow/data_synth.hpp"

using namespace vflow;

TEST_CASE("standard gaussian obeys the law of large numbers") {
    DistributionSpec spec;
    spec.kind = DistKind::Gaussian;
    spec.dim = 2;
    const int n = 100000;
    Tensor x = sample(spec, n, 3);

    double mean[2] = {0, 0};
    for (int i = 0; i < n; ++i) {
        mean[0] += x[i * 2];
        mean[1] += x[i * 2 + 1];
    }
    mean[0] /= n;
    mean[1] /= n;
    REQUIRE(std::abs(mean[0]) < 0.02);
    REQUIRE(std::abs(mean[1]) < 0.02);

    double cov[3] = {0, 0, 0};  // xx, yy, xy
    for (int i = 0; i < n; ++i) {
        const double a = x[i * 2] - mean[0];
        const double b = x[i * 2 + 1] - mean[1];
        cov[0] += a * a;
        cov[1] += b * b;
        cov[2] += a * b;
    }
    REQUIRE(cov[0] / n == Catch::Approx(1.0).epsilon(0.05));
    REQUIRE(cov[1] / n == Catch::Approx(1.0).epsilon(0.05));
    REQUIRE(std::abs(cov[2] / n) < 0.05);
}

TEST_CASE("eight-mode mixture fills every mode evenly") {
    DistributionSpec spec;
    spec.kind = DistKind::GaussianMixture;
    spec.modes = 8;
    spec.dim = 2;
    const int n = 100000;
    Tensor x = sample(spec, n, 11);

    std::map<int, int> counts;
    for (int i = 0; i < n; ++i) {
        int best = -1;
        double best_d = 1e30;
        for (int m = 0; m < 8; ++m) {
            const double theta = 2.0 * M_PI * m / 8;
            const double dx = x[i * 2] - 4.0 * std::cos(theta);
            const double dy = x[i * 2 + 1] - 4.0 * std::sin(theta);
            const double d = dx * dx + dy * dy;
            if (d < best_d) {
                best_d = d;
                best = m;
            }
        }
        counts[best]++;
    }
    REQUIRE(counts.size() == 8);
    // multinomial: 3 sigma around n/8
    const double expected = n / 8.0;
    const double sigma = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
    for (const auto& [mode, c] : counts) {
        REQUIRE(std::abs(c - expected) < 3 * sigma + 1);
    }
}

TEST_CASE("mixture per-coordinate spread matches the component std") {
    DistributionSpec spec;
    spec.kind = DistKind::GaussianMixture;
    spec.modes = 4;
    spec.dim = 2;
    const int n = 100000;
    Tensor x = sample(spec, n, 5);
    // distance to the generating center per coordinate ~ N(0, comp_std^2)
    double acc = 0;
    int used = 0;
    for (int i = 0; i < n; ++i) {
        int best = -1;
        double best_d = 1e30;
        for (int m = 0; m < 4; ++m) {
            const double theta = 2.0 * M_PI * m / 4;
            const double dx = x[i * 2] - 4.0 * std::cos(theta);
            const double dy = x[i * 2 + 1] - 4.0 * std::sin(theta);
            if (dx * dx + dy * dy < best_d) {
                best_d = dx * dx + dy * dy;
                best = m;
            }
        }
        const double theta = 2.0 * M_PI * best / 4;
        const double dx = x[i * 2] - 4.0 * std::cos(theta);
        const double dy = x[i * 2 + 1] - 4.0 * std::sin(theta);
        acc += dx * dx + dy * dy;
        used += 2;
    }
    REQUIRE(std::sqrt(acc / used) == Catch::Approx(0.3).epsilon(0.05));
}

TEST_CASE("noiseless moons lie exactly on the two arcs") {
    DistributionSpec spec;
    spec.kind = DistKind::TwoMoons;
    spec.dim = 2;
    spec.moon_noise = 0.0f;
    Tensor x = sample(spec, 2000, 9);
    for (int i = 0; i < 2000; ++i) {
        const double a = x[i * 2], b = x[i * 2 + 1];
        const double upper = std::abs(a * a + b * b - 1.0);
        const double lower = std::abs((a - 1.0) * (a - 1.0) + (b - 0.5) * (b - 0.5) - 1.0);
        REQUIRE(std::min(upper, lower) < 1e-5);
    }
}

TEST_CASE("sampling is reproducible bit for bit") {
    DistributionSpec spec;
    spec.kind = DistKind::GaussianMixture;
    spec.modes = 3;
    spec.dim = 100;
    REQUIRE(sample(spec, 64, 123).data() == sample(spec, 64, 123).data());
    REQUIRE(sample(spec, 64, 123).data() != sample(spec, 64, 124).data());
}

TEST_CASE("mode filter restricts a mixture to one component") {
    DistributionSpec spec;
    spec.kind = DistKind::GaussianMixture;
    spec.modes = 8;
    spec.dim = 2;
    Tensor x = sample(spec, 500, 21, 3);
    const double theta = 2.0 * M_PI * 3 / 8;
    for (int i = 0; i < 500; ++i) {
        const double dx = x[i * 2] - 4.0 * std::cos(theta);
        const double dy = x[i * 2 + 1] - 4.0 * std::sin(theta);
        REQUIRE(std::sqrt(dx * dx + dy * dy) < 0.3 * 6);
    }
}

TEST_CASE("lift_to_dim identity and recovery") {
    Tensor pts({3, 2}, {1, 2, 3, 4, 5, 6});
    REQUIRE(lift_to_dim(pts, 2, 0.1f, 1).data() == pts.data());

    Tensor lifted = lift_to_dim(pts, 5, 0.0f, 1);
    REQUIRE(lifted.shape() == std::vector<int>{3, 5});
    for (int i = 0; i < 3; ++i) {
        REQUIRE(lifted[i * 5 + 0] == pts[i * 2 + 0]);
        REQUIRE(lifted[i * 5 + 1] == pts[i * 2 + 1]);
        for (int c = 2; c < 5; ++c) REQUIRE(lifted[i * 5 + c] == 0.f);
    }
    REQUIRE_THROWS_AS(lift_to_dim(pts, 1, 0.f, 1), ContractError);
}

TEST_CASE("seeded rotation preserves pairwise distances") {
    Rng rng(2);
    Tensor pts = rng.normal_tensor({20, 2}, 2.0);
    Tensor plain = lift_to_dim(pts, 24, 0.1f, 77, false);
    Tensor rotated = lift_to_dim(pts, 24, 0.1f, 77, true);
    for (int i = 0; i < 20; ++i)
        for (int j = i + 1; j < 20; ++j) {
            double d0 = 0, d1 = 0;
            for (int c = 0; c < 24; ++c) {
                const double a = plain[i * 24 + c] - plain[j * 24 + c];
                const double b = rotated[i * 24 + c] - rotated[j * 24 + c];
                d0 += a * a;
                d1 += b * b;
            }
            REQUIRE(std::sqrt(d1) == Catch::Approx(std::sqrt(d0)).margin(1e-4));
        }
}

TEST_CASE("registry resolves every published name") {
    for (const auto& name : task_names()) {
        FlowTask task = task_registry(name);
        REQUIRE(task.name == name);
        REQUIRE_NOTHROW(task.validate());
    }

    FlowTask t = task_registry("g->8g@100");
    REQUIRE(t.d_in == 100);
    REQUIRE(t.source.kind == DistKind::Gaussian);
    REQUIRE(t.target.kind == DistKind::GaussianMixture);
    REQUIRE(t.target.modes == 8);

    FlowTask moons = task_registry("2moons->8g@2");
    REQUIRE(moons.source.kind == DistKind::TwoMoons);
    REQUIRE(moons.target.modes == 8);
    REQUIRE(moons.d_in == 2);
}

TEST_CASE("registry accepts the unicode arrow alias") {
    FlowTask t = task_registry("g→8g@100");
    REQUIRE(t.name == "g->8g@100");
}

TEST_CASE("unknown task error lists the valid names") {
    REQUIRE_THROWS_AS(task_registry("nope"), RegistryError);
    REQUIRE_THROWS_WITH(task_registry("nope"),
                        Catch::Matchers::ContainsSubstring("2moons->8g@2") &&
                            Catch::Matchers::ContainsSubstring("g->2g@1000"));
}
