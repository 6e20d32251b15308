#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vflow/rng.hpp"
#include "vflow/tensor.hpp"

namespace vflow {

struct RegistryError : std::runtime_error {
    explicit RegistryError(const std::string& msg) : std::runtime_error("registry error: " + msg) {}
};

enum class DistKind { Gaussian, GaussianMixture, TwoMoons };

// Analytic sampler description. Mixtures place their modes evenly on a
// circle of radius `radius` in the first two coordinates; two-moons is the
// classic pair of interleaved half circles at unit-ish extent. Above two
// dimensions the 2-D structure is lifted with i.i.d. fill noise (and an
// optional seeded rotation), see lift_to_dim.
struct DistributionSpec {
    DistKind kind = DistKind::Gaussian;
    int dim = 2;
    int modes = 8;           // gaussian_mixture
    float radius = 4.0f;     // gaussian_mixture
    float comp_std = 0.3f;   // gaussian_mixture
    float moon_noise = 0.05f;
    float std = 1.0f;        // gaussian
    float fill_std = 0.1f;   // lift noise for dim > 2
    bool rotate = false;     // apply a seeded orthogonal rotation after lifting

    void validate() const {
        if (dim < 1) throw ConfigError("distribution dim must be >= 1");
        if (kind == DistKind::GaussianMixture) {
            if (modes < 1) throw ConfigError("mixture needs >= 1 mode");
            if (!(comp_std > 0.f)) throw ConfigError("mixture component std must be positive");
            if (dim < 2) throw ConfigError("mixture requires dim >= 2");
        }
        if (kind == DistKind::TwoMoons && dim < 2) throw ConfigError("two_moons requires dim >= 2");
        if (kind == DistKind::Gaussian && !(std > 0.f)) throw ConfigError("gaussian std must be positive");
    }
};

// Deterministic random orthogonal matrix: Gram-Schmidt over a seeded
// gaussian matrix, computed in double.
inline std::vector<double> seeded_rotation(int dim, uint64_t seed) {
    Rng rng(seed, 41);
    std::vector<double> q(static_cast<size_t>(dim) * dim);
    for (auto& x : q) x = rng.normal();
    for (int c = 0; c < dim; ++c) {
        for (int prev = 0; prev < c; ++prev) {
            double dot = 0;
            for (int r = 0; r < dim; ++r) dot += q[r * dim + c] * q[r * dim + prev];
            for (int r = 0; r < dim; ++r) q[r * dim + c] -= dot * q[r * dim + prev];
        }
        double norm = 0;
        for (int r = 0; r < dim; ++r) norm += q[r * dim + c] * q[r * dim + c];
        norm = std::sqrt(norm);
        for (int r = 0; r < dim; ++r) q[r * dim + c] /= norm;
    }
    return q;
}

// Embed 2-D points in D dimensions: the first two coordinates carry the
// structure, the rest are N(0, fill_std^2), then an optional rotation.
inline Tensor lift_to_dim(const Tensor& points, int D, float fill_std, uint64_t seed,
                          bool rotate = false) {
    if (points.rank() != 2 || points.dim(1) != 2) {
        throw ShapeError("lift_to_dim expects [n, 2], got " + shape_str(points.shape()));
    }
    if (D < 2) throw ContractError("lift_to_dim: D must be >= 2");
    const int n = points.dim(0);
    if (D == 2 && !rotate) return points;

    Rng rng(seed, 42);
    Tensor out({n, D});
    for (int i = 0; i < n; ++i) {
        out[static_cast<int64_t>(i) * D + 0] = points[i * 2 + 0];
        out[static_cast<int64_t>(i) * D + 1] = points[i * 2 + 1];
        for (int c = 2; c < D; ++c) {
            out[static_cast<int64_t>(i) * D + c] =
                fill_std > 0.f ? static_cast<float>(fill_std * rng.normal()) : 0.f;
        }
    }
    if (rotate) {
        const std::vector<double> q = seeded_rotation(D, seed);
        Tensor rotated({n, D});
        for (int i = 0; i < n; ++i) {
            for (int r = 0; r < D; ++r) {
                double acc = 0;
                for (int c = 0; c < D; ++c) acc += q[static_cast<size_t>(r) * D + c] * out[static_cast<int64_t>(i) * D + c];
                rotated[static_cast<int64_t>(i) * D + r] = static_cast<float>(acc);
            }
        }
        return rotated;
    }
    return out;
}

namespace detail {

inline void mixture_center(const DistributionSpec& spec, int mode, float& cx, float& cy) {
    const double theta = 2.0 * M_PI * static_cast<double>(mode) / spec.modes;
    cx = static_cast<float>(spec.radius * std::cos(theta));
    cy = static_cast<float>(spec.radius * std::sin(theta));
}

// 2-D moons: upper arc of the unit circle and a lower arc shifted to
// interleave, plus isotropic gaussian noise.
inline void moons_point(Rng& rng, float noise, float& x, float& y) {
    const double phi = rng.uniform(0.0, M_PI);
    if (rng.uniform() < 0.5) {
        x = static_cast<float>(std::cos(phi));
        y = static_cast<float>(std::sin(phi));
    } else {
        x = static_cast<float>(1.0 - std::cos(phi));
        y = static_cast<float>(0.5 - std::sin(phi));
    }
    if (noise > 0.f) {
        x += static_cast<float>(noise * rng.normal());
        y += static_cast<float>(noise * rng.normal());
    }
}

}  // namespace detail

// n samples, deterministic per (spec, n, seed). `mode_filter` restricts a
// mixture to one component (conditional sampling for labeled tasks).
inline Tensor sample(const DistributionSpec& spec, int n, uint64_t seed,
                     std::optional<int> mode_filter = std::nullopt) {
    spec.validate();
    if (n < 1) throw ContractError("sample: n must be >= 1");
    Rng rng(seed, 7);

    switch (spec.kind) {
        case DistKind::Gaussian: {
            Tensor out({n, spec.dim});
            for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(spec.std * rng.normal());
            return out;
        }
        case DistKind::GaussianMixture: {
            Tensor base({n, 2});
            for (int i = 0; i < n; ++i) {
                const int mode = mode_filter ? *mode_filter
                                             : static_cast<int>(rng.uniform_int(spec.modes));
                float cx, cy;
                detail::mixture_center(spec, mode, cx, cy);
                base[i * 2 + 0] = cx + static_cast<float>(spec.comp_std * rng.normal());
                base[i * 2 + 1] = cy + static_cast<float>(spec.comp_std * rng.normal());
            }
            if (spec.dim == 2 && !spec.rotate) return base;
            return lift_to_dim(base, spec.dim, spec.fill_std, seed, spec.rotate);
        }
        case DistKind::TwoMoons: {
            Tensor base({n, 2});
            for (int i = 0; i < n; ++i) {
                detail::moons_point(rng, spec.moon_noise, base[i * 2 + 0], base[i * 2 + 1]);
            }
            if (spec.dim == 2 && !spec.rotate) return base;
            return lift_to_dim(base, spec.dim, spec.fill_std, seed, spec.rotate);
        }
    }
    throw ContractError("sample: unknown distribution kind");
}

// One flow-matching problem: a (source, target) pair, dimensions, and the
// sequence geometry expected by the sequence model.
struct FlowTask {
    std::string name;
    DistributionSpec source;
    DistributionSpec target;
    int d_in = 2;
    int n_time_points = 10;
    int n_trajectories = 1;
    int n_space_tokens = 1;
    std::vector<std::string> labels;  // empty: unconditional

    bool conditioned() const { return !labels.empty(); }

    void validate() const {
        if (n_time_points < 2) throw ConfigError("task needs >= 2 time points");
        if (n_trajectories < 1) throw ConfigError("task needs >= 1 trajectory");
        if (n_space_tokens < 1) throw ConfigError("task needs >= 1 spatial token");
        if (source.dim != d_in || target.dim != d_in) {
            throw ConfigError("task dims disagree: d_in=" + std::to_string(d_in) + " source=" +
                              std::to_string(source.dim) + " target=" + std::to_string(target.dim));
        }
    }
};

namespace detail {

inline DistributionSpec gaussian_spec(int dim) {
    DistributionSpec s;
    s.kind = DistKind::Gaussian;
    s.dim = dim;
    return s;
}

inline DistributionSpec mixture_spec(int modes, int dim) {
    DistributionSpec s;
    s.kind = DistKind::GaussianMixture;
    s.modes = modes;
    s.dim = dim;
    return s;
}

inline DistributionSpec moons_spec(int dim) {
    DistributionSpec s;
    s.kind = DistKind::TwoMoons;
    s.dim = dim;
    return s;
}

}  // namespace detail

inline std::vector<std::string> task_names() {
    std::vector<std::string> names;
    for (const char* base : {"g->2g", "g->8g", "g->2moons"}) {
        for (int dim : {2, 100, 1000}) {
            names.push_back(std::string(base) + "@" + std::to_string(dim));
        }
    }
    names.push_back("2g->3g@100");
    names.push_back("2g->4g@100");
    names.push_back("2moons->8g@2");
    return names;
}

// Task registry. Accepts the unicode arrow as an alias for "->".
inline FlowTask task_registry(const std::string& raw_name) {
    std::string name = raw_name;
    // normalize U+2192 to "->"
    const std::string arrow = "→";
    for (size_t pos = name.find(arrow); pos != std::string::npos; pos = name.find(arrow)) {
        name.replace(pos, arrow.size(), "->");
    }

    FlowTask task;
    task.name = name;

    auto make = [&](DistributionSpec src, DistributionSpec tgt, int dim) {
        task.source = std::move(src);
        task.target = std::move(tgt);
        task.d_in = dim;
        return task;
    };

    using detail::gaussian_spec;
    using detail::mixture_spec;
    using detail::moons_spec;

    for (int dim : {2, 100, 1000}) {
        const std::string suffix = "@" + std::to_string(dim);
        if (name == "g->2g" + suffix) return make(gaussian_spec(dim), mixture_spec(2, dim), dim);
        if (name == "g->8g" + suffix) return make(gaussian_spec(dim), mixture_spec(8, dim), dim);
        if (name == "g->2moons" + suffix) return make(gaussian_spec(dim), moons_spec(dim), dim);
    }
    if (name == "2g->3g@100") return make(mixture_spec(2, 100), mixture_spec(3, 100), 100);
    if (name == "2g->4g@100") return make(mixture_spec(2, 100), mixture_spec(4, 100), 100);
    if (name == "2moons->8g@2") return make(moons_spec(2), mixture_spec(8, 2), 2);

    std::string valid;
    for (const auto& n : task_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw RegistryError("unknown task \"" + raw_name + "\"; valid names: " + valid);
}

}  // namespace vflow
