#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vflow/adam.hpp"
#include "vflow/autodiff.hpp"
#include "vflow/data_synth.hpp"
#include "vflow/metrics.hpp"
#include "vflow/ode.hpp"
#include "vflow/params.hpp"
#include "vflow/rng.hpp"
#include "vflow/train_log.hpp"

namespace vflow {

// MLP vector field v(x, t): the time scalar is appended to the state as a
// raw input feature, matching the usual conditional-flow-matching setup.
struct VectorFieldConfig {
    int d_in = 2;
    int width = 1024;
    int depth = 4;  // hidden layers

    void validate() const {
        if (d_in < 1 || width < 1 || depth < 1) {
            throw ConfigError("vector field: d_in, width, depth must be positive");
        }
    }
};

struct VectorFieldNet {
    VectorFieldConfig config;
    ParamSet params;
};

inline VectorFieldNet vector_field_init(const VectorFieldConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(seed, 19);
    VectorFieldNet net;
    net.config = config;
    auto lin = [&](const std::string& name, int in, int out) {
        // He-ish scale keeps deep 1024-wide stacks trainable
        const double std = std::sqrt(2.0 / in);
        net.params.add("cfm." + name + ".w", rng.normal_tensor({in, out}, std));
        net.params.add("cfm." + name + ".b", Tensor({out}));
    };
    lin("l0", config.d_in + 1, config.width);
    for (int i = 1; i < config.depth; ++i) {
        lin("l" + std::to_string(i), config.width, config.width);
    }
    lin("out", config.width, config.d_in);
    return net;
}

// Tape forward over a batch: x [B, d_in], t [B] -> velocity [B, d_in].
template <typename S>
Var vector_field_forward(TapeT<S>& tape, const VectorFieldConfig& config, const BoundParams<S>& w,
                         Var x, Var t_column) {
    Var h = tape.concat({x, t_column}, 1);
    for (int i = 0; i < config.depth; ++i) {
        const std::string name = "cfm.l" + std::to_string(i);
        h = tape.gelu(tape.linear(h, w[name + ".w"], w[name + ".b"]));
    }
    return tape.linear(h, w["cfm.out.w"], w["cfm.out.b"]);
}

// Plain forward for ODE integration (no tape, single state).
inline void vector_field_eval(const VectorFieldNet& net, const OdeState& x, double t,
                              OdeState& out) {
    const VectorFieldConfig& c = net.config;
    std::vector<float> h(static_cast<size_t>(c.d_in) + 1);
    for (int i = 0; i < c.d_in; ++i) h[static_cast<size_t>(i)] = static_cast<float>(x[static_cast<size_t>(i)]);
    h[static_cast<size_t>(c.d_in)] = static_cast<float>(t);

    std::vector<float> next;
    auto layer = [&](const std::string& name, bool act) {
        const Tensor& W = net.params.get(name + ".w");
        const Tensor& b = net.params.get(name + ".b");
        const int in = W.dim(0), out_dim = W.dim(1);
        next.assign(static_cast<size_t>(out_dim), 0.f);
        for (int i = 0; i < in; ++i) {
            const float hi = h[static_cast<size_t>(i)];
            const float* row = W.ptr() + static_cast<int64_t>(i) * out_dim;
            for (int j = 0; j < out_dim; ++j) next[static_cast<size_t>(j)] += hi * row[j];
        }
        for (int j = 0; j < out_dim; ++j) {
            next[static_cast<size_t>(j)] += b[j];
            if (act) {
                const float v = next[static_cast<size_t>(j)];
                const float u = 0.7978845608f * (v + 0.044715f * v * v * v);
                next[static_cast<size_t>(j)] = 0.5f * v * (1.f + std::tanh(u));
            }
        }
        h.swap(next);
    };
    for (int i = 0; i < c.depth; ++i) layer("cfm.l" + std::to_string(i), true);
    layer("cfm.out", false);

    out.resize(static_cast<size_t>(c.d_in));
    for (int i = 0; i < c.d_in; ++i) out[static_cast<size_t>(i)] = h[static_cast<size_t>(i)];
}

// Flow-matching regression target for straight-line paths: v* = z1 - z0 at
// x_t = (1 - t) z0 + t z1. Loss is the squared error summed over state
// dimensions, averaged over the batch.
template <typename S>
Var cfm_loss(TapeT<S>& tape, const VectorFieldConfig& config, const BoundParams<S>& w, Var z0,
             Var z1, Var t_column, Var x_t) {
    Var pred = vector_field_forward(tape, config, w, x_t, t_column);
    Var diff = tape.sub(pred, tape.sub(z1, z0));
    return tape.mean_all(tape.sum_last(tape.mul(diff, diff)));
}

struct CfmTrainConfig {
    int steps = 2000;
    int batch_size = 128;
    double lr = 1e-3;
    uint64_t seed = 1;
    bool ot_pairing = false;  // minibatch optimal-transport pairing (CFM-OT)

    void validate() const {
        if (steps < 1 || batch_size < 1) throw ConfigError("cfm train: steps and batch must be positive");
        if (!(lr > 0)) throw ConfigError("cfm train: lr must be positive");
    }
};

struct CfmTrainResult {
    VectorFieldNet net;
    std::vector<StepLoss> losses;
    TrainStatus status = TrainStatus::Ok;
    int abort_step = -1;
};

// Online training on fresh (z0, z1, t) draws every step. With ot_pairing the
// batch is re-paired by the exact assignment on squared distances before the
// paths are built.
inline CfmTrainResult train_cfm(const FlowTask& task, const VectorFieldConfig& net_config,
                                const CfmTrainConfig& config) {
    config.validate();
    VectorFieldConfig cfg = net_config;
    cfg.d_in = task.d_in;

    CfmTrainResult result;
    result.net = vector_field_init(cfg, config.seed);
    AdamState opt(config.lr);
    Rng data_rng(config.seed, 2);

    const int B = config.batch_size, D = task.d_in;
    for (int step = 0; step < config.steps; ++step) {
        Tensor z0 = sample(task.source, B, data_rng.raw());
        Tensor z1 = sample(task.target, B, data_rng.raw());
        if (config.ot_pairing) {
            std::vector<double> cost(static_cast<size_t>(B) * B);
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < B; ++j) {
                    cost[static_cast<size_t>(i) * B + j] = detail::sqdist(
                        z0.ptr() + static_cast<int64_t>(i) * D, z1.ptr() + static_cast<int64_t>(j) * D, D);
                }
            const std::vector<int> match = solve_assignment(cost, B);
            Tensor paired({B, D});
            for (int i = 0; i < B; ++i)
                for (int c = 0; c < D; ++c) paired[static_cast<int64_t>(i) * D + c] = z1[static_cast<int64_t>(match[static_cast<size_t>(i)]) * D + c];
            z1 = std::move(paired);
        }
        Tensor t_col({B, 1});
        Tensor x_t({B, D});
        for (int i = 0; i < B; ++i) {
            const float t = static_cast<float>(data_rng.uniform());
            t_col[i] = t;
            for (int c = 0; c < D; ++c) {
                x_t[static_cast<int64_t>(i) * D + c] =
                    (1.f - t) * z0[static_cast<int64_t>(i) * D + c] + t * z1[static_cast<int64_t>(i) * D + c];
            }
        }

        Tape tape;
        BoundParams<float> w(tape, result.net.params);
        Var loss = cfm_loss(tape, cfg, w, tape.constant(z0), tape.constant(z1),
                            tape.constant(t_col), tape.constant(x_t));
        const double loss_val = tape.value(loss).item();
        if (!std::isfinite(loss_val)) {
            result.status = TrainStatus::AbortedNonFinite;
            result.abort_step = step;
            return result;
        }
        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(result.net.params.size());
        for (size_t i = 0; i < result.net.params.size(); ++i) {
            grads.push_back(tape.grad(w[result.net.params.name(i)]));
        }
        opt.step(result.net.params, grads);
        result.losses.push_back({step, loss_val, loss_val, 0.0});
    }
    return result;
}

struct CfmGenerateResult {
    Tensor samples;            // [n, d_in] states at t = 1
    std::vector<int> n_evals;  // per sample
    int n_failures = 0;        // stiffness: max_evals exceeded
};

// Integrate each source draw through the learned field from t=0 to t=1.
inline CfmGenerateResult generate_cfm(const VectorFieldNet& net, const FlowTask& task, int n,
                                      const OdeSolveConfig& solve, uint64_t seed) {
    if (n < 1) throw ContractError("generate_cfm: n must be >= 1");
    solve.validate();
    Rng rng(seed, 3);
    Tensor z0 = sample(task.source, n, rng.raw());
    const int D = task.d_in;

    CfmGenerateResult out;
    out.samples = Tensor({n, D});
    out.n_evals.resize(static_cast<size_t>(n));
    OdeField field = [&](const OdeState& y, double t, OdeState& dydt) {
        vector_field_eval(net, y, t, dydt);
    };
    for (int i = 0; i < n; ++i) {
        OdeState y0(static_cast<size_t>(D));
        for (int c = 0; c < D; ++c) y0[static_cast<size_t>(c)] = z0[static_cast<int64_t>(i) * D + c];
        OdeResult r = integrate(field, y0, 0.0, 1.0, solve);
        out.n_evals[static_cast<size_t>(i)] = r.n_evals;
        if (r.status != OdeStatus::Ok) ++out.n_failures;
        for (int c = 0; c < D; ++c) out.samples[static_cast<int64_t>(i) * D + c] = static_cast<float>(r.y[static_cast<size_t>(c)]);
    }
    return out;
}

}  // namespace vflow
