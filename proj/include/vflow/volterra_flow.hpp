#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vflow/adam.hpp"
#include "vflow/autodiff.hpp"
#include "vflow/clm.hpp"
#include "vflow/data_synth.hpp"
#include "vflow/params.hpp"
#include "vflow/rng.hpp"
#include "vflow/tokenization.hpp"
#include "vflow/train_log.hpp"
#include "vflow/vae_head.hpp"

namespace vflow {

struct GenerationError : std::runtime_error {
    explicit GenerationError(const std::string& msg)
        : std::runtime_error("generation error: " + msg) {}
};

// Straight-line conditional path z(t) = (1 - t) z0 + t z1; endpoints exact.
inline Tensor ot_conditional_path(const Tensor& z0, const Tensor& z1, float t) {
    if (!z0.same_shape(z1)) {
        throw ShapeError("ot path endpoints differ: " + shape_str(z0.shape()) + " vs " +
                         shape_str(z1.shape()));
    }
    if (!(t >= 0.f && t <= 1.f)) {
        throw ContractError("ot path time must lie in [0, 1], got " + std::to_string(t));
    }
    if (t == 0.f) return z0;
    if (t == 1.f) return z1;
    Tensor z(z0.shape());
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = (1.f - t) * z0[i] + t * z1[i];
    return z;
}

// Mean over masked positions of the squared Euclidean distance between
// predicted and target next states (sum over state dimensions, mean over
// positions). pred/target rows align with the mask entries.
inline double cvfm_loss(const Tensor& pred, const Tensor& target, const std::vector<uint8_t>& mask) {
    if (!pred.same_shape(target) || pred.rank() != 2) {
        throw ShapeError("cvfm_loss: pred " + shape_str(pred.shape()) + " vs target " +
                         shape_str(target.shape()));
    }
    if (pred.dim(0) != static_cast<int>(mask.size())) {
        throw ShapeError("cvfm_loss: mask length " + std::to_string(mask.size()) +
                         " does not match " + std::to_string(pred.dim(0)) + " rows");
    }
    const int d = pred.dim(1);
    double total = 0;
    int count = 0;
    for (int i = 0; i < pred.dim(0); ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        double row = 0;
        for (int c = 0; c < d; ++c) {
            const double diff = static_cast<double>(pred[static_cast<int64_t>(i) * d + c]) -
                                target[static_cast<int64_t>(i) * d + c];
            row += diff * diff;
        }
        total += row;
        ++count;
    }
    if (count == 0) throw ContractError("cvfm_loss: empty mask");
    return total / count;
}

// Full objective: cvfm + beta * mean KL over the same masked positions.
inline double vcvfm_loss(const Tensor& pred, const Tensor& target, const std::vector<uint8_t>& mask,
                         const std::vector<PosteriorParams>& posteriors, double beta) {
    const double base = cvfm_loss(pred, target, mask);
    double kl = 0;
    int count = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        if (count >= static_cast<int>(posteriors.size())) {
            throw ContractError("vcvfm_loss: fewer posteriors than masked positions");
        }
        kl += kl_to_standard_normal(posteriors[static_cast<size_t>(count)]);
        ++count;
    }
    return base + beta * (kl / count);
}

// The joint trainable model: splitter -> transformer -> variational head.
struct FlowModel {
    ClmConfig clm;
    VaeConfig vae;
    SpatialSplitter splitter;
    int d_in = 2;
    int n_time_points = 10;
    int n_trajectories = 1;
    int n_space_tokens = 1;
    PromptVocab vocab;  // only populated for conditioned tasks
    ParamSet params;

    int64_t param_count() const { return params.total_elements(); }
};

struct TrainConfig {
    int steps = 3000;
    int batch_size = 32;
    double lr = 1e-3;
    float beta = 1e-3;  // KL weight
    uint64_t seed = 1;
    ClmConfig clm;
    VaeConfig vae;

    void validate() const {
        if (steps < 1 || batch_size < 1) throw ConfigError("train: steps and batch must be positive");
        if (!(lr > 0)) throw ConfigError("train: lr must be positive");
        if (beta < 0) throw ConfigError("train: beta must be non-negative");
    }
};

// Training draws are teacher-forced: every input token comes from the exact
// conditional path, never from a model output.
struct TrainingBatch {
    Tensor states;   // [N*M, D] path states, time-major, trajectory-minor
    Tensor targets;  // [(N-1)*M, D] the state one time step ahead
    std::vector<int> prompt_ids;
    std::string label;
    Tensor z0;  // [M, D]
    Tensor z1;  // [M, D]
};

inline int prompt_capacity(const FlowTask& task, const PromptVocab& vocab) {
    if (!task.conditioned()) return 0;
    size_t longest = 2;
    for (const auto& label : task.labels) {
        longest = std::max(longest, encode_prompt(vocab, label).size());
    }
    return static_cast<int>(longest);
}

inline TrainingBatch build_training_batch(const FlowTask& task, const PromptVocab& vocab,
                                          Rng& rng) {
    const int N = task.n_time_points, M = task.n_trajectories, D = task.d_in;
    TrainingBatch batch;

    std::optional<int> mode;
    if (task.conditioned()) {
        const int pick = static_cast<int>(rng.uniform_int(static_cast<int64_t>(task.labels.size())));
        batch.label = task.labels[static_cast<size_t>(pick)];
        batch.prompt_ids = encode_prompt(vocab, batch.label);
        mode = pick;
    }
    batch.z0 = sample(task.source, M, rng.raw());
    batch.z1 = sample(task.target, M, rng.raw(), mode);

    const TimeGrid grid = TimeGrid::uniform(N);
    batch.states = Tensor({N * M, D});
    for (int i = 0; i < N; ++i) {
        const float t = grid.points[static_cast<size_t>(i)];
        for (int m = 0; m < M; ++m) {
            for (int c = 0; c < D; ++c) {
                const float a = batch.z0[static_cast<int64_t>(m) * D + c];
                const float b = batch.z1[static_cast<int64_t>(m) * D + c];
                batch.states[(static_cast<int64_t>(i) * M + m) * D + c] =
                    t == 0.f ? a : (t == 1.f ? b : (1.f - t) * a + t * b);
            }
        }
    }
    batch.targets = Tensor({(N - 1) * M, D});
    for (int i = 0; i + 1 < N; ++i) {
        for (int m = 0; m < M; ++m) {
            for (int c = 0; c < D; ++c) {
                batch.targets[(static_cast<int64_t>(i) * M + m) * D + c] =
                    batch.states[((static_cast<int64_t>(i) + 1) * M + m) * D + c];
            }
        }
    }
    return batch;
}

struct SequenceLossVars {
    Var loss = -1;
    Var cvfm = -1;
    Var kl = -1;
};

// One teacher-forced sequence: split the path states into tokens, run the
// causal stack, read the hidden state at the last spatial token of each
// (time, trajectory) group, and decode the next state through the
// variational head. The latent draw comes from the target-aware recognition
// posterior (training temperature fixed at 1); the KL term pulls the
// context posterior -- the one inference samples -- onto it.
template <typename S>
SequenceLossVars sequence_loss(TapeT<S>& tape, const FlowModel& model, const BoundParams<S>& w,
                               const TrainingBatch& batch, float beta, Rng& noise_rng) {
    const int N = model.n_time_points, M = model.n_trajectories, K = model.n_space_tokens;

    Var states = tape.constant(batch.states.template cast<S>());
    Var tokens = spatial_split(tape, model.splitter, w, states);
    std::optional<Var> table;
    if (model.clm.vocab_size > 0) table = w["tok_emb"];
    AssembledInput in =
        assemble_input(tape, table, batch.prompt_ids, tokens, N, M, K, model.clm.max_seq_len);

    Var hidden = clm_forward(tape, model.clm, w, in.seq);
    Var read = tape.take_rows(hidden, mask_positions(in.mask));
    Var targets = tape.constant(batch.targets.template cast<S>());

    const int n_pred = (N - 1) * M;
    EncodedPosterior post = vae_encode(tape, w, read);
    Var z1 = vae_sample(tape, post, 1.0,
                        tape.constant(noise_rng.normal_tensor<S>({n_pred, model.vae.d_latent})));
    Var z2 = vae_sample(tape, post, 1.0,
                        tape.constant(noise_rng.normal_tensor<S>({n_pred, model.vae.d_latent})));
    Var pred1 = vae_decode(tape, w, read, z1);
    Var pred2 = vae_decode(tape, w, read, z2);

    auto norm_rows = [&](Var a, Var b) {
        Var d = tape.sub(a, b);
        return tape.sqrt(tape.scalar_add(tape.sum_last(tape.mul(d, d)), S(1e-12)));
    };
    // Energy score per position: the two-draw estimator of
    // E||X - y|| - 1/2 E||X - X'||. A strictly proper scoring rule, so the
    // sampled head is driven to the full conditional next-state law rather
    // than its mean.
    Var fit = tape.scalar_mul(tape.add(norm_rows(pred1, targets), norm_rows(pred2, targets)), S(0.5));
    Var spread = tape.scalar_mul(norm_rows(pred1, pred2), S(0.5));
    Var score = tape.mean_all(tape.sub(fit, spread));

    SequenceLossVars out;
    Var diff = tape.sub(pred1, targets);
    out.cvfm = tape.mean_all(tape.sum_last(tape.mul(diff, diff)));
    out.kl = tape.mean_all(vae_kl_per_position(tape, post));
    out.loss = tape.add(score, tape.scalar_mul(out.kl, S(beta)));
    return out;
}

struct TrainOutcome {
    FlowModel model;
    std::vector<StepLoss> losses;
    TrainStatus status = TrainStatus::Ok;
    int abort_step = -1;
};

struct TrainHooks {
    // called with every teacher-forced batch before the forward pass
    std::function<void(const TrainingBatch&)> on_batch;
};

inline FlowModel build_flow_model(const FlowTask& task, const ClmConfig& clm_in,
                                  const VaeConfig& vae_in, float beta, uint64_t seed) {
    FlowModel model;
    model.d_in = task.d_in;
    model.n_time_points = task.n_time_points;
    model.n_trajectories = task.n_trajectories;
    model.n_space_tokens = task.n_space_tokens;
    model.vae = vae_in;
    model.vae.beta = beta;

    model.clm = clm_in;
    if (task.conditioned()) {
        model.vocab = PromptVocab::from_labels(task.labels);
        model.clm.vocab_size = model.vocab.size();
    } else {
        model.clm.vocab_size = 0;
    }
    // position table sized exactly to the task sequence
    model.clm.max_seq_len =
        prompt_capacity(task, model.vocab) + task.n_time_points * task.n_trajectories * task.n_space_tokens;

    CausalModel clm = clm_init(model.clm, seed);
    model.params = std::move(clm.params);

    model.splitter.d_in = task.d_in;
    model.splitter.k = task.n_space_tokens;
    model.splitter.d_token = model.clm.d_model;
    Rng splitter_rng(seed, 18);
    model.splitter.init_params(model.params, splitter_rng);

    VaeHead head;
    head.config = model.vae;
    head.d_model = model.clm.d_model;
    head.d_out = task.d_in;
    Rng vae_rng(seed, 19);
    head.init_params(model.params, vae_rng);
    return model;
}

// Adam on the VCVFM objective over fresh online batches. A non-finite loss
// aborts and returns the parameters from the last good step.
inline TrainOutcome train(const FlowTask& task, const TrainConfig& config,
                          const TrainHooks& hooks = {}) {
    config.validate();
    task.validate();

    TrainOutcome out;
    out.model = build_flow_model(task, config.clm, config.vae, config.beta, config.seed);
    AdamState opt(config.lr);
    Rng data_rng(config.seed, 2);
    Rng noise_rng(config.seed, 3);

    ParamSet last_good = out.model.params;
    for (int step = 0; step < config.steps; ++step) {
        // cosine decay to a tenth of the base rate by the final step
        const double progress = static_cast<double>(step) / config.steps;
        opt.set_lr(config.lr * (0.1 + 0.45 * (1.0 + std::cos(M_PI * progress))));

        Tape tape;
        BoundParams<float> w(tape, out.model.params);

        Var loss = -1, cvfm = -1, kl = -1;
        for (int b = 0; b < config.batch_size; ++b) {
            TrainingBatch batch = build_training_batch(task, out.model.vocab, data_rng);
            if (hooks.on_batch) hooks.on_batch(batch);
            SequenceLossVars vars = sequence_loss(tape, out.model, w, batch, config.beta, noise_rng);
            loss = b == 0 ? vars.loss : tape.add(loss, vars.loss);
            cvfm = b == 0 ? vars.cvfm : tape.add(cvfm, vars.cvfm);
            kl = b == 0 ? vars.kl : tape.add(kl, vars.kl);
        }
        const float inv_b = 1.0f / static_cast<float>(config.batch_size);
        loss = tape.scalar_mul(loss, inv_b);

        const double loss_val = tape.value(loss).item();
        const double cvfm_val = tape.value(cvfm).item() * inv_b;
        const double kl_val = tape.value(kl).item() * inv_b;
        if (!std::isfinite(loss_val)) {
            out.status = TrainStatus::AbortedNonFinite;
            out.abort_step = step;
            out.model.params = std::move(last_good);
            return out;
        }

        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(out.model.params.size());
        for (size_t i = 0; i < out.model.params.size(); ++i) {
            grads.push_back(tape.grad(w[out.model.params.name(i)]));
        }
        last_good = out.model.params;
        opt.step(out.model.params, grads);
        out.losses.push_back({step, loss_val, cvfm_val, kl_val});
    }
    return out;
}

struct GenerateResult {
    Tensor samples;       // [n, D] states at t = 1
    Tensor trajectories;  // [n, N, D], trajectory 0 holds the drawn z0
    std::vector<std::string> labels;  // per sample (empty strings when unconditional)
};

struct GenerateHooks {
    // step, states fed to the model this step (time-major), states emitted
    std::function<void(int, const Tensor&, const Tensor&)> on_step;
};

// Iterative inference: starting from z0 draws (in groups of M trajectories),
// each step re-runs the causal stack on the full prefix, reads the last
// spatial token per trajectory, samples the head at temperature tau, and
// feeds the decoded states back as the next token group.
inline GenerateResult generate(const FlowModel& model, const FlowTask& task, int n_samples,
                               double tau, Rng& rng, const GenerateHooks& hooks = {}) {
    if (n_samples < 1) throw ContractError("generate: n_samples must be >= 1");
    if (tau < 0) throw ContractError("generate: tau must be >= 0");
    const int N = model.n_time_points, M = model.n_trajectories, K = model.n_space_tokens,
              D = model.d_in;
    const int groups = (n_samples + M - 1) / M;

    GenerateResult out;
    out.samples = Tensor({n_samples, D});
    out.trajectories = Tensor({n_samples, N, D});
    out.labels.assign(static_cast<size_t>(n_samples), "");

    for (int g = 0; g < groups; ++g) {
        std::vector<int> prompt_ids;
        std::string label;
        if (task.conditioned()) {
            const int pick = static_cast<int>(rng.uniform_int(static_cast<int64_t>(task.labels.size())));
            label = task.labels[static_cast<size_t>(pick)];
            prompt_ids = encode_prompt(model.vocab, label);
        }
        Tensor z0 = sample(task.source, M, rng.raw());

        // states[(i*M + m)*D + c], grown one time step per iteration
        Tensor states({N * M, D});
        for (int m = 0; m < M; ++m)
            for (int c = 0; c < D; ++c) states[static_cast<int64_t>(m) * D + c] = z0[static_cast<int64_t>(m) * D + c];

        for (int i = 0; i + 1 < N; ++i) {
            const int known = (i + 1) * M;
            Tensor prefix({known, D});
            for (int64_t j = 0; j < prefix.numel(); ++j) prefix[j] = states[j];

            Tape tape;
            BoundParams<float> w(tape, model.params);
            Var tokens = spatial_split(tape, model.splitter, w, tape.constant(prefix));
            Var seq = tokens;
            int P = 0;
            if (!prompt_ids.empty()) {
                Var prompt = tape.take_rows(w["tok_emb"], prompt_ids);
                seq = tape.concat({prompt, tokens}, 0);
                P = static_cast<int>(prompt_ids.size());
            }
            Var hidden = clm_forward(tape, model.clm, w, seq);
            std::vector<int> read_rows(static_cast<size_t>(M));
            for (int m = 0; m < M; ++m) read_rows[static_cast<size_t>(m)] = P + (i * M + m) * K + (K - 1);
            Var read = tape.take_rows(hidden, read_rows);

            EncodedPosterior post = vae_encode(tape, w, read);
            Var z = post.mu;
            if (tau > 0) {
                Tensor noise = rng.normal_tensor({M, model.vae.d_latent});
                z = vae_sample(tape, post, tau, tape.constant(std::move(noise)));
            }
            const Tensor& next = tape.value(vae_decode(tape, w, read, z));

            for (int m = 0; m < M; ++m)
                for (int c = 0; c < D; ++c) {
                    const float v = next[static_cast<int64_t>(m) * D + c];
                    if (!std::isfinite(v) || std::abs(v) > 1e6f) {
                        throw GenerationError("state diverged at step " + std::to_string(i + 1) +
                                              " of " + std::to_string(N - 1));
                    }
                    states[((static_cast<int64_t>(i) + 1) * M + m) * D + c] = v;
                }
            if (hooks.on_step) hooks.on_step(i, prefix, next);
        }

        for (int m = 0; m < M; ++m) {
            const int idx = g * M + m;
            if (idx >= n_samples) break;
            out.labels[static_cast<size_t>(idx)] = label;
            for (int i = 0; i < N; ++i)
                for (int c = 0; c < D; ++c) {
                    out.trajectories[(static_cast<int64_t>(idx) * N + i) * D + c] =
                        states[(static_cast<int64_t>(i) * M + m) * D + c];
                }
            for (int c = 0; c < D; ++c) {
                out.samples[static_cast<int64_t>(idx) * D + c] =
                    states[((static_cast<int64_t>(N) - 1) * M + m) * D + c];
            }
        }
    }
    return out;
}

}  // namespace vflow
