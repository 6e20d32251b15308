#pragma once

#include <algorithm>
#include <cmath>

#include "vflow/gradcheck.hpp"
#include "vflow/volterra_flow.hpp"

namespace vflow {

// Central finite differences on the full sequence loss, probing a few
// coordinates of every (small enough) parameter tensor in double precision.
inline double model_loss_fd_error(int max_params = 64, int probes_per_param = 3) {
    FlowTask task = task_registry("g->2g@2");
    task.n_time_points = 4;
    TrainConfig cfg;
    cfg.clm.d_model = 16;
    cfg.clm.n_layers = 2;
    cfg.clm.d_ff = 32;
    cfg.vae.d_latent = 8;
    cfg.vae.d_hidden = 16;
    cfg.beta = 1e-2f;
    FlowModel model = build_flow_model(task, cfg.clm, cfg.vae, cfg.beta, 11);
    ParamSetT<double> p64 = cast_params<double>(model.params);

    Rng data_rng(21);
    TrainingBatch batch = build_training_batch(task, model.vocab, data_rng);
    auto loss_at = [&](const ParamSetT<double>& params) {
        TapeF64 tape;
        BoundParams<double> w(tape, params);
        Rng noise_rng(31);
        return tape.value(sequence_loss(tape, model, w, batch, cfg.beta, noise_rng).loss).item();
    };

    TapeF64 tape;
    BoundParams<double> w(tape, p64);
    Rng noise_rng(31);
    SequenceLossVars vars = sequence_loss(tape, model, w, batch, cfg.beta, noise_rng);
    tape.backward(vars.loss);

    double worst = 0;
    int checked = 0;
    for (size_t pi = 0; pi < p64.size() && checked < max_params; ++pi) {
        ++checked;
        const TensorT<double>& analytic = tape.grad(w[p64.name(pi)]);
        Rng pick(100 + pi);
        for (int probe = 0; probe < probes_per_param; ++probe) {
            const int64_t idx = static_cast<int64_t>(pick.uniform_int(p64.tensor(pi).numel()));
            const double h = 1e-3;
            ParamSetT<double> local = p64;
            local.tensor(pi)[idx] += h;
            const double fp = loss_at(local);
            local.tensor(pi)[idx] -= 2 * h;
            const double fm = loss_at(local);
            const double fd = (fp - fm) / (2 * h);
            const double ad = analytic[idx];
            worst = std::max(worst, std::abs(fd - ad) / (std::abs(fd) + std::abs(ad) + 1e-6));
        }
    }
    return worst;
}

}  // namespace vflow
