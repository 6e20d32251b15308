#pragma once

#include <cmath>
#include <string>

#include "vflow/autodiff.hpp"
#include "vflow/params.hpp"
#include "vflow/rng.hpp"
#include "vflow/tensor.hpp"

namespace vflow {

// Gaussian posterior over the latent, one (mu, sigma) pair per position.
struct PosteriorParams {
    Tensor mu;
    Tensor sigma;

    void validate() const {
        if (!mu.same_shape(sigma)) {
            throw ShapeError("posterior mu " + shape_str(mu.shape()) + " and sigma " +
                             shape_str(sigma.shape()) + " differ");
        }
        for (int64_t i = 0; i < sigma.numel(); ++i) {
            if (!(sigma[i] > 0.f)) throw DomainError("posterior sigma must be strictly positive");
        }
        if (!mu.all_finite() || !sigma.all_finite()) {
            throw NumericError("posterior parameters must be finite");
        }
    }
};

struct VaeConfig {
    int d_latent = 16;
    int d_hidden = 32;
    float beta = 1e-3f;

    void validate() const {
        if (d_latent <= 0 || d_hidden <= 0) throw ConfigError("vae: dims must be positive");
        if (d_latent > d_hidden) {
            throw ConfigError("vae: d_latent " + std::to_string(d_latent) + " exceeds d_hidden " +
                              std::to_string(d_hidden));
        }
        if (beta < 0.f) throw ConfigError("vae: beta must be non-negative");
    }
};

// Two-layer GELU MLP heads. The posterior heads (mu, lv) read the hidden
// state; training and inference both sample them (inference scales the
// variance by tau). The decoder maps the hidden state plus the latent draw
// to the next-state target space. sigma is exp(0.5 * logvar), positive for
// any real log-variance.
struct VaeHead {
    VaeConfig config;
    int d_model = 0;
    int d_out = 0;

    void init_params(ParamSet& params, Rng& rng) const {
        config.validate();
        if (d_model <= 0 || d_out <= 0) throw ConfigError("vae: d_model and d_out must be positive");
        const float w_std = 0.02f;
        auto lin = [&](const std::string& name, int in, int out) {
            params.add("vae." + name + ".w", rng.normal_tensor({in, out}, w_std));
            params.add("vae." + name + ".b", Tensor({out}));
        };
        lin("mu1", d_model, config.d_hidden);
        lin("mu2", config.d_hidden, config.d_latent);
        lin("lv1", d_model, config.d_hidden);
        lin("lv2", config.d_hidden, config.d_latent);
        lin("dec1", d_model + config.d_latent, config.d_hidden);
        lin("dec2", config.d_hidden, d_out);
    }
};

struct EncodedPosterior {
    Var mu = -1;
    Var logvar = -1;
};

namespace detail {
template <typename S>
Var mlp2(TapeT<S>& tape, const BoundParams<S>& w, const std::string& base, Var x) {
    Var h = tape.gelu(tape.linear(x, w["vae." + base + "1.w"], w["vae." + base + "1.b"]));
    return tape.linear(h, w["vae." + base + "2.w"], w["vae." + base + "2.b"]);
}
}  // namespace detail

// hidden [n, d_model] -> posterior (mu, logvar), each [n, d_latent].
template <typename S>
EncodedPosterior vae_encode(TapeT<S>& tape, const BoundParams<S>& w, Var hidden) {
    if (!tape.value(hidden).all_finite()) throw NumericError("vae_encode: non-finite hidden state");
    EncodedPosterior p;
    p.mu = detail::mlp2(tape, w, "mu", hidden);
    p.logvar = detail::mlp2(tape, w, "lv", hidden);
    return p;
}


// Reparameterised draw z = mu + sqrt(tau) * sigma * noise. tau = 0 returns
// mu exactly (no noise path is recorded at all).
template <typename S>
Var vae_sample(TapeT<S>& tape, const EncodedPosterior& p, double tau, Var noise) {
    if (tau < 0.0) throw ContractError("vae_sample: temperature must be >= 0, got " + std::to_string(tau));
    if (tau == 0.0) return p.mu;
    Var sigma = tape.exp(tape.scalar_mul(p.logvar, S(0.5)));
    return tape.add(p.mu, tape.scalar_mul(tape.mul(sigma, noise), S(std::sqrt(tau))));
}

// (hidden, z) -> next-state prediction [n, d_out]. The hidden state carries
// the deterministic continuation; the latent carries what the context alone
// cannot determine.
template <typename S>
Var vae_decode(TapeT<S>& tape, const BoundParams<S>& w, Var hidden, Var z) {
    return detail::mlp2(tape, w, "dec", tape.concat({hidden, z}, 1));
}

// Per-position KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1
// - log sigma^2); with the log-variance parameterisation sigma^2 = exp(lv).
template <typename S>
Var vae_kl_per_position(TapeT<S>& tape, const EncodedPosterior& p) {
    Var var = tape.exp(p.logvar);
    Var terms = tape.sub(tape.add(tape.mul(p.mu, p.mu), var), tape.scalar_add(p.logvar, S(1)));
    return tape.scalar_mul(tape.sum_last(terms), S(0.5));
}

// ---- plain-tensor contract forms ----

inline PosteriorParams posterior_from(const Tensor& mu, const Tensor& logvar) {
    PosteriorParams p;
    p.mu = mu;
    p.sigma = Tensor(logvar.shape());
    for (int64_t i = 0; i < logvar.numel(); ++i) p.sigma[i] = std::exp(0.5f * logvar[i]);
    p.validate();
    return p;
}

inline Tensor sample_latent(const PosteriorParams& p, double tau, const Tensor& noise) {
    if (tau < 0.0) throw ContractError("sample_latent: temperature must be >= 0");
    if (!p.mu.same_shape(noise)) {
        throw ShapeError("sample_latent: noise " + shape_str(noise.shape()) + " vs mu " +
                         shape_str(p.mu.shape()));
    }
    Tensor z = p.mu;
    if (tau > 0.0) {
        const float s = static_cast<float>(std::sqrt(tau));
        for (int64_t i = 0; i < z.numel(); ++i) z[i] += s * p.sigma[i] * noise[i];
    }
    return z;
}

inline double kl_to_standard_normal(const PosteriorParams& p) {
    p.validate();
    double kl = 0.0;
    for (int64_t i = 0; i < p.mu.numel(); ++i) {
        const double mu = p.mu[i];
        const double s2 = static_cast<double>(p.sigma[i]) * p.sigma[i];
        kl += 0.5 * (mu * mu + s2 - 1.0 - std::log(s2));
    }
    return kl;
}

}  // namespace vflow
