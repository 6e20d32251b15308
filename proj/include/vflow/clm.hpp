#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vflow/autodiff.hpp"
#include "vflow/params.hpp"
#include "vflow/rng.hpp"
#include "vflow/tensor.hpp"

namespace vflow {

struct SequenceLengthError : std::runtime_error {
    explicit SequenceLengthError(const std::string& msg)
        : std::runtime_error("sequence length error: " + msg) {}
};

// Decoder-only transformer configuration. vocab_size = 0 disables the text
// prompt pathway entirely.
struct ClmConfig {
    int d_model = 32;
    int n_layers = 4;
    int n_heads = 1;
    int d_ff = 128;
    int max_seq_len = 256;
    int vocab_size = 0;
    float dropout = 0.0f;

    void validate() const {
        if (d_model <= 0) throw ConfigError("clm: d_model must be positive, got " + std::to_string(d_model));
        if (n_layers <= 0) throw ConfigError("clm: n_layers must be positive, got " + std::to_string(n_layers));
        if (n_heads <= 0) throw ConfigError("clm: n_heads must be positive, got " + std::to_string(n_heads));
        if (d_ff <= 0) throw ConfigError("clm: d_ff must be positive, got " + std::to_string(d_ff));
        if (max_seq_len <= 0) throw ConfigError("clm: max_seq_len must be positive");
        if (vocab_size < 0) throw ConfigError("clm: vocab_size must be non-negative");
        if (d_model % n_heads != 0) {
            throw ConfigError("clm: d_model " + std::to_string(d_model) +
                              " not divisible by n_heads " + std::to_string(n_heads));
        }
        if (!(dropout >= 0.0f && dropout < 1.0f)) {
            throw ConfigError("clm: dropout must lie in [0, 1), got " + std::to_string(dropout));
        }
    }

    int head_dim() const { return d_model / n_heads; }
};

struct CausalModel {
    ClmConfig config;
    ParamSet params;

    int64_t param_count() const { return params.total_elements(); }
};

namespace clm_names {
inline std::string layer(int i, const char* suffix) {
    return "layers." + std::to_string(i) + "." + suffix;
}
}  // namespace clm_names

// Weights ~ N(0, 0.02^2) for embeddings and linear maps, layer-norm gains 1,
// biases 0. Deterministic per seed.
inline CausalModel clm_init(const ClmConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(seed, 17);
    const int d = config.d_model;
    const float w_std = 0.02f;

    CausalModel model;
    model.config = config;
    ParamSet& p = model.params;
    if (config.vocab_size > 0) {
        p.add("tok_emb", rng.normal_tensor({config.vocab_size, d}, w_std));
    }
    p.add("pos_emb", rng.normal_tensor({config.max_seq_len, d}, w_std));
    for (int i = 0; i < config.n_layers; ++i) {
        using clm_names::layer;
        p.add(layer(i, "ln1.g"), Tensor::full({d}, 1.0f));
        p.add(layer(i, "ln1.b"), Tensor({d}));
        p.add(layer(i, "attn.wq"), rng.normal_tensor({d, d}, w_std));
        p.add(layer(i, "attn.bq"), Tensor({d}));
        p.add(layer(i, "attn.wk"), rng.normal_tensor({d, d}, w_std));
        p.add(layer(i, "attn.bk"), Tensor({d}));
        p.add(layer(i, "attn.wv"), rng.normal_tensor({d, d}, w_std));
        p.add(layer(i, "attn.bv"), Tensor({d}));
        p.add(layer(i, "attn.wo"), rng.normal_tensor({d, d}, w_std));
        p.add(layer(i, "attn.bo"), Tensor({d}));
        p.add(layer(i, "ln2.g"), Tensor::full({d}, 1.0f));
        p.add(layer(i, "ln2.b"), Tensor({d}));
        p.add(layer(i, "ff1.w"), rng.normal_tensor({d, config.d_ff}, w_std));
        p.add(layer(i, "ff1.b"), Tensor({config.d_ff}));
        p.add(layer(i, "ff2.w"), rng.normal_tensor({config.d_ff, d}, w_std));
        p.add(layer(i, "ff2.b"), Tensor({d}));
    }
    p.add("lnf.g", Tensor::full({d}, 1.0f));
    p.add("lnf.b", Tensor({d}));
    return model;
}

// Additive attention mask: entry (i, j) is 0 for j <= i and -1e9 for j > i.
// Softmax of a masked row underflows to exactly zero weight.
template <typename S = float>
TensorT<S> causal_mask(int T) {
    if (T < 1) throw ContractError("causal_mask: T must be >= 1");
    TensorT<S> m({T, T});
    for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) m[static_cast<int64_t>(i) * T + j] = S(-1e9);
    return m;
}

namespace detail {

// Inverted dropout as a recorded constant mask.
template <typename S>
Var apply_dropout(TapeT<S>& tape, Var x, float p, Rng* rng) {
    if (p <= 0.0f || rng == nullptr) return x;
    const TensorT<S>& v = tape.value(x);
    TensorT<S> mask(v.shape());
    const S keep = S(1) / S(1.0f - p);
    for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng->uniform() < p ? S(0) : keep;
    return tape.mul(x, tape.constant(std::move(mask)));
}

template <typename S>
Var affine_norm(TapeT<S>& tape, Var x, Var g, Var b) {
    return tape.add(tape.mul(tape.layernorm_last(x, S(1e-5)), g), b);
}

}  // namespace detail

// Pre-layer-norm transformer stack over a sequence of input embeddings
// [T, d_model]. Learned absolute positional embeddings are added inside.
// Hidden state i depends only on positions <= i.
template <typename S>
Var clm_forward(TapeT<S>& tape, const ClmConfig& config, const BoundParams<S>& w, Var embeddings,
                Rng* dropout_rng = nullptr) {
    const TensorT<S>& emb = tape.value(embeddings);
    if (emb.rank() != 2 || emb.dim(1) != config.d_model) {
        throw ShapeError("clm_forward: expected [T, " + std::to_string(config.d_model) +
                         "], got " + shape_str(emb.shape()));
    }
    const int T = emb.dim(0);
    if (T > config.max_seq_len) {
        throw SequenceLengthError("sequence of " + std::to_string(T) +
                                  " tokens exceeds max_seq_len " +
                                  std::to_string(config.max_seq_len));
    }
    const int d = config.d_model;
    const int H = config.n_heads;
    const int dh = config.head_dim();

    Var pos = tape.slice(w["pos_emb"], 0, 0, T);
    Var x = tape.add(embeddings, pos);
    x = detail::apply_dropout(tape, x, config.dropout, dropout_rng);

    const Var mask = tape.constant(causal_mask<S>(T));
    const S scale = S(1) / S(std::sqrt(static_cast<double>(dh)));

    for (int i = 0; i < config.n_layers; ++i) {
        using clm_names::layer;
        Var xn = detail::affine_norm(tape, x, w[layer(i, "ln1.g")], w[layer(i, "ln1.b")]);
        Var q = tape.linear(xn, w[layer(i, "attn.wq")], w[layer(i, "attn.bq")]);
        Var k = tape.linear(xn, w[layer(i, "attn.wk")], w[layer(i, "attn.bk")]);
        Var v = tape.linear(xn, w[layer(i, "attn.wv")], w[layer(i, "attn.bv")]);

        std::vector<Var> heads;
        heads.reserve(static_cast<size_t>(H));
        for (int h = 0; h < H; ++h) {
            Var qh = H == 1 ? q : tape.slice(q, 1, h * dh, dh);
            Var kh = H == 1 ? k : tape.slice(k, 1, h * dh, dh);
            Var vh = H == 1 ? v : tape.slice(v, 1, h * dh, dh);
            Var scores = tape.add(tape.scalar_mul(tape.matmul(qh, tape.transpose(kh)), scale), mask);
            heads.push_back(tape.matmul(tape.softmax_last(scores), vh));
        }
        Var attn = H == 1 ? heads[0] : tape.concat(heads, 1);
        attn = tape.linear(attn, w[layer(i, "attn.wo")], w[layer(i, "attn.bo")]);
        attn = detail::apply_dropout(tape, attn, config.dropout, dropout_rng);
        x = tape.add(x, attn);

        Var xn2 = detail::affine_norm(tape, x, w[layer(i, "ln2.g")], w[layer(i, "ln2.b")]);
        Var ff = tape.linear(tape.gelu(tape.linear(xn2, w[layer(i, "ff1.w")], w[layer(i, "ff1.b")])),
                             w[layer(i, "ff2.w")], w[layer(i, "ff2.b")]);
        ff = detail::apply_dropout(tape, ff, config.dropout, dropout_rng);
        x = tape.add(x, ff);
    }
    return detail::affine_norm(tape, x, w["lnf.g"], w["lnf.b"]);
}

}  // namespace vflow
