#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vflow/autodiff.hpp"
#include "vflow/clm.hpp"
#include "vflow/params.hpp"
#include "vflow/tensor.hpp"

namespace vflow {

struct VocabError : std::runtime_error {
    explicit VocabError(const std::string& msg) : std::runtime_error("vocabulary error: " + msg) {}
};

// Evenly spaced time grid over [0, 1], endpoints included.
struct TimeGrid {
    std::vector<float> points;

    static TimeGrid uniform(int n) {
        if (n < 2) throw ContractError("time grid needs at least 2 points, got " + std::to_string(n));
        TimeGrid g;
        g.points.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) g.points[static_cast<size_t>(i)] = static_cast<float>(i) / static_cast<float>(n - 1);
        g.points.back() = 1.0f;
        return g;
    }

    int length() const { return static_cast<int>(points.size()); }
    float dt() const { return 1.0f / static_cast<float>(length() - 1); }
};

// M trajectories of N states each, plus the shared grid.
struct TrajectoryBatch {
    Tensor states;  // [M, N, D_in]
    TimeGrid grid;

    void validate() const {
        if (states.rank() != 3) {
            throw ShapeError("trajectory batch expects [M, N, D_in], got " + shape_str(states.shape()));
        }
        if (states.dim(1) != grid.length()) {
            throw ShapeError("trajectory batch has " + std::to_string(states.dim(1)) +
                             " time points but the grid has " + std::to_string(grid.length()));
        }
        if (!states.all_finite()) throw NumericError("trajectory batch contains non-finite states");
    }

    int trajectories() const { return states.dim(0); }
    int time_points() const { return states.dim(1); }
    int state_dim() const { return states.dim(2); }
};

// ---- token layout (pure bijections) ----
//
// Spatiotemporal order, one trajectory: [x_11 .. x_1K, ..., x_N1 .. x_NK]
// (time-major, space-minor). Multi-trajectory order: time outermost, then
// trajectory, then space: row ((i*M + m)*K + j) holds token (t_i, m, j).

inline Tensor flatten_spatiotemporal(const Tensor& tokens) {
    if (tokens.rank() == 4) {
        if (tokens.dim(0) != 1) {
            throw ContractError("flatten_spatiotemporal requires M == 1; use flatten_multi_trajectory");
        }
        return Tensor({tokens.dim(1) * tokens.dim(2), tokens.dim(3)}, tokens.data());
    }
    if (tokens.rank() != 3) {
        throw ShapeError("flatten_spatiotemporal expects [N, K, d], got " + shape_str(tokens.shape()));
    }
    return Tensor({tokens.dim(0) * tokens.dim(1), tokens.dim(2)}, tokens.data());
}

inline Tensor unflatten_spatiotemporal(const Tensor& seq, int N, int K) {
    if (seq.rank() != 2 || seq.dim(0) != N * K) {
        throw ShapeError("unflatten_spatiotemporal: sequence " + shape_str(seq.shape()) +
                         " does not hold " + std::to_string(N * K) + " tokens");
    }
    return Tensor({N, K, seq.dim(1)}, seq.data());
}

inline Tensor flatten_multi_trajectory(const Tensor& tokens) {
    if (tokens.rank() != 4) {
        throw ShapeError("flatten_multi_trajectory expects [M, N, K, d], got " + shape_str(tokens.shape()));
    }
    const int M = tokens.dim(0), N = tokens.dim(1), K = tokens.dim(2), d = tokens.dim(3);
    Tensor seq({M * N * K, d});
    for (int m = 0; m < M; ++m)
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < K; ++j) {
                const int64_t src = ((static_cast<int64_t>(m) * N + i) * K + j) * d;
                const int64_t dst = ((static_cast<int64_t>(i) * M + m) * static_cast<int64_t>(K) + j) * d;
                for (int c = 0; c < d; ++c) seq[dst + c] = tokens[src + c];
            }
    return seq;
}

inline Tensor unflatten_multi_trajectory(const Tensor& seq, int M, int N, int K) {
    if (seq.rank() != 2 || seq.dim(0) != M * N * K) {
        throw ShapeError("unflatten_multi_trajectory: sequence " + shape_str(seq.shape()) +
                         " does not hold " + std::to_string(M * N * K) + " tokens");
    }
    const int d = seq.dim(1);
    Tensor tokens({M, N, K, d});
    for (int i = 0; i < N; ++i)
        for (int m = 0; m < M; ++m)
            for (int j = 0; j < K; ++j) {
                const int64_t src = ((static_cast<int64_t>(i) * M + m) * static_cast<int64_t>(K) + j) * d;
                const int64_t dst = ((static_cast<int64_t>(m) * N + i) * K + j) * d;
                for (int c = 0; c < d; ++c) tokens[dst + c] = seq[src + c];
            }
    return tokens;
}

// ---- learned spatial splitter ----
//
// One linear map D_in -> K * d_token; the K-way split is the row reshape of
// its output, so K = 1 reduces to a plain input projection.

struct SpatialSplitter {
    int d_in = 0;
    int k = 1;
    int d_token = 0;

    void validate() const {
        if (d_in <= 0 || k <= 0 || d_token <= 0) {
            throw ConfigError("spatial splitter dims must be positive (d_in=" + std::to_string(d_in) +
                              ", k=" + std::to_string(k) + ", d_token=" + std::to_string(d_token) + ")");
        }
    }

    static constexpr const char* kWeightName = "splitter.w";
    static constexpr const char* kBiasName = "splitter.b";

    void init_params(ParamSet& params, Rng& rng) const {
        validate();
        params.add(kWeightName, rng.normal_tensor({d_in, k * d_token}, 0.02));
        params.add(kBiasName, Tensor({k * d_token}));
    }
};

// states [n, D_in] -> token rows [n*K, d_token]; row (s*K + j) is spatial
// token j of state s.
template <typename S>
Var spatial_split(TapeT<S>& tape, const SpatialSplitter& sp, const BoundParams<S>& w, Var states) {
    const TensorT<S>& x = tape.value(states);
    if (x.rank() != 2 || x.dim(1) != sp.d_in) {
        throw ShapeError("spatial_split expects [n, " + std::to_string(sp.d_in) + "], got " +
                         shape_str(x.shape()));
    }
    Var proj = tape.linear(states, w[SpatialSplitter::kWeightName], w[SpatialSplitter::kBiasName]);
    return tape.reshape(proj, {x.dim(0) * sp.k, sp.d_token});
}

// ---- prompt vocabulary ----

struct PromptVocab {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kSep = 2;

    std::vector<std::string> words;  // id -> word, reserved entries first
    std::unordered_map<std::string, int> ids;

    static std::vector<std::string> split_words(const std::string& text) {
        std::istringstream is(text);
        std::vector<std::string> out;
        std::string w;
        while (is >> w) out.push_back(w);
        return out;
    }

    // Closed vocabulary: reserved tokens, then the sorted unique words of the
    // prompt template and every label.
    static PromptVocab from_labels(const std::vector<std::string>& labels) {
        std::set<std::string> unique{"generate", "class", ":"};
        for (const auto& label : labels) {
            for (const auto& w : split_words(label)) unique.insert(w);
        }
        PromptVocab v;
        v.words = {"<pad>", "<bos>", "<sep>"};
        for (const auto& w : unique) v.words.push_back(w);
        for (size_t i = 0; i < v.words.size(); ++i) v.ids[v.words[i]] = static_cast<int>(i);
        return v;
    }

    int size() const { return static_cast<int>(words.size()); }

    int id(const std::string& w) const {
        auto it = ids.find(w);
        if (it == ids.end()) throw VocabError("word not in vocabulary: \"" + w + "\"");
        return it->second;
    }

    std::string serialize() const {
        std::string out;
        for (const auto& w : words) {
            out += w;
            out += '\n';
        }
        return out;
    }

    static PromptVocab deserialize(const std::string& text) {
        PromptVocab v;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty()) v.words.push_back(line);
        }
        if (v.words.size() < 3 || v.words[0] != "<pad>" || v.words[1] != "<bos>" || v.words[2] != "<sep>") {
            throw VocabError("serialized vocabulary missing reserved entries");
        }
        for (size_t i = 0; i < v.words.size(); ++i) v.ids[v.words[i]] = static_cast<int>(i);
        return v;
    }
};

// "<bos> generate class {label} : <sep>"; an empty label yields [BOS, SEP].
inline std::vector<int> encode_prompt(const PromptVocab& vocab, const std::string& label) {
    std::vector<int> out{PromptVocab::kBos};
    if (!label.empty()) {
        out.push_back(vocab.id("generate"));
        out.push_back(vocab.id("class"));
        for (const auto& w : PromptVocab::split_words(label)) out.push_back(vocab.id(w));
        out.push_back(vocab.id(":"));
    }
    out.push_back(PromptVocab::kSep);
    return out;
}

// ---- model input assembly ----

struct AssembledInput {
    Var seq = -1;                // [P + N*M*K, d_model]
    std::vector<uint8_t> mask;   // true where the next state is supervised
    int prompt_len = 0;
};

// Prompt embeddings (token table lookup) followed by trajectory tokens.
// The mask is true exactly at the last spatial token of each (time, traj)
// group for times t_0 .. t_{N-2}: those positions predict the full state at
// the next time point. Prompt positions are never supervised.
template <typename S>
AssembledInput assemble_input(TapeT<S>& tape, std::optional<Var> tok_emb,
                              const std::vector<int>& prompt_ids, Var traj_tokens, int N, int M,
                              int K, int max_seq_len) {
    const TensorT<S>& tokens = tape.value(traj_tokens);
    const int L = N * M * K;
    if (tokens.rank() != 2 || tokens.dim(0) != L) {
        throw ShapeError("assemble_input: trajectory tokens " + shape_str(tokens.shape()) +
                         " do not hold " + std::to_string(L) + " rows");
    }
    const int P = static_cast<int>(prompt_ids.size());
    if (P > 0 && !tok_emb.has_value()) {
        throw ContractError("assemble_input: prompt ids given but no token embedding table");
    }
    if (P + L > max_seq_len) {
        throw SequenceLengthError("assembled sequence needs max_seq_len >= " + std::to_string(P + L) +
                                  " but the model allows " + std::to_string(max_seq_len));
    }

    AssembledInput out;
    out.prompt_len = P;
    if (P > 0) {
        Var prompt = tape.take_rows(*tok_emb, prompt_ids);
        out.seq = tape.concat({prompt, traj_tokens}, 0);
    } else {
        out.seq = traj_tokens;
    }
    out.mask.assign(static_cast<size_t>(P + L), 0);
    for (int i = 0; i + 1 < N; ++i)
        for (int m = 0; m < M; ++m) {
            const int pos = P + (i * M + m) * K + (K - 1);
            out.mask[static_cast<size_t>(pos)] = 1;
        }
    return out;
}

// Supervised readout positions in mask order.
inline std::vector<int> mask_positions(const std::vector<uint8_t>& mask) {
    std::vector<int> idx;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) idx.push_back(static_cast<int>(i));
    }
    return idx;
}

}  // namespace vflow
