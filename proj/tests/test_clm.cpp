#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "vflow/clm.hpp"
#include "vflow/params.hpp"
#include "vflow/rng.hpp"

using namespace vflow;

namespace {

Tensor clm_hidden(const CausalModel& model, const Tensor& emb) {
    Tape tape;
    BoundParams<float> w(tape, model.params);
    Var out = clm_forward(tape, model.config, w, tape.constant(emb));
    return tape.value(out);
}

}  // namespace

TEST_CASE("init is deterministic per seed") {
    ClmConfig cfg;
    CausalModel a = clm_init(cfg, 9);
    CausalModel b = clm_init(cfg, 9);
    CausalModel c = clm_init(cfg, 10);
    REQUIRE(a.params.size() == b.params.size());
    bool identical = true, differs_from_c = false;
    for (size_t i = 0; i < a.params.size(); ++i) {
        identical = identical && a.params.tensor(i).data() == b.params.tensor(i).data();
        differs_from_c = differs_from_c || a.params.tensor(i).data() != c.params.tensor(i).data();
    }
    REQUIRE(identical);
    REQUIRE(differs_from_c);
}

TEST_CASE("parameter count matches closed-form shape arithmetic") {
    ClmConfig cfg;
    cfg.d_model = 32;
    cfg.n_heads = 1;
    cfg.n_layers = 4;
    cfg.d_ff = 128;
    cfg.max_seq_len = 100;
    cfg.vocab_size = 7;
    CausalModel m = clm_init(cfg, 1);

    const int64_t d = 32, ff = 128;
    const int64_t per_layer = (d + d)              // ln1
                              + 4 * (d * d + d)    // q k v o projections
                              + (d + d)            // ln2
                              + (d * ff + ff)      // ff1
                              + (ff * d + d);      // ff2
    const int64_t expected = 7 * d + 100 * d + 4 * per_layer + (d + d);
    REQUIRE(m.param_count() == expected);
}

TEST_CASE("config validation rejects bad fields") {
    ClmConfig cfg;
    cfg.n_heads = 3;
    cfg.d_model = 32;
    REQUIRE_THROWS_AS(clm_init(cfg, 0), ConfigError);
    REQUIRE_THROWS_WITH(clm_init(cfg, 0), Catch::Matchers::ContainsSubstring("divisible"));

    ClmConfig neg;
    neg.d_ff = 0;
    REQUIRE_THROWS_AS(clm_init(neg, 0), ConfigError);

    ClmConfig drop;
    drop.dropout = 1.0f;
    REQUIRE_THROWS_AS(clm_init(drop, 0), ConfigError);
}

TEST_CASE("causal mask values") {
    Tensor m1 = causal_mask(1);
    REQUIRE(m1.data() == std::vector<float>{0.f});

    Tensor m3 = causal_mask(3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const float v = m3[i * 3 + j];
            if (j <= i) {
                REQUIRE(v == 0.f);
            } else {
                REQUIRE(v == -1e9f);
            }
        }
    REQUIRE_THROWS_AS(causal_mask(0), ContractError);
}

TEST_CASE("masked softmax rows carry zero weight beyond the diagonal") {
    Tape tape;
    Rng rng(3);
    Tensor scores = rng.normal_tensor({4, 4});
    Var masked = tape.add(tape.constant(scores), tape.constant(causal_mask(4)));
    const Tensor& w = tape.value(tape.softmax_last(masked));
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) REQUIRE(w[i * 4 + j] < 1e-30f);
}

TEST_CASE("forward output is causal") {
    ClmConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 12;
    CausalModel model = clm_init(cfg, 21);

    Rng rng(5);
    Tensor emb = rng.normal_tensor({8, 16});
    Tensor base = clm_hidden(model, emb);

    const int j = 5;
    Tensor perturbed = emb;
    for (int c = 0; c < 16; ++c) perturbed[j * 16 + c] += 3.0f + c;
    Tensor out = clm_hidden(model, perturbed);

    // positions before j are bit-identical; masked attention contributes
    // exactly zero weight to the future
    for (int i = 0; i < j; ++i)
        for (int c = 0; c < 16; ++c) REQUIRE(out[i * 16 + c] == base[i * 16 + c]);
    bool later_changed = false;
    for (int i = j; i < 8; ++i)
        for (int c = 0; c < 16; ++c) later_changed = later_changed || out[i * 16 + c] != base[i * 16 + c];
    REQUIRE(later_changed);
}

TEST_CASE("single token equals the full stack with no cross terms") {
    ClmConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 8;
    CausalModel model = clm_init(cfg, 4);

    Rng rng(6);
    Tensor seq = rng.normal_tensor({3, 16});
    Tensor full = clm_hidden(model, seq);

    Tensor first({1, 16});
    for (int c = 0; c < 16; ++c) first[c] = seq[c];
    Tensor solo = clm_hidden(model, first);
    for (int c = 0; c < 16; ++c) REQUIRE(solo[c] == full[c]);
}

TEST_CASE("forward is deterministic") {
    ClmConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.d_ff = 32;
    cfg.max_seq_len = 8;
    CausalModel model = clm_init(cfg, 8);
    Rng rng(9);
    Tensor emb = rng.normal_tensor({4, 16});
    REQUIRE(clm_hidden(model, emb).data() == clm_hidden(model, emb).data());
}

TEST_CASE("sequence length overflow raises") {
    ClmConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.d_ff = 16;
    cfg.max_seq_len = 4;
    CausalModel model = clm_init(cfg, 0);
    Rng rng(1);
    Tensor emb = rng.normal_tensor({5, 8});
    Tape tape;
    BoundParams<float> w(tape, model.params);
    REQUIRE_THROWS_AS(clm_forward(tape, cfg, w, tape.constant(emb)), SequenceLengthError);
}

TEST_CASE("swapping two past tokens changes the output") {
    ClmConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 8;
    CausalModel model = clm_init(cfg, 30);
    Rng rng(31);
    Tensor emb = rng.normal_tensor({5, 16});

    Tensor swapped = emb;
    for (int c = 0; c < 16; ++c) std::swap(swapped[1 * 16 + c], swapped[3 * 16 + c]);
    Tensor a = clm_hidden(model, emb);
    Tensor b = clm_hidden(model, swapped);
    bool changed = false;
    for (int c = 0; c < 16; ++c) changed = changed || a[4 * 16 + c] != b[4 * 16 + c];
    REQUIRE(changed);
}

TEST_CASE("gradient at position i is exactly zero for later embeddings") {
    ClmConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 8;
    CausalModel model = clm_init(cfg, 13);
    Rng rng(14);
    Tensor emb = rng.normal_tensor({6, 16});

    Tape tape;
    BoundParams<float> w(tape, model.params);
    Var e = tape.leaf(emb);
    Var h = clm_forward(tape, cfg, w, e);
    // loss reads only position 2
    Var row = tape.take_rows(h, {2});
    tape.backward(tape.sum_all(tape.mul(row, row)));
    const Tensor& g = tape.grad(e);
    for (int i = 3; i < 6; ++i)
        for (int c = 0; c < 16; ++c) REQUIRE(g[i * 16 + c] == 0.0f);
    bool earlier_nonzero = false;
    for (int i = 0; i <= 2; ++i)
        for (int c = 0; c < 16; ++c) earlier_nonzero = earlier_nonzero || g[i * 16 + c] != 0.0f;
    REQUIRE(earlier_nonzero);
}

TEST_CASE("float64 oracle mode: causality holds exactly") {
    ClmConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.d_ff = 16;
    cfg.max_seq_len = 8;
    CausalModel model = clm_init(cfg, 77);
    ParamSetT<double> p64 = cast_params<double>(model.params);

    Rng rng(78);
    TensorF64 emb = rng.normal_tensor<double>({5, 8});
    auto run = [&](const TensorF64& e) {
        TapeF64 tape;
        BoundParams<double> w(tape, p64);
        return tape.value(clm_forward<double>(tape, cfg, w, tape.constant(e)));
    };
    TensorF64 base = run(emb);
    TensorF64 pert = emb;
    pert[4 * 8 + 3] += 11.0;
    TensorF64 out = run(pert);
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 8; ++c) REQUIRE(out[i * 8 + c] == base[i * 8 + c]);
}

TEST_CASE("checkpoint round-trips bit exactly") {
    ClmConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 16;
    cfg.vocab_size = 5;
    CausalModel model = clm_init(cfg, 55);

    const std::string path = std::filesystem::temp_directory_path() / "vflow_ckpt_test.vfc";
    save_checkpoint(path, model.params);
    ParamSet loaded = load_checkpoint(path);

    REQUIRE(loaded.size() == model.params.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        REQUIRE(loaded.name(i) == model.params.name(i));
        REQUIRE(loaded.tensor(i).shape() == model.params.tensor(i).shape());
        REQUIRE(std::memcmp(loaded.tensor(i).ptr(), model.params.tensor(i).ptr(),
                            sizeof(float) * static_cast<size_t>(loaded.tensor(i).numel())) == 0);
    }
    std::remove(path.c_str());
}

TEST_CASE("multi-head attention still causal and shape-correct") {
    ClmConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.n_layers = 2;
    cfg.d_ff = 32;
    cfg.max_seq_len = 8;
    CausalModel model = clm_init(cfg, 99);
    Rng rng(100);
    Tensor emb = rng.normal_tensor({6, 16});
    Tensor base = clm_hidden(model, emb);
    REQUIRE(base.shape() == std::vector<int>{6, 16});

    Tensor pert = emb;
    pert[5 * 16] += 2.f;
    Tensor out = clm_hidden(model, pert);
    for (int i = 0; i < 5; ++i)
        for (int c = 0; c < 16; ++c) REQUIRE(out[i * 16 + c] == base[i * 16 + c]);
}
