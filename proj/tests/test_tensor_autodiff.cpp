#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vflow/adam.hpp"
#include "vflow/autodiff.hpp"
#include "vflow/gradcheck.hpp"
#include "vflow/rng.hpp"
#include "vflow/tensor.hpp"

using namespace vflow;

TEST_CASE("tensor construction and invariants") {
    Tensor t({2, 3});
    REQUIRE(t.numel() == 6);
    REQUIRE(t.rank() == 2);
    REQUIRE_THROWS_AS(Tensor({2, 0}), ShapeError);
    REQUIRE_THROWS_AS(Tensor({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
    REQUIRE(Tensor::scalar(3.f).item() == 3.f);
}

TEST_CASE("matmul identity") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    Var b = tape.leaf(Tensor({2, 1}, {3, 4}));
    Var c = tape.matmul(a, b);
    REQUIRE(tape.value(c).data() == std::vector<float>{3, 4});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 3}));
    Var b = tape.leaf(Tensor({2, 2}));
    REQUIRE_THROWS_WITH(tape.matmul(a, b),
                        Catch::Matchers::ContainsSubstring("[2, 3]") &&
                            Catch::Matchers::ContainsSubstring("[2, 2]"));
}

TEST_CASE("softmax symmetry") {
    Tape tape;
    Var x = tape.leaf(Tensor({2}, {0, 0}));
    const Tensor& y = tape.value(tape.softmax_last(x));
    REQUIRE(y[0] == Catch::Approx(0.5));
    REQUIRE(y[1] == Catch::Approx(0.5));
}

TEST_CASE("layernorm hand-computed two-element row") {
    // (x - mean)/sqrt(var + eps) with mean 3, var 1
    Tape tape;
    Var x = tape.leaf(Tensor({2}, {2, 4}));
    const Tensor& y = tape.value(tape.layernorm_last(x, 1e-5f));
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    REQUIRE(y[0] == Catch::Approx(-expected).epsilon(1e-6));
    REQUIRE(y[1] == Catch::Approx(expected).epsilon(1e-6));
}

TEST_CASE("log and sqrt domain errors") {
    Tape tape;
    Var x = tape.leaf(Tensor({2}, {1.f, -1.f}));
    REQUIRE_THROWS_AS(tape.log(x), DomainError);
    REQUIRE_THROWS_AS(tape.sqrt(x), DomainError);
    Var zero = tape.leaf(Tensor({1}, {0.f}));
    REQUIRE_THROWS_AS(tape.log(zero), DomainError);
}

TEST_CASE("backward on sum of squares") {
    Tape tape;
    Var x = tape.leaf(Tensor({3}, {1, 2, 3}));
    Var loss = tape.sum_all(tape.mul(x, x));
    tape.backward(loss);
    REQUIRE(tape.grad(x).data() == std::vector<float>{2, 4, 6});
}

TEST_CASE("backward requires scalar loss") {
    Tape tape;
    Var x = tape.leaf(Tensor({3}, {1, 2, 3}));
    Var y = tape.mul(x, x);
    REQUIRE_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("constant loss gives zero gradients") {
    Tape tape;
    Var x = tape.leaf(Tensor({3}, {1, 2, 3}));
    Var c = tape.constant(Tensor::scalar(5.f));
    Var loss = tape.scalar_mul(c, 2.f);
    tape.backward(loss);
    for (int64_t i = 0; i < 3; ++i) REQUIRE(tape.grad(x)[i] == 0.f);
}

TEST_CASE("matmul chain of depth 3 matches finite differences") {
    Rng rng(42);
    TensorF64 a = rng.normal_tensor<double>({4, 4});
    TensorF64 b = rng.normal_tensor<double>({4, 4});
    TensorF64 c = rng.normal_tensor<double>({4, 4});

    TapeF64 tape;
    Var va = tape.leaf(a);
    Var chain = tape.matmul(tape.matmul(va, tape.constant(b)), tape.constant(c));
    Var loss = tape.sum_all(chain);
    tape.backward(loss);

    auto f = [&](const TensorF64& probe) {
        TapeF64 t2;
        Var v = t2.leaf(probe);
        return t2.value(t2.sum_all(t2.matmul(t2.matmul(v, t2.constant(b)), t2.constant(c)))).item();
    };
    TensorF64 fd = finite_difference_gradient<double>(f, a, 1e-3);
    REQUIRE(max_relative_error(tape.grad(va), fd) < 1e-3);
}

TEST_CASE("backward is linear over independent losses") {
    Rng rng(11);
    Tensor x0 = rng.normal_tensor({3, 3});

    auto grad_of = [&](bool first, bool second) {
        Tape t;
        Var x = t.leaf(x0);
        Var l1 = t.sum_all(t.mul(x, x));
        Var l2 = t.sum_all(t.gelu(x));
        Var loss = first && second ? t.add(l1, l2) : (first ? l1 : l2);
        t.backward(loss);
        return t.grad(x);
    };
    Tensor g1 = grad_of(true, false);
    Tensor g2 = grad_of(false, true);
    Tensor g12 = grad_of(true, true);
    for (int64_t i = 0; i < g12.numel(); ++i) {
        REQUIRE(g12[i] == Catch::Approx(g1[i] + g2[i]).margin(1e-6));
    }
}

TEST_CASE("forward evaluation is deterministic") {
    auto run = [] {
        Rng rng(123);
        Tape t;
        Var x = t.leaf(rng.normal_tensor({8, 8}));
        Var y = t.softmax_last(t.gelu(t.matmul(x, x)));
        return t.value(y).data();
    };
    REQUIRE(run() == run());
}

TEST_CASE("broadcast add and mul over leading axis") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    Var b = tape.leaf(Tensor({3}, {10, 20, 30}));
    REQUIRE(tape.value(tape.add(a, b)).data() == std::vector<float>{11, 22, 33, 14, 25, 36});

    Var loss = tape.sum_all(tape.mul(a, b));
    tape.backward(loss);
    // d/db sums the broadcast axis: [1+4, 2+5, 3+6]
    REQUIRE(tape.grad(b).data() == std::vector<float>{5, 7, 9});

    Var bad = tape.leaf(Tensor({2}, {1, 1}));
    REQUIRE_THROWS_AS(tape.add(a, bad), ShapeError);
}

TEST_CASE("slice concat reshape take_rows round trip") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8}));
    Var left = tape.slice(a, 1, 0, 2);
    Var right = tape.slice(a, 1, 2, 2);
    Var back = tape.concat({left, right}, 1);
    REQUIRE(tape.value(back).data() == tape.value(a).data());

    Var rows = tape.take_rows(a, {1, 0, 1});
    REQUIRE(tape.value(rows).shape() == std::vector<int>{3, 4});
    REQUIRE(tape.value(rows)[0] == 5.f);

    Var flat = tape.reshape(a, {8});
    REQUIRE(tape.value(flat).shape() == std::vector<int>{8});
    REQUIRE_THROWS_AS(tape.reshape(a, {3, 3}), ShapeError);
    REQUIRE_THROWS_AS(tape.slice(a, 1, 3, 2), ShapeError);
    REQUIRE_THROWS_AS(tape.take_rows(a, {2}), ShapeError);
}

TEST_CASE("finite difference oracle on simple functions") {
    auto sumsq = [](const TensorF64& x) {
        double s = 0;
        for (int64_t i = 0; i < x.numel(); ++i) s += x[i] * x[i];
        return s;
    };
    TensorF64 g = finite_difference_gradient<double>(sumsq, TensorF64({1}, {3.0}), 1e-3);
    REQUIRE(g[0] == Catch::Approx(6.0).epsilon(1e-6));

    auto expf = [](const TensorF64& x) { return std::exp(x[0]); };
    g = finite_difference_gradient<double>(expf, TensorF64({1}, {0.0}), 1e-3);
    REQUIRE(g[0] == Catch::Approx(1.0).epsilon(1e-6));

    REQUIRE_THROWS_AS(finite_difference_gradient<double>(expf, TensorF64({1}, {0.0}), 0.0),
                      ContractError);
}

TEST_CASE("two layer net gradient agrees with finite differences") {
    Rng rng(5);
    TensorF64 w1 = rng.normal_tensor<double>({4, 8}, 0.5);
    TensorF64 b1 = rng.normal_tensor<double>({8}, 0.1);
    TensorF64 w2 = rng.normal_tensor<double>({8, 1}, 0.5);
    TensorF64 x = rng.normal_tensor<double>({2, 4});

    auto build = [&](TapeF64& t, Var win) {
        Var h = t.gelu(t.add(t.matmul(t.constant(x), win), t.constant(b1)));
        return t.sum_all(t.matmul(h, t.constant(w2)));
    };
    TapeF64 tape;
    Var w = tape.leaf(w1);
    tape.backward(build(tape, w));

    auto f = [&](const TensorF64& probe) {
        TapeF64 t2;
        Var v = t2.leaf(probe);
        return t2.value(build(t2, v)).item();
    };
    TensorF64 fd = finite_difference_gradient<double>(f, w1, 1e-3);
    REQUIRE(max_relative_error(tape.grad(w), fd) < 1e-3);
}

TEST_CASE("gradcheck sweep covers every primitive within tolerance") {
    GradcheckReport report = gradcheck_primitives(20, 7);
    REQUIRE(report.all_pass());
    for (const auto& c : report.cases) {
        INFO(c.primitive << " max rel err " << c.max_rel_err);
        REQUIRE(c.max_rel_err <= 1e-3);
    }
}

TEST_CASE("gradcheck flags an injected sign flip and names the primitive") {
    GradcheckMutation mut;
    mut.primitive = "gelu";
    mut.apply = [](TensorF64& g) {
        for (int64_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
    };
    GradcheckReport report = gradcheck_primitives(3, 7, &mut);
    REQUIRE_FALSE(report.all_pass());
    for (const auto& c : report.cases) {
        if (c.primitive == "gelu") {
            REQUIRE_FALSE(c.pass);
        } else {
            REQUIRE(c.pass);
        }
    }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    ParamSet params;
    params.add("w", Tensor({2}, {1.f, 2.f}));
    AdamState opt(0.1);
    opt.step(params, {Tensor({2})});
    REQUIRE(params.get("w").data() == std::vector<float>{1.f, 2.f});
    REQUIRE(opt.step_count() == 1);
}

TEST_CASE("adam first step moves a scalar by about lr") {
    ParamSet params;
    params.add("w", Tensor({1}, {0.f}));
    AdamState opt(0.1);
    opt.step(params, {Tensor({1}, {1.f})});
    // bias correction makes the t=1 update magnitude ~ lr
    REQUIRE(params.get("w")[0] == Catch::Approx(-0.1).epsilon(1e-4));
}

TEST_CASE("adam identical params and grads update identically") {
    ParamSet params;
    params.add("a", Tensor({3}, {0.5f, -1.f, 2.f}));
    params.add("b", Tensor({3}, {0.5f, -1.f, 2.f}));
    AdamState opt(0.01);
    Tensor g({3}, {0.3f, -0.2f, 0.9f});
    opt.step(params, {g, g});
    opt.step(params, {g, g});
    REQUIRE(params.get("a").data() == params.get("b").data());
}

TEST_CASE("adam refuses non-finite gradients and names the parameter") {
    ParamSet params;
    params.add("w", Tensor({1}, {0.f}));
    params.add("bad_param", Tensor({1}, {0.f}));
    AdamState opt(0.1);
    Tensor nan_grad({1}, {std::nanf("")});
    REQUIRE_THROWS_WITH(opt.step(params, {Tensor({1}), nan_grad}),
                        Catch::Matchers::ContainsSubstring("bad_param"));
    // refused update leaves parameters untouched
    REQUIRE(params.get("w")[0] == 0.f);
}
