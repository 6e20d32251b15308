#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "vflow/autodiff.hpp"
#include "vflow/rng.hpp"
#include "vflow/tensor.hpp"

namespace vflow {

// Central finite differences, (f(x + h e_i) - f(x - h e_i)) / 2h per
// coordinate. This is the gradient oracle: it never touches the tape.
template <typename S>
TensorT<S> finite_difference_gradient(const std::function<S(const TensorT<S>&)>& f,
                                      const TensorT<S>& x, S h) {
    if (!(h > S(0))) throw ContractError("finite_difference_gradient: h must be positive");
    TensorT<S> g(x.shape());
    TensorT<S> probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const S xi = x[i];
        probe[i] = xi + h;
        const S fp = f(probe);
        probe[i] = xi - h;
        const S fm = f(probe);
        probe[i] = xi;
        g[i] = (fp - fm) / (S(2) * h);
    }
    return g;
}

// max_i |a_i - b_i| / (|a_i| + |b_i| + floor); the floor keeps exact-zero
// coordinates from blowing up the ratio.
template <typename S>
double max_relative_error(const TensorT<S>& a, const TensorT<S>& b, double floor = 1e-6) {
    if (!a.same_shape(b)) {
        throw ShapeError("max_relative_error: shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double ai = static_cast<double>(a[i]);
        const double bi = static_cast<double>(b[i]);
        const double rel = std::abs(ai - bi) / (std::abs(ai) + std::abs(bi) + floor);
        worst = std::max(worst, rel);
    }
    return worst;
}

struct GradcheckCase {
    std::string primitive;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradcheckReport {
    std::vector<GradcheckCase> cases;
    double tolerance = 1e-3;

    bool all_pass() const {
        for (const auto& c : cases) {
            if (!c.pass) return false;
        }
        return !cases.empty();
    }
};

// Test-fixture hook: corrupts the reverse-mode gradient of one named
// primitive before comparison, to prove the checker notices.
struct GradcheckMutation {
    std::string primitive;
    std::function<void(TensorF64&)> apply;
};

namespace detail {

// Checks d(sum(w * op(x)))/dx against finite differences for one input
// tensor of a recorded computation. `build` maps a leaf Var to the op
// output Var on the given tape.
inline double check_one(const std::function<Var(TapeF64&, Var)>& build, const TensorF64& x,
                        Rng& rng, const GradcheckMutation* mut, const std::string& name) {
    TapeF64 tape;
    const Var in = tape.leaf(x);
    const Var out = build(tape, in);
    // random projection weights exercise every output coordinate
    TensorF64 w = rng.normal_tensor<double>(tape.value(out).shape());
    const Var wv = tape.constant(w);
    const Var loss = tape.sum_all(tape.mul(out, wv));
    tape.backward(loss);
    TensorF64 analytic = tape.grad(in);
    if (mut && mut->primitive == name) mut->apply(analytic);

    auto f = [&](const TensorF64& probe) {
        TapeF64 t2;
        const Var i2 = t2.leaf(probe);
        const Var o2 = build(t2, i2);
        double s = 0.0;
        const TensorF64& v = t2.value(o2);
        for (int64_t i = 0; i < v.numel(); ++i) s += v[i] * w[i];
        return s;
    };
    TensorF64 numeric = finite_difference_gradient<double>(f, x, 1e-3);
    return max_relative_error(analytic, numeric, 1e-6);
}

}  // namespace detail

// Finite-difference sweep over every primitive, `trials` random shapes and
// seeds each. Returns per-primitive worst relative error.
inline GradcheckReport gradcheck_primitives(int trials = 20, uint64_t seed = 7,
                                            const GradcheckMutation* mutation = nullptr) {
    GradcheckReport report;
    Rng shape_rng(seed, 999);

    struct Case {
        std::string name;
        std::function<double(Rng&, Rng&, const GradcheckMutation*)> run;
    };

    auto rand_dim = [](Rng& r) { return 1 + static_cast<int>(r.uniform_int(5)); };

    std::vector<Case> cases;

    cases.push_back({"matmul", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        const int a = rand_dim(sr), b = rand_dim(sr), c = rand_dim(sr);
        TensorF64 x = vr.normal_tensor<double>({a, b});
        TensorF64 y = vr.normal_tensor<double>({b, c});
        double e1 = detail::check_one(
            [&](TapeF64& t, Var v) { return t.matmul(v, t.constant(y)); }, x, vr, m, "matmul");
        double e2 = detail::check_one(
            [&](TapeF64& t, Var v) { return t.matmul(t.constant(x), v); }, y, vr, m, "matmul");
        return std::max(e1, e2);
    }});
    cases.push_back({"transpose", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), rand_dim(sr)});
        return detail::check_one([](TapeF64& t, Var v) { return t.transpose(v); }, x, vr, m,
                                 "transpose");
    }});
    for (const char* opname : {"add", "sub", "mul"}) {
        const std::string op = opname;
        cases.push_back({op, [&, op](Rng& sr, Rng& vr, const GradcheckMutation* m) {
            const int rows = rand_dim(sr), cols = rand_dim(sr);
            TensorF64 x = vr.normal_tensor<double>({rows, cols});
            TensorF64 y = vr.normal_tensor<double>({cols});  // broadcast operand
            auto apply = [op](TapeF64& t, Var a, Var b) {
                if (op == "add") return t.add(a, b);
                if (op == "sub") return t.sub(a, b);
                return t.mul(a, b);
            };
            double e1 = detail::check_one(
                [&](TapeF64& t, Var v) { return apply(t, v, t.constant(y)); }, x, vr, m, op);
            double e2 = detail::check_one(
                [&](TapeF64& t, Var v) { return apply(t, t.constant(x), v); }, y, vr, m, op);
            return std::max(e1, e2);
        }});
    }
    cases.push_back({"scalar_mul", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), rand_dim(sr)});
        const double c = vr.normal();
        return detail::check_one([&](TapeF64& t, Var v) { return t.scalar_mul(v, c); }, x, vr, m,
                                 "scalar_mul");
    }});
    cases.push_back({"exp", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), rand_dim(sr)});
        return detail::check_one([](TapeF64& t, Var v) { return t.exp(v); }, x, vr, m, "exp");
    }});
    cases.push_back({"log", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), rand_dim(sr)});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = 0.5 + std::abs(x[i]);
        return detail::check_one([](TapeF64& t, Var v) { return t.log(v); }, x, vr, m, "log");
    }});
    cases.push_back({"sqrt", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), rand_dim(sr)});
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = 0.5 + std::abs(x[i]);
        return detail::check_one([](TapeF64& t, Var v) { return t.sqrt(v); }, x, vr, m, "sqrt");
    }});
    cases.push_back({"gelu", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), rand_dim(sr)});
        return detail::check_one([](TapeF64& t, Var v) { return t.gelu(v); }, x, vr, m, "gelu");
    }});
    cases.push_back({"softmax", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), 2 + rand_dim(sr)});
        return detail::check_one([](TapeF64& t, Var v) { return t.softmax_last(v); }, x, vr, m,
                                 "softmax");
    }});
    cases.push_back({"layernorm", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), 2 + rand_dim(sr)});
        return detail::check_one([](TapeF64& t, Var v) { return t.layernorm_last(v, 1e-5); }, x, vr,
                                 m, "layernorm");
    }});
    cases.push_back({"sum_all", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), rand_dim(sr)});
        return detail::check_one([](TapeF64& t, Var v) { return t.sum_all(v); }, x, vr, m, "sum_all");
    }});
    cases.push_back({"mean_all", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), rand_dim(sr)});
        return detail::check_one([](TapeF64& t, Var v) { return t.mean_all(v); }, x, vr, m,
                                 "mean_all");
    }});
    cases.push_back({"sum_last", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), rand_dim(sr)});
        return detail::check_one([](TapeF64& t, Var v) { return t.sum_last(v); }, x, vr, m,
                                 "sum_last");
    }});
    cases.push_back({"concat", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        const int cols = rand_dim(sr);
        TensorF64 x = vr.normal_tensor<double>({rand_dim(sr), cols});
        TensorF64 y = vr.normal_tensor<double>({rand_dim(sr), cols});
        return detail::check_one(
            [&](TapeF64& t, Var v) { return t.concat({v, t.constant(y), v}, 0); }, x, vr, m,
            "concat");
    }});
    cases.push_back({"slice", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        const int rows = 2 + rand_dim(sr), cols = 2 + rand_dim(sr);
        TensorF64 x = vr.normal_tensor<double>({rows, cols});
        const int start = static_cast<int>(sr.uniform_int(cols - 1));
        const int len = 1 + static_cast<int>(sr.uniform_int(cols - start - 1));
        return detail::check_one([&](TapeF64& t, Var v) { return t.slice(v, 1, start, len); }, x, vr,
                                 m, "slice");
    }});
    cases.push_back({"reshape", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        const int rows = rand_dim(sr), cols = rand_dim(sr);
        TensorF64 x = vr.normal_tensor<double>({rows, cols});
        return detail::check_one(
            [&](TapeF64& t, Var v) { return t.reshape(v, {cols * rows}); }, x, vr, m, "reshape");
    }});
    cases.push_back({"take_rows", [&](Rng& sr, Rng& vr, const GradcheckMutation* m) {
        const int rows = 2 + rand_dim(sr);
        TensorF64 x = vr.normal_tensor<double>({rows, rand_dim(sr)});
        std::vector<int> idx;
        for (int i = 0; i < rows + 1; ++i) idx.push_back(static_cast<int>(sr.uniform_int(rows)));
        return detail::check_one([&](TapeF64& t, Var v) { return t.take_rows(v, idx); }, x, vr, m,
                                 "take_rows");
    }});

    for (auto& c : cases) {
        GradcheckCase result;
        result.primitive = c.name;
        for (int trial = 0; trial < trials; ++trial) {
            Rng vr(seed, 1000 + static_cast<uint64_t>(trial));
            result.max_rel_err = std::max(result.max_rel_err, c.run(shape_rng, vr, mutation));
        }
        result.pass = result.max_rel_err <= report.tolerance;
        report.cases.push_back(result);
    }
    return report;
}

}  // namespace vflow
