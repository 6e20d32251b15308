#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vflow/tensor.hpp"

namespace vflow {

using OdeState = std::vector<double>;
// dy/dt = f(y, t), written into the third argument.
using OdeField = std::function<void(const OdeState&, double, OdeState&)>;

enum class OdeMethod { Euler, Rk4, Dopri5 };

struct OdeSolveConfig {
    OdeMethod method = OdeMethod::Dopri5;
    int steps = 100;       // fixed-step methods
    double rtol = 1e-5;    // dopri5
    double atol = 1e-5;    // dopri5
    int max_evals = 100000;

    void validate() const {
        if (steps < 1) throw ConfigError("ode: steps must be >= 1");
        if (!(rtol > 0) || !(atol > 0)) throw ConfigError("ode: tolerances must be positive");
        if (max_evals < 1) throw ConfigError("ode: max_evals must be >= 1");
    }
};

inline OdeMethod ode_method_from_string(const std::string& s) {
    if (s == "euler") return OdeMethod::Euler;
    if (s == "rk4") return OdeMethod::Rk4;
    if (s == "dopri5") return OdeMethod::Dopri5;
    throw ConfigError("ode: unknown method \"" + s + "\" (euler, rk4, dopri5)");
}

enum class OdeStatus { Ok, MaxEvalsExceeded };

struct OdeResult {
    OdeState y;
    OdeStatus status = OdeStatus::Ok;
    int n_evals = 0;
    int n_accepted = 0;
    int n_rejected = 0;
};

namespace detail {

inline OdeResult integrate_fixed(const OdeField& f, OdeState y, double t0, double t1,
                                 const OdeSolveConfig& cfg, bool rk4) {
    OdeResult res;
    const int n = static_cast<int>(y.size());
    const double h = (t1 - t0) / cfg.steps;
    OdeState k1(y.size()), k2(y.size()), k3(y.size()), k4(y.size()), tmp(y.size());
    for (int s = 0; s < cfg.steps; ++s) {
        const double t = t0 + s * h;
        if (res.n_evals + (rk4 ? 4 : 1) > cfg.max_evals) {
            res.status = OdeStatus::MaxEvalsExceeded;
            res.y = std::move(y);
            return res;
        }
        f(y, t, k1);
        ++res.n_evals;
        if (!rk4) {
            for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] += h * k1[static_cast<size_t>(i)];
        } else {
            for (int i = 0; i < n; ++i) tmp[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] + 0.5 * h * k1[static_cast<size_t>(i)];
            f(tmp, t + 0.5 * h, k2);
            for (int i = 0; i < n; ++i) tmp[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] + 0.5 * h * k2[static_cast<size_t>(i)];
            f(tmp, t + 0.5 * h, k3);
            for (int i = 0; i < n; ++i) tmp[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] + h * k3[static_cast<size_t>(i)];
            f(tmp, t + h, k4);
            res.n_evals += 3;
            for (int i = 0; i < n; ++i) {
                y[static_cast<size_t>(i)] += h / 6.0 *
                                             (k1[static_cast<size_t>(i)] + 2 * k2[static_cast<size_t>(i)] +
                                              2 * k3[static_cast<size_t>(i)] + k4[static_cast<size_t>(i)]);
            }
        }
        ++res.n_accepted;
    }
    res.y = std::move(y);
    return res;
}

// Dormand-Prince 5(4) with FSAL and the standard PI step controller
// (safety 0.9, beta 0.04, step factor clamped to [0.2, 10]).
inline OdeResult integrate_dopri5(const OdeField& f, OdeState y, double t0, double t1,
                                  const OdeSolveConfig& cfg) {
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;

    OdeResult res;
    const int n = static_cast<int>(y.size());
    const double span = t1 - t0;
    double t = t0;
    double h = span / 100.0;
    const double hmax = span;

    OdeState k1(y.size()), k2(y.size()), k3(y.size()), k4(y.size()), k5(y.size()), k6(y.size()),
        k7(y.size()), ytmp(y.size()), ynew(y.size());

    f(y, t, k1);
    ++res.n_evals;
    double facold = 1e-4;
    bool last = false;

    while (!last) {
        if (t + h >= t1) {
            h = t1 - t;
            last = true;
        }
        if (res.n_evals + 6 > cfg.max_evals) {
            res.status = OdeStatus::MaxEvalsExceeded;
            res.y = std::move(y);
            return res;
        }
        auto stage = [&](OdeState& k, double c, auto&&... terms) {
            auto pairs = std::initializer_list<std::pair<double, const OdeState*>>{terms...};
            for (int i = 0; i < n; ++i) {
                double acc = y[static_cast<size_t>(i)];
                for (const auto& [coef, kv] : pairs) acc += h * coef * (*kv)[static_cast<size_t>(i)];
                ytmp[static_cast<size_t>(i)] = acc;
            }
            f(ytmp, t + c * h, k);
            ++res.n_evals;
        };
        stage(k2, c2, std::pair{a21, &k1});
        stage(k3, c3, std::pair{a31, &k1}, std::pair{a32, &k2});
        stage(k4, c4, std::pair{a41, &k1}, std::pair{a42, &k2}, std::pair{a43, &k3});
        stage(k5, c5, std::pair{a51, &k1}, std::pair{a52, &k2}, std::pair{a53, &k3},
              std::pair{a54, &k4});
        stage(k6, 1.0, std::pair{a61, &k1}, std::pair{a62, &k2}, std::pair{a63, &k3},
              std::pair{a64, &k4}, std::pair{a65, &k5});
        for (int i = 0; i < n; ++i) {
            ynew[static_cast<size_t>(i)] =
                y[static_cast<size_t>(i)] +
                h * (b1 * k1[static_cast<size_t>(i)] + b3 * k3[static_cast<size_t>(i)] +
                     b4 * k4[static_cast<size_t>(i)] + b5 * k5[static_cast<size_t>(i)] +
                     b6 * k6[static_cast<size_t>(i)]);
        }
        f(ynew, t + h, k7);  // FSAL stage
        ++res.n_evals;

        double err = 0;
        for (int i = 0; i < n; ++i) {
            const double ei = h * (e1 * k1[static_cast<size_t>(i)] + e3 * k3[static_cast<size_t>(i)] +
                                   e4 * k4[static_cast<size_t>(i)] + e5 * k5[static_cast<size_t>(i)] +
                                   e6 * k6[static_cast<size_t>(i)] + e7 * k7[static_cast<size_t>(i)]);
            const double sc = cfg.atol + cfg.rtol * std::max(std::abs(y[static_cast<size_t>(i)]),
                                                             std::abs(ynew[static_cast<size_t>(i)]));
            err += (ei / sc) * (ei / sc);
        }
        err = std::sqrt(err / n);

        static constexpr double safe = 0.9, beta = 0.04, expo1 = 0.2 - beta * 0.75;
        static constexpr double facmin = 0.2, facmax = 10.0;
        const double fac11 = std::pow(std::max(err, 1e-16), expo1);

        if (err <= 1.0) {
            facold = std::max(err, 1e-4);
            y.swap(ynew);
            k1.swap(k7);
            t += h;
            ++res.n_accepted;
            double fac = fac11 / std::pow(facold, beta);
            fac = std::max(1.0 / facmax, std::min(1.0 / facmin, fac / safe));
            h = std::min(h / fac, hmax);
        } else {
            ++res.n_rejected;
            h = h / std::min(1.0 / facmin, fac11 / safe);
            last = false;
        }
    }
    res.y = std::move(y);
    return res;
}

}  // namespace detail

// Integrate dy/dt = f(y, t) from t0 to t1. Exceeding max_evals is reported
// in the result status, not thrown: stiffness is a measurable outcome.
inline OdeResult integrate(const OdeField& f, const OdeState& y0, double t0, double t1,
                           const OdeSolveConfig& cfg) {
    cfg.validate();
    if (y0.empty()) throw ContractError("integrate: empty state");
    for (double v : y0) {
        if (!std::isfinite(v)) throw NumericError("integrate: non-finite initial state");
    }
    switch (cfg.method) {
        case OdeMethod::Euler:
            return detail::integrate_fixed(f, y0, t0, t1, cfg, false);
        case OdeMethod::Rk4:
            return detail::integrate_fixed(f, y0, t0, t1, cfg, true);
        case OdeMethod::Dopri5:
            return detail::integrate_dopri5(f, y0, t0, t1, cfg);
    }
    throw ContractError("integrate: unknown method");
}

}  // namespace vflow
