#pragma once

// Central finite-difference gradient checking shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "repast/autodiff.hpp"

namespace repast::testing {

inline Tensor<double> random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(s);
    for (double& v : t.data()) v = u(rng);
    return t;
}

/// Builds a scalar loss on a tape from leaf vars.
using LossFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Projects an arbitrary-shaped output to a scalar with fixed random weights,
/// so every output element contributes a distinct gradient direction.
inline Var<double> weighted_sum(const Var<double>& y, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    Tensor<double> w = random_tensor(y.shape(), rng);
    return sum(mul(y, y.tape->constant(std::move(w))));
}

struct GradCheckResult {
    double max_rel_err = 0;
    double max_abs_err = 0;
    std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
/// whose true gradient is (numerically) zero from dividing by roundoff.
inline GradCheckResult gradcheck(const LossFn& f, std::vector<Tensor<double>> inputs, double step = 1e-5,
                                 double floor = 1e-6) {
    std::vector<Tensor<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Var<double>> vars;
        for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
        Var<double> loss = f(tape, vars);
        tape.backward(loss);
        for (const auto& v : vars) analytic.push_back(tape.grad(v));
    }
    auto eval = [&](const std::vector<Tensor<double>>& in) {
        Tape<double> tape;
        tape.set_grad_enabled(false);
        std::vector<Var<double>> vars;
        for (const auto& t : in) vars.push_back(tape.leaf(t, false));
        return f(tape, vars).value().item();
    };
    GradCheckResult r;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k][i];
            inputs[k][i] = orig + step;
            const double up = eval(inputs);
            inputs[k][i] = orig - step;
            const double down = eval(inputs);
            inputs[k][i] = orig;
            const double num = (up - down) / (2 * step);
            const double a = analytic[k][i];
            const double abs_err = std::abs(a - num);
            r.max_abs_err = std::max(r.max_abs_err, abs_err);
            r.max_rel_err = std::max(r.max_rel_err, abs_err / std::max({std::abs(a), std::abs(num), floor}));
            ++r.checked;
        }
    }
    return r;
}

}  // namespace repast::testing
