// Tape gradients against central differences, shared by the unit and acceptance suites.
#pragma once

#include <functional>

#include "mesr/autodiff.hpp"
#include "oracles.hpp"

namespace gradcheck {

using mesr::ad::Id;
using T = mesr::Tensor<double>;
using Tp = mesr::ad::Tape<double>;
using Build = std::function<Id(Tp&, const std::vector<Id>&)>;

// Scalar root <R, x>.
inline Id dot_node(Tp& tape, Id x, const T& R)
{
    double s = 0.0;
    const T& X = tape.value(x);
    for (std::size_t i = 0; i < X.v.size(); ++i) s += R.v[i] * X.v[i];
    return tape.push(T(1, 1, 1, 1, s), {x}, [x, R](Tp& t, Id self) {
        const double g = t.grad(self).v[0];
        T& G = t.grad(x);
        for (std::size_t i = 0; i < G.v.size(); ++i) G.v[i] += g * R.v[i];
    });
}

inline double evaluate(const std::vector<T>& inputs, const Build& build, const T& R)
{
    Tp tape;
    std::vector<Id> ids;
    for (const auto& in : inputs) ids.push_back(tape.leaf(in));
    return tape.value(dot_node(tape, build(tape, ids), R)).v[0];
}

// Worst norm-relative error between the tape gradient and central differences over all inputs.
inline double grad_error(const std::vector<T>& inputs, const Build& build, mesr::Rng& rng, double h = 1e-5)
{
    Tp tape;
    std::vector<Id> ids;
    for (const auto& in : inputs) ids.push_back(tape.leaf(in, true));
    const Id out = build(tape, ids);
    const T R = oracle::random_tensor<double>(tape.value(out).n, tape.value(out).c, tape.value(out).h, tape.value(out).w, rng);
    tape.backward(dot_node(tape, out, R));
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& x) {
                std::vector<T> in = inputs;
                in[k].v = x;
                return evaluate(in, build, R);
            },
            inputs[k].v, h);
        const T& g = tape.grad(ids[k]);
        worst = std::max(worst, oracle::rel_error(g.v, fd));
    }
    return worst;
}

inline T away_from_zero(T t, double gap)
{
    for (auto& v : t.v)
        if (std::abs(v) < gap) v = v < 0 ? -gap : gap;
    return t;
}


} // namespace gradcheck
