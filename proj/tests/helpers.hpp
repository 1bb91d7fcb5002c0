#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <doctest.h>

#include "pdreg/tape.hpp"
#include "pdreg/volume.hpp"

namespace pdtest {

inline pdreg::Volume random_volume(const std::array<int, 3>& dims, int channels,
                                   std::mt19937_64& rng, double lo = 0.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    pdreg::Volume v(dims, channels);
    for (double& x : v.data)
        x = dist(rng);
    return v;
}

inline pdreg::ad::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng,
                                       double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    pdreg::ad::Tensor t = pdreg::ad::Tensor::zeros(std::move(shape));
    for (double& x : t.data)
        x = dist(rng);
    return t;
}

// keeps elements away from kinks at zero (relu-style ops)
inline void shift_from_zero(pdreg::ad::Tensor& t, double margin = 0.05)
{
    for (double& x : t.data)
        x += x >= 0.0 ? margin : -margin;
}

inline bool grad_close(double analytic, double fd, double tol)
{
    const double scale = std::max({std::abs(analytic), std::abs(fd), 1e-4});
    return std::abs(analytic - fd) <= tol * scale;
}

// Central finite differences against the tape gradient. `build` must record
// a scalar loss from the given leaves; it is re-invoked on perturbed copies
// of the inputs, so it must not capture tape state.
using LossBuilder =
    std::function<pdreg::ad::NodeId(pdreg::ad::Tape&, const std::vector<pdreg::ad::NodeId>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<pdreg::ad::Tensor>& inputs)
{
    pdreg::ad::Tape tape;
    std::vector<pdreg::ad::NodeId> ids;
    ids.reserve(inputs.size());
    for (const auto& t : inputs)
        ids.push_back(tape.leaf(t, false));
    return tape.value(build(tape, ids)).value();
}

inline void check_gradients(const LossBuilder& build, std::vector<pdreg::ad::Tensor> inputs,
                            double tol = 1e-4, double h = 1e-5)
{
    pdreg::ad::Tape tape;
    std::vector<pdreg::ad::NodeId> ids;
    for (const auto& t : inputs)
        ids.push_back(tape.leaf(t, true));
    const pdreg::ad::NodeId loss = build(tape, ids);
    tape.backward(loss);
    std::vector<pdreg::ad::Tensor> analytic;
    for (auto id : ids)
        analytic.push_back(tape.grad(id));

    for (std::size_t i = 0; i < inputs.size(); ++i)
        for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
            const double orig = inputs[i].data[j];
            inputs[i].data[j] = orig + h;
            const double fp = eval_loss(build, inputs);
            inputs[i].data[j] = orig - h;
            const double fm = eval_loss(build, inputs);
            inputs[i].data[j] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[i].data[j];
            if (!grad_close(an, fd, tol)) {
                CAPTURE(i);
                CAPTURE(j);
                CAPTURE(an);
                CAPTURE(fd);
                REQUIRE(grad_close(an, fd, tol));
            }
        }
}

} // namespace pdtest
