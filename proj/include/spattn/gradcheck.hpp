// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spattn/errors.hpp"
#include "spattn/rng.hpp"
#include "spattn/tape.hpp"
#include "spattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace spattn {

/// |a - b| relative to the larger magnitude, floored at 1 so coordinates
/// near zero are judged on absolute error.
inline double grad_rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

/// Central-difference check of a scalar function built on a fresh tape.
///
/// `build(tape, x_id)` must record the function and return the scalar output
/// id. The analytic gradient from one backward pass is compared against
/// (f(x+eps e_c) - f(x-eps e_c)) / 2eps on up to `max_coords` coordinates,
/// drawn without replacement from a seeded generator (all coordinates if the
/// tensor is small enough). Returns the worst relative error seen.
template <typename BuildFn>
double finite_difference_check(BuildFn build, const Tensor<double>& x, double eps,
                               std::uint64_t seed = 1234, std::size_t max_coords = 64) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw std::invalid_argument("finite difference step must lie in [1e-7, 1e-3]");
    }
    max_coords = std::max<std::size_t>(max_coords, 64);

    Tape<double> tape;
    const auto xid = tape.leaf(x);
    const auto out = build(tape, xid);
    if (tape.value(out).size() != 1) {
        throw ShapeError("gradcheck target must be scalar");
    }
    tape.backward(out);
    const std::vector<double> analytic = tape.grad(xid);

    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
        std::mt19937_64 gen(seed);
        for (std::size_t i = 0; i < max_coords; ++i) {
            const std::size_t j = i + uniform_below(gen, coords.size() - i);
            std::swap(coords[i], coords[j]);
        }
        coords.resize(max_coords);
    }

    const auto eval = [&](const Tensor<double>& pt) {
        Tape<double> t;
        const auto id = t.leaf(pt);
        return t.value(build(t, id)).data[0];
    };

    double worst = 0.0;
    Tensor<double> probe = x;
    for (std::size_t c : coords) {
        const double orig = probe.data[c];
        probe.data[c] = orig + eps;
        const double fp = eval(probe);
        probe.data[c] = orig - eps;
        const double fm = eval(probe);
        probe.data[c] = orig;
        const double fd = (fp - fm) / (2.0 * eps);
        worst = std::max(worst, grad_rel_err(fd, analytic[c]));
    }
    return worst;
}

} // namespace spattn
