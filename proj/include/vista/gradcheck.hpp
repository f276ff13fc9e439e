#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vista/param.hpp"
#include "vista/rng.hpp"

namespace vista {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t worst_coord = -1;
    int coords_checked = 0;
};

// Central-difference check of analytic gradients. The caller runs the
// analytic backward pass first (filling p->grad), then hands over a pure
// forward function that recomputes the scalar loss from current parameter
// values. Run in double; FD is unreliable in float.
inline GradCheckReport grad_check(const std::function<double()>& loss_fn,
                                  const std::vector<Parameter<double>*>& params, double h,
                                  int coords_per_tensor, RngStream rng) {
    if (h < 1e-6 || h > 1e-1) throw NumericError("grad_check: perturbation h out of range");
    GradCheckReport rep;
    for (Parameter<double>* p : params) {
        const int64_t n = p->value.numel();
        std::vector<int64_t> coords;
        if (n <= coords_per_tensor) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int c = 0; c < coords_per_tensor; ++c)
                coords.push_back((int64_t)rng.next_below((uint64_t)n));
        }
        for (int64_t i : coords) {
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double lp = loss_fn();
            p->value[i] = saved - h;
            const double lm = loss_fn();
            p->value[i] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm))
                throw NumericError("grad_check: non-finite loss at " + p->name);
            const double fd = (lp - lm) / (2.0 * h);
            const double analytic = p->grad[i];
            const double err = std::abs(analytic - fd) / std::max(1.0, std::abs(analytic));
            ++rep.coords_checked;
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_param = p->name;
                rep.worst_coord = i;
            }
        }
    }
    return rep;
}

} // namespace vista
