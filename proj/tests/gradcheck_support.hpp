#pragma once

// Central-difference gradient verification. Networks under test run in
// double; the finite-difference oracle perturbs one parameter at a time and
// compares against the analytic gradient accumulated by a backward pass.

#include <cmath>
#include <functional>
#include <vector>

#include "canmap/nn.hpp"
#include "canmap/rng.hpp"

namespace testsup {

struct GradCheckStats {
    int64_t checked = 0;
    int64_t failed = 0;
    double worst_rel = 0.0;

    double pass_fraction() const {
        return checked == 0 ? 0.0 : 1.0 - double(failed) / double(checked);
    }
};

// Re-draw parameters at a healthy scale before checking. Initialization-size
// weights leave instance-norm inputs nearly degenerate, which blows up the
// curvature seen by a fixed-h central difference; the checked point must be
// away from those near-kinks, like the loss inputs are kept away from exact
// L1 zeros and pooling ties.
inline void randomize_params(const std::vector<canmap::nn::Param<double>*>& params,
                             canmap::Rng& rng, double w_std = 0.8, double b_std = 0.3) {
    for (auto* p : params) {
        const bool is_bias = p->v.ndim() == 1;
        for (auto& v : p->v.data) v = rng.normal(0.0, is_bias ? b_std : w_std);
    }
}

// eval_loss(): loss at the current parameter values (forward only)
// compute_grads(): zero + accumulate analytic gradients into p->g
inline GradCheckStats gradcheck(const std::vector<canmap::nn::Param<double>*>& params,
                                const std::function<double()>& eval_loss,
                                const std::function<void()>& compute_grads, double h = 1e-3,
                                double tol = 1e-4, int max_per_tensor = 0,
                                canmap::Rng* sampler = nullptr) {
    compute_grads();
    GradCheckStats st;
    for (auto* p : params) {
        const int64_t n = p->v.size();
        std::vector<int64_t> idx;
        if (max_per_tensor > 0 && n > max_per_tensor && sampler) {
            for (int i = 0; i < max_per_tensor; ++i)
                idx.push_back(static_cast<int64_t>(sampler->index(n)));
        } else {
            idx.resize(n);
            for (int64_t i = 0; i < n; ++i) idx[i] = i;
        }
        for (int64_t i : idx) {
            const double saved = p->v[i];
            p->v[i] = saved + h;
            const double lp = eval_loss();
            p->v[i] = saved - h;
            const double lm = eval_loss();
            p->v[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = p->g[i];
            const double rel =
                std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
            ++st.checked;
            if (rel > tol) ++st.failed;
            st.worst_rel = std::max(st.worst_rel, rel);
        }
    }
    return st;
}

} // namespace testsup
