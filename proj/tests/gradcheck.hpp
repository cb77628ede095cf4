#pragma once

// Central-difference gradient checking shared by the unit tests and the
// acceptance suite. The forward path runs in FP32, so comparisons use a
// noise floor below which numeric differences are dominated by rounding.

#include <cmath>
#include <vector>

#include "memtrain/netcore.hpp"

namespace gradcheck {

using namespace memtrain;

inline double loss_of(const ModelSpec& model, ParamSet& params, const Tensor& x,
                      const std::vector<uint8_t>& labels) {
    RefExec exec(model, params);
    BatchCache cache;
    Tensor logits = forward(model, params, x, exec, cache, true);
    Tensor dlogits;
    return cross_entropy_batch(logits, labels, dlogits);
}

struct CheckResult {
    int checked = 0;
    int failed = 0;
    double worst_rel = 0.0;
};

// Verifies every weight/bias/bn gradient (and optionally the input gradient)
// against central differences with step h. Elements whose numeric gradient
// sits below `floor` are skipped: at FP32 precision the finite difference is
// rounding noise there.
inline CheckResult check_model(const ModelSpec& model, ParamSet& params, const Tensor& x,
                               const std::vector<uint8_t>& labels, double h = 1e-3,
                               double tol = 1e-3, bool check_input = true) {
    RefExec exec(model, params);
    BatchCache cache;
    Tensor logits = forward(model, params, x, exec, cache, true);
    Tensor dlogits;
    cross_entropy_batch(logits, labels, dlogits);
    Gradients grads;
    backward(model, params, cache, x, dlogits, exec, grads);

    CheckResult res;
    double grad_mag = 0.0;
    for (size_t p = 0; p < params.tensors.size(); ++p) {
        if (!params.trainable[p]) continue;
        for (size_t i = 0; i < grads.g[p].numel(); ++i)
            grad_mag = std::max(grad_mag, std::abs(static_cast<double>(grads.g[p][i])));
    }
    // The FP32 forward gives the central difference an absolute noise of
    // roughly 1e-4 * grad_mag, independent of the element's size. The
    // relative criterion is meaningful above ~0.1 * grad_mag; below that the
    // same absolute agreement is enforced directly.
    const double floor = std::max(5e-3, 0.1 * grad_mag);
    const double abs_tol = 1e-3 * std::max(1.0, grad_mag);

    auto compare = [&](double analytic, double numeric) {
        ++res.checked;
        if (std::max(std::abs(numeric), std::abs(analytic)) < floor) {
            if (std::abs(analytic - numeric) > abs_tol) ++res.failed;
            return;
        }
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        res.worst_rel = std::max(res.worst_rel, rel);
        if (rel > tol) ++res.failed;
    };

    for (size_t p = 0; p < params.tensors.size(); ++p) {
        if (!params.trainable[p]) continue;
        Tensor& t = params.tensors[p];
        for (size_t i = 0; i < t.numel(); ++i) {
            const float keep = t[i];
            t[i] = static_cast<float>(keep + h);
            const double up = loss_of(model, params, x, labels);
            t[i] = static_cast<float>(keep - h);
            const double dn = loss_of(model, params, x, labels);
            t[i] = keep;
            compare(grads.g[p][i], (up - dn) / (2.0 * h));
        }
    }
    if (check_input) {
        Tensor xp = x;
        for (size_t i = 0; i < xp.numel(); ++i) {
            const float keep = xp[i];
            xp[i] = static_cast<float>(keep + h);
            const double up = loss_of(model, params, xp, labels);
            xp[i] = static_cast<float>(keep - h);
            const double dn = loss_of(model, params, xp, labels);
            xp[i] = keep;
            compare(grads.dx[i], (up - dn) / (2.0 * h));
        }
    }
    return res;
}

inline Tensor random_input(const ModelSpec& model, int n, uint64_t seed) {
    Tensor x({n, model.in_ch, model.in_h, model.in_w});
    Rng rng = root_key(seed).rng();
    for (size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return x;
}

inline std::vector<uint8_t> random_labels(int n, int classes, uint64_t seed) {
    std::vector<uint8_t> y(static_cast<size_t>(n));
    Rng rng = root_key(seed ^ 0x55u).rng();
    for (auto& v : y) v = static_cast<uint8_t>(rng.below(static_cast<uint64_t>(classes)));
    return y;
}

} // namespace gradcheck
