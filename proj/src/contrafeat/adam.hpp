#pragma once

#include <cmath>

#include "tensor.hpp"

namespace contrafeat {

// Adam with bias correction. The trainer uses betas (0, 0.99).
struct AdamState {
    Tensor m;
    Tensor v;
    long long t = 0;

    static AdamState for_param(const Tensor& p) {
        AdamState s;
        s.m = Tensor(p.shape);
        s.v = Tensor(p.shape);
        return s;
    }

    void step(Tensor& param, const Tensor& grad, float lr, float beta1, float beta2, float eps) {
        ++t;
        const float c1 = 1.0f - std::pow(beta1, static_cast<float>(t));
        const float c2 = 1.0f - std::pow(beta2, static_cast<float>(t));
        for (std::size_t i = 0; i < param.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0f - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0f - beta2) * grad[i] * grad[i];
            const float mhat = m[i] / c1;
            const float vhat = v[i] / c2;
            param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

// Global-norm gradient clipping across a set of tensors.
inline void clip_global_norm(std::vector<Tensor*> grads, float max_norm) {
    float sq = 0.0f;
    for (const Tensor* g : grads)
        for (float x : g->v) sq += x * x;
    const float nrm = std::sqrt(sq);
    if (nrm <= max_norm || nrm == 0.0f) return;
    const float s = max_norm / nrm;
    for (Tensor* g : grads)
        for (float& x : g->v) x *= s;
}

}  // namespace contrafeat
