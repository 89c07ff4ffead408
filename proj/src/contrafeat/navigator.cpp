#include "navigator.hpp"

#include <cmath>

#include "errors.hpp"

namespace contrafeat {

AttentionBoundary attention_boundary_from_string(const std::string& s) {
    if (s == "renorm") return AttentionBoundary::Renorm;
    if (s == "truncate") return AttentionBoundary::Truncate;
    throw ConfigError("unknown attention boundary mode '" + s + "'");
}

std::string to_string(AttentionBoundary b) {
    return b == AttentionBoundary::Renorm ? "renorm" : "truncate";
}

NavigatorParams NavigatorParams::init(int m, int k, int k_layers, Rng& rng) {
    // Coefficient rows start spread over distinct leading principal
    // components plus a small random component; duplicated directions seeded
    // from a fully random start tend to lock onto the same semantics early.
    NavigatorParams p;
    p.v_sub = Tensor({m, k});
    p.att_logits = Tensor({m, k_layers});  // zeros: uniform attention start
    for (int d = 0; d < m; ++d) {
        float* row = &p.v_sub.v[static_cast<std::size_t>(d) * k];
        for (int j = 0; j < k; ++j) row[j] = 0.25f * rng.normalf();
        row[d % k] += 1.0f;
        const float nrm = norm2(row, static_cast<std::size_t>(k));
        for (int j = 0; j < k; ++j) row[j] /= nrm;
    }
    return p;
}

Tensor smoothing_matrix(int k_layers, float sigma, AttentionBoundary boundary) {
    if (k_layers < 1) throw ConfigError("smoothing_matrix: k_layers must be >= 1");
    const float g = std::exp(-0.5f / (sigma * sigma));
    const float taps[3] = {g, 1.0f, g};
    const float full = 2.0f * g + 1.0f;
    Tensor t({k_layers, k_layers});
    for (int p = 0; p < k_layers; ++p) {
        float denom = full;
        if (boundary == AttentionBoundary::Renorm) {
            denom = 0.0f;
            for (int o = -1; o <= 1; ++o)
                if (p + o >= 0 && p + o < k_layers) denom += taps[o + 1];
        }
        for (int o = -1; o <= 1; ++o) {
            const int q = p + o;
            if (q >= 0 && q < k_layers) t.at(p, q) = taps[o + 1] / denom;
        }
    }
    return t;
}

std::vector<float> smooth_simplex(const std::vector<float>& weights, float sigma,
                                  AttentionBoundary boundary) {
    const int k = static_cast<int>(weights.size());
    const Tensor t = smoothing_matrix(k, sigma, boundary);
    std::vector<float> out(weights.size(), 0.0f);
    float sum = 0.0f;
    for (int p = 0; p < k; ++p) {
        float s = 0.0f;
        for (int q = 0; q < k; ++q) s += t.at(p, q) * weights[static_cast<std::size_t>(q)];
        out[static_cast<std::size_t>(p)] = s;
        sum += s;
    }
    for (auto& e : out) e /= sum;
    return out;
}

AttentionVector smooth_attention(const std::vector<float>& logits, float sigma,
                                 AttentionBoundary boundary) {
    for (float x : logits)
        if (!std::isfinite(x)) throw NumericalError("smooth_attention: non-finite logits");
    std::vector<float> soft(logits.size());
    ad::softmax_fwd(logits.data(), soft.data(), static_cast<int>(logits.size()));
    return AttentionVector{smooth_simplex(soft, sigma, boundary)};
}

Modification compose_modification(const Tensor& v_dir, const AttentionVector& att, float strength,
                                  int direction_index) {
    const int k_layers = static_cast<int>(att.weights.size());
    const int n = v_dir.dim(0);
    Modification mod;
    mod.direction_index = direction_index;
    mod.delta = Tensor({k_layers, n});
    for (int r = 0; r < k_layers; ++r) {
        const float s = strength * att.weights[static_cast<std::size_t>(r)];
        for (int j = 0; j < n; ++j) mod.delta.at(r, j) = s * v_dir[static_cast<std::size_t>(j)];
    }
    return mod;
}

LatentCodeExt apply(const LatentCodeExt& w, const Modification& mod) {
    if (!w.same_shape(mod.delta)) throw ConfigError("apply: shape mismatch");
    LatentCodeExt out = w;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += mod.delta[i];
    return out;
}

std::vector<Tensor> directions(const NavigatorParams& params, const PcaBasis& basis, int k,
                               float length) {
    std::vector<Tensor> dirs;
    const int m = params.m();
    for (int d = 0; d < m; ++d) {
        Tensor coeffs({k});
        for (int j = 0; j < k; ++j) coeffs[static_cast<std::size_t>(j)] = params.v_sub.at(d, j);
        dirs.push_back(project_direction(coeffs, basis, k, length));
    }
    return dirs;
}

int attention_op(ad::Graph& g, int logits_row, const Tensor& smoothing) {
    return g.normalize_sum(g.matvec_const(smoothing, g.softmax(logits_row)));
}

int direction_op(ad::Graph& g, int coeff_row, const Tensor& basis_top_k, float length) {
    return g.normalize_to(g.matvec_const(basis_top_k, coeff_row), length);
}

int modification_op(ad::Graph& g, int att, int dir, float strength) {
    return g.scale(g.outer(att, dir), strength);
}

}  // namespace contrafeat
