#pragma once

#include <string>
#include <vector>

#include "graph.hpp"
#include "latent.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace contrafeat {

enum class AttentionBoundary { Renorm, Truncate };

struct NavigatorConfig {
    int directions = 6;       // m
    int subspace_k = 8;       // k
    float length = 1.0f;      // norm() target for projected directions
    float att_sigma = 1.0f;   // Gaussian smoothing sigma (3-tap kernel)
    AttentionBoundary att_boundary = AttentionBoundary::Renorm;
};

AttentionBoundary attention_boundary_from_string(const std::string& s);
std::string to_string(AttentionBoundary b);

// Per-direction learnable state: subspace coefficients and layer-attention
// logits. Rows of v_sub are re-randomized by the trainer if they collapse.
struct NavigatorParams {
    Tensor v_sub;       // (m, k)
    Tensor att_logits;  // (m, k_layers)

    static NavigatorParams init(int m, int k, int k_layers, Rng& rng);
    int m() const { return v_sub.dim(0); }
};

struct AttentionVector {
    std::vector<float> weights;  // nonneg, sums to 1
};

struct Modification {
    Tensor delta;  // (k_layers, n), rank-1: row r = weights[r] * v_dir
    int direction_index = 0;
};

// Constant (k_layers x k_layers) matrix applying the truncated 3-tap Gaussian;
// the output of the matvec is renormalized to sum 1.
Tensor smoothing_matrix(int k_layers, float sigma, AttentionBoundary boundary);

// Softmax over layers followed by Gaussian smoothing. Sums to 1 for any
// finite logits.
AttentionVector smooth_attention(const std::vector<float>& logits, float sigma = 1.0f,
                                 AttentionBoundary boundary = AttentionBoundary::Renorm);

// Smoothing applied to an existing simplex vector (unit-test entry point).
std::vector<float> smooth_simplex(const std::vector<float>& weights, float sigma,
                                  AttentionBoundary boundary);

Modification compose_modification(const Tensor& v_dir, const AttentionVector& att, float strength,
                                  int direction_index = 0);

LatentCodeExt apply(const LatentCodeExt& w, const Modification& mod);

// All m unit directions, batched project_direction.
std::vector<Tensor> directions(const NavigatorParams& params, const PcaBasis& basis, int k,
                               float length);

// Graph builders mirroring the plain operations above (same kernels).
int attention_op(ad::Graph& g, int logits_row, const Tensor& smoothing);
int direction_op(ad::Graph& g, int coeff_row, const Tensor& basis_top_k, float length);
int modification_op(ad::Graph& g, int att, int dir, float strength);

}  // namespace contrafeat
