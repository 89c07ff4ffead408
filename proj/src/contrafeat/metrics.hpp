#pragma once

#include <functional>
#include <vector>

#include "tensor.hpp"
#include "toyworld.hpp"

namespace contrafeat {

// Row-normalized mean-absolute factor-change matrix. Rows whose raw maximum
// falls below eps_row are zeroed and flagged dead.
struct AttributeChangeMatrix {
    Tensor a;      // (m, p), entries in [0, 1], row max 1 for live rows
    Tensor a_raw;  // (m, p)
    long long sample_count = 0;
    std::vector<int> dead_rows;

    int m() const { return a.dim(0); }
    int p() const { return a.dim(1); }
};

// mods: one (k_layers, n) latent modification per discovered direction.
AttributeChangeMatrix attribute_change_matrix(const std::vector<Tensor>& mods,
                                              const ToyWorld& world, int sample_count,
                                              float strength, Rng& rng, float eps_row = 1e-8f);

// Mean over live rows of (largest - second largest) row entry.
float s_disen(const AttributeChangeMatrix& acm);

// Number of attribute columns that achieve a row maximum (>= 1 - eps_tie).
int n_discov(const AttributeChangeMatrix& acm, float eps_tie = 1e-6f);

// Mutual information gap on 20-bin quantile discretizations. Factor columns
// with (near) zero entropy are excluded; their indices are reported.
struct MigResult {
    float value = 0.0f;
    std::vector<int> excluded_factors;
};
MigResult mig(const std::vector<std::vector<float>>& codes,
              const std::vector<std::vector<float>>& factors, int bins = 20);

// FactorVAE metric: majority-vote classifier on the argmin of per-dimension
// variance over batches generated with one factor fixed.
//
// sample_codes(factor_index, batch_size, out) fills `out` with `batch_size`
// encoder codes for samples sharing a fixed value of that factor.
using FixedFactorSampler =
    std::function<void(int factor_index, int batch_size, std::vector<std::vector<float>>& out)>;

float fvm(int factor_count, int code_dim, const FixedFactorSampler& sample_codes, Rng& rng,
          int votes = 500, int samples_per_vote = 64);

}  // namespace contrafeat
