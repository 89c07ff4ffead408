#pragma once

#include <vector>

#include "tensor.hpp"

namespace contrafeat {

// Base-space code (length n) and extended code (k_layers x n).
using LatentCode0 = Tensor;    // shape (n)
using LatentCodeExt = Tensor;  // shape (k_layers, n)

// Orthonormal eigenbasis of the sample covariance of base-space codes.
// Columns of `components` are eigenvectors, eigenvalue-descending; the sign
// of each column is canonicalized so its largest-magnitude entry is positive.
struct PcaBasis {
    Tensor components;    // (n, n), columns are eigenvectors
    Tensor eigenvalues;   // (n), non-increasing
    Tensor mean;          // (n)
    long long sample_count = 0;

    int n() const { return components.ndim() == 2 ? components.dim(0) : 0; }
    // Dense (n, k) matrix of the leading k columns, ready for matvec.
    Tensor top_k(int k) const;
};

// Exact eigendecomposition of the unbiased sample covariance. Requires at
// least two samples of equal length with finite entries.
PcaBasis compute_pca(const Tensor& samples);  // samples: (N, n)

// length * (V[:, :k] * coeffs) / ||V[:, :k] * coeffs||.
Tensor project_direction(const Tensor& coeffs, const PcaBasis& basis, int k, float length);

LatentCodeExt broadcast(const LatentCode0& w0, int k_layers);

}  // namespace contrafeat
