#include "latent.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "errors.hpp"

namespace contrafeat {

Tensor PcaBasis::top_k(int k) const {
    const int nn = n();
    if (k < 1 || k > nn) throw ConfigError("pca: k out of range");
    Tensor out({nn, k});
    for (int i = 0; i < nn; ++i)
        for (int j = 0; j < k; ++j) out.at(i, j) = components.at(i, j);
    return out;
}

PcaBasis compute_pca(const Tensor& samples) {
    if (samples.ndim() != 2 || samples.dim(0) < 2)
        throw ConfigError("pca: need at least 2 samples of shape (N, n)");
    if (!samples.all_finite()) throw NumericalError("pca: non-finite input");
    const int n = samples.dim(1);
    const long long count = samples.dim(0);

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
    for (long long i = 0; i < count; ++i)
        for (int j = 0; j < n; ++j) mean[j] += samples.at(static_cast<int>(i), j);
    mean /= static_cast<double>(count);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd x(n);
    for (long long i = 0; i < count; ++i) {
        for (int j = 0; j < n; ++j) x[j] = samples.at(static_cast<int>(i), j) - mean[j];
        cov.selfadjointView<Eigen::Lower>().rankUpdate(x, 1.0);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    cov /= static_cast<double>(count - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw NumericalError("pca: eigendecomposition failed");

    // Eigen returns ascending order; flip to descending and fix signs.
    PcaBasis basis;
    basis.components = Tensor({n, n});
    basis.eigenvalues = Tensor({n});
    basis.mean = Tensor({n});
    basis.sample_count = count;
    for (int j = 0; j < n; ++j) basis.mean[static_cast<std::size_t>(j)] = static_cast<float>(mean[j]);
    for (int c = 0; c < n; ++c) {
        const int src = n - 1 - c;
        basis.eigenvalues[static_cast<std::size_t>(c)] =
            static_cast<float>(std::max(0.0, solver.eigenvalues()[src]));
        Eigen::VectorXd vec = solver.eigenvectors().col(src);
        int arg = 0;
        for (int i = 1; i < n; ++i)
            if (std::abs(vec[i]) > std::abs(vec[arg])) arg = i;
        if (vec[arg] < 0) vec = -vec;
        for (int i = 0; i < n; ++i) basis.components.at(i, c) = static_cast<float>(vec[i]);
    }
    return basis;
}

Tensor project_direction(const Tensor& coeffs, const PcaBasis& basis, int k, float length) {
    const int n = basis.n();
    if (k < 1 || k > n) throw ConfigError("project_direction: k out of range");
    if (coeffs.ndim() != 1 || coeffs.dim(0) != k)
        throw ConfigError("project_direction: coeffs length must equal k");
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        float s = 0.0f;
        for (int j = 0; j < k; ++j) s += basis.components.at(i, j) * coeffs[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = s;
    }
    const float nrm = norm2(out.data(), out.size());
    if (!(nrm > 0.0f)) throw NumericalError("project_direction: zero coefficient vector");
    const float s = length / nrm;
    for (auto& e : out.v) e *= s;
    return out;
}

LatentCodeExt broadcast(const LatentCode0& w0, int k_layers) {
    const int n = w0.dim(0);
    LatentCodeExt w({k_layers, n});
    for (int r = 0; r < k_layers; ++r)
        for (int j = 0; j < n; ++j) w.at(r, j) = w0[static_cast<std::size_t>(j)];
    return w;
}

}  // namespace contrafeat
