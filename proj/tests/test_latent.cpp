#include <doctest.h>

#include <cmath>

#include "contrafeat/errors.hpp"
#include "contrafeat/latent.hpp"
#include "contrafeat/rng.hpp"
#include "contrafeat/toyworld.hpp"

using namespace contrafeat;

TEST_SUITE_BEGIN("latent");

namespace {

Tensor random_samples(int count, int n, std::uint64_t seed) {
    Rng rng(seed);
    Tensor s({count, n});
    for (auto& e : s.v) e = rng.normalf();
    return s;
}

}  // namespace

TEST_CASE("single-axis data yields that axis as first component") {
    // Samples on axis e3 with unbiased sample variance exactly 4.
    const int n = 4;
    Tensor samples({3, n});
    samples.at(0, 2) = -2.0f;
    samples.at(1, 2) = 0.0f;
    samples.at(2, 2) = 2.0f;
    const PcaBasis basis = compute_pca(samples);
    CHECK(basis.eigenvalues[0] == doctest::Approx(4.0f).epsilon(1e-5));
    // Sign canonicalization picks +e3.
    CHECK(basis.components.at(2, 0) == doctest::Approx(1.0f).epsilon(1e-5));
    for (int i = 0; i < n; ++i)
        if (i != 2) CHECK(std::abs(basis.components.at(i, 0)) < 1e-5f);
    for (int c = 1; c < n; ++c) CHECK(basis.eigenvalues[static_cast<std::size_t>(c)] < 1e-6f);
}

TEST_CASE("components are orthonormal and eigenvalues sorted") {
    const int n = 12;
    const Tensor samples = random_samples(300, n, 5);
    const PcaBasis basis = compute_pca(samples);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            float d = 0.0f;
            for (int i = 0; i < n; ++i) d += basis.components.at(i, a) * basis.components.at(i, b);
            CHECK(std::abs(d - (a == b ? 1.0f : 0.0f)) < 1e-5f);
        }
    for (int c = 1; c < n; ++c)
        CHECK(basis.eigenvalues[static_cast<std::size_t>(c)] <=
              basis.eigenvalues[static_cast<std::size_t>(c - 1)] + 1e-7f);
    // Sign convention: largest-magnitude entry of each column positive.
    for (int c = 0; c < n; ++c) {
        int arg = 0;
        for (int i = 1; i < n; ++i)
            if (std::abs(basis.components.at(i, c)) > std::abs(basis.components.at(arg, c))) arg = i;
        CHECK(basis.components.at(arg, c) > 0.0f);
    }
}

TEST_CASE("total variance equals covariance trace") {
    const int n = 8;
    const Tensor samples = random_samples(500, n, 6);
    const PcaBasis basis = compute_pca(samples);

    // Trace of the unbiased sample covariance, computed independently.
    double trace = 0.0;
    for (int j = 0; j < n; ++j) {
        double mean = 0.0;
        for (int i = 0; i < 500; ++i) mean += samples.at(i, j);
        mean /= 500.0;
        double acc = 0.0;
        for (int i = 0; i < 500; ++i) {
            const double d = samples.at(i, j) - mean;
            acc += d * d;
        }
        trace += acc / 499.0;
    }
    double total = 0.0;
    for (float e : basis.eigenvalues.v) total += e;
    CHECK(std::abs(total - trace) / trace < 1e-4);
}

TEST_CASE("toy mapping spectrum is recovered and top-8 explains everything") {
    ToyWorldConfig wc;
    const ToyWorld world(wc);
    Rng rng(12);
    const int count = 50000;
    Tensor samples({count, wc.n});
    for (int i = 0; i < count; ++i) {
        const LatentCode0 w0 = world.sample_w0(rng);
        for (int j = 0; j < wc.n; ++j) samples.at(i, j) = w0[static_cast<std::size_t>(j)];
    }
    const PcaBasis basis = compute_pca(samples);

    double total = 0.0, top8 = 0.0;
    for (int c = 0; c < wc.n; ++c) {
        total += basis.eigenvalues[static_cast<std::size_t>(c)];
        if (c < 8) top8 += basis.eigenvalues[static_cast<std::size_t>(c)];
    }
    CHECK(top8 / total > 0.99);

    // Eigenvalues of the sample covariance track the squared singular values
    // of the mapping within Monte-Carlo error.
    for (int c = 0; c < wc.z_dim; ++c) {
        const float expected = world.singular_values()[static_cast<std::size_t>(c)] *
                               world.singular_values()[static_cast<std::size_t>(c)];
        CHECK(basis.eigenvalues[static_cast<std::size_t>(c)] ==
              doctest::Approx(expected).epsilon(0.05));
    }
}

TEST_CASE("pca is deterministic") {
    const Tensor samples = random_samples(100, 6, 77);
    const PcaBasis a = compute_pca(samples);
    const PcaBasis b = compute_pca(samples);
    CHECK(a.components.v == b.components.v);
    CHECK(a.eigenvalues.v == b.eigenvalues.v);
}

TEST_CASE("pca input validation") {
    CHECK_THROWS_AS(compute_pca(random_samples(1, 4, 1)), ConfigError);
    Tensor bad = random_samples(3, 4, 2);
    bad[5] = std::nanf("");
    CHECK_THROWS_AS(compute_pca(bad), NumericalError);
}

TEST_CASE("project_direction maps basis coefficients to unit directions") {
    const Tensor samples = random_samples(200, 6, 9);
    const PcaBasis basis = compute_pca(samples);

    Tensor e1({3});
    e1[0] = 1.0f;
    const Tensor dir = project_direction(e1, basis, 3, 1.0f);
    for (int i = 0; i < 6; ++i)
        CHECK(dir[static_cast<std::size_t>(i)] ==
              doctest::Approx(basis.components.at(i, 0)).epsilon(1e-5));

    // Norm equals the requested length; result stays in the leading span.
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor coeffs({4});
        for (auto& e : coeffs.v) e = rng.normalf();
        const float length = 0.5f + static_cast<float>(rng.uniform()) * 2.0f;
        const Tensor d = project_direction(coeffs, basis, 4, length);
        CHECK(std::abs(norm2(d.data(), d.size()) - length) < 2e-6f * length);

        Tensor recon({6});
        for (int c = 0; c < 4; ++c) {
            float proj = 0.0f;
            for (int i = 0; i < 6; ++i) proj += d[static_cast<std::size_t>(i)] * basis.components.at(i, c);
            for (int i = 0; i < 6; ++i) recon[static_cast<std::size_t>(i)] += proj * basis.components.at(i, c);
        }
        float resid = 0.0f;
        for (int i = 0; i < 6; ++i) {
            const float r = d[static_cast<std::size_t>(i)] - recon[static_cast<std::size_t>(i)];
            resid += r * r;
        }
        CHECK(std::sqrt(resid) < 1e-6f);
    }

    Tensor zero({3});
    CHECK_THROWS_AS(project_direction(zero, basis, 3, 1.0f), NumericalError);
    CHECK_THROWS_AS(project_direction(e1, basis, 99, 1.0f), ConfigError);
}

TEST_CASE("broadcast duplicates the base code") {
    Tensor w0 = Tensor::from({2}, {1.0f, 2.0f});
    const LatentCodeExt w = broadcast(w0, 3);
    CHECK(w.shape == std::vector<int>{3, 2});
    for (int r = 0; r < 3; ++r) {
        CHECK(w.at(r, 0) == 1.0f);
        CHECK(w.at(r, 1) == 2.0f);
    }
    for (int r = 0; r < 3; ++r)
        for (int j = 0; j < 2; ++j) CHECK(w.at(r, j) - w.at(0, j) == 0.0f);
}

TEST_SUITE_END();
