#include <doctest.h>

#include <cmath>

#include "contrafeat/rng.hpp"
#include "contrafeat/toyworld.hpp"
#include "testutil.hpp"

using namespace contrafeat;

TEST_SUITE_BEGIN("toyworld");

namespace {

ToyWorldConfig small_config() {
    ToyWorldConfig c;
    c.image_size = 8;
    c.stages = 1;
    return c;
}

}  // namespace

TEST_CASE("map_latent is the configured linear map") {
    const ToyWorld world(ToyWorldConfig{});
    Tensor z({8});
    CHECK(norm2(world.map_latent(z).data(), 16) == 0.0f);

    Rng rng(3);
    Tensor z1({8}), z2({8});
    for (auto& e : z1.v) e = rng.normalf();
    for (auto& e : z2.v) e = rng.normalf();
    Tensor zsum({8});
    for (int i = 0; i < 8; ++i) zsum[static_cast<std::size_t>(i)] = z1[static_cast<std::size_t>(i)] + z2[static_cast<std::size_t>(i)];
    const Tensor a = world.map_latent(z1), b = world.map_latent(z2), c = world.map_latent(zsum);
    for (int i = 0; i < 16; ++i)
        CHECK(c[static_cast<std::size_t>(i)] ==
              doctest::Approx(a[static_cast<std::size_t>(i)] + b[static_cast<std::size_t>(i)]).epsilon(1e-5));
}

TEST_CASE("w0 covariance matches M M^T by Monte Carlo") {
    const ToyWorld world(ToyWorldConfig{});
    const int n = world.config().n;
    Rng rng(8);
    const int count = 50000;
    std::vector<double> cov(static_cast<std::size_t>(n) * n, 0.0);
    for (int s = 0; s < count; ++s) {
        const LatentCode0 w0 = world.sample_w0(rng);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                cov[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] +=
                    static_cast<double>(w0[static_cast<std::size_t>(i)]) * w0[static_cast<std::size_t>(j)];
    }
    double err = 0.0, ref = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double expected = 0.0;
            for (int k = 0; k < world.config().z_dim; ++k)
                expected += static_cast<double>(world.mapping().at(i, k)) * world.mapping().at(j, k);
            const double got = cov[static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)] / count;
            err += (got - expected) * (got - expected);
            ref += expected * expected;
        }
    CHECK(std::sqrt(err / ref) < 0.05);
}

TEST_CASE("read_factors is layer-selective with orthonormal in-layer reads") {
    const ToyWorld world(ToyWorldConfig{});
    const int k_layers = world.config().k_layers;
    const int n = world.config().n;

    LatentCodeExt zero({k_layers, n});
    const Tensor f0 = world.read_factors(zero);
    for (float v : f0.v) CHECK(v == 0.0f);

    for (int i = 0; i < world.factor_count(); ++i) {
        const Factor& fac = world.factors()[static_cast<std::size_t>(i)];
        LatentCodeExt w = zero;
        for (int j = 0; j < n; ++j) w.at(fac.layer, j) = fac.read[static_cast<std::size_t>(j)];
        const Tensor f = world.read_factors(w);
        CHECK(f[static_cast<std::size_t>(i)] == doctest::Approx(1.0f).epsilon(1e-5));
        // Same-layer factors see nothing (orthonormal reads).
        for (int other = 0; other < world.factor_count(); ++other) {
            if (other == i) continue;
            if (world.factors()[static_cast<std::size_t>(other)].layer == fac.layer)
                CHECK(std::abs(f[static_cast<std::size_t>(other)]) < 1e-5f);
        }
        // Placing the read in a different layer changes nothing for factor i.
        LatentCodeExt w_wrong = zero;
        const int wrong_layer = (fac.layer + 1) % k_layers;
        for (int j = 0; j < n; ++j) w_wrong.at(wrong_layer, j) = fac.read[static_cast<std::size_t>(j)];
        CHECK(std::abs(world.read_factors(w_wrong)[static_cast<std::size_t>(i)]) < 1e-5f);
    }
}

TEST_CASE("oracle modification moves exactly one factor") {
    const ToyWorld world(ToyWorldConfig{});
    Rng rng(5);
    for (int i = 0; i < world.factor_count(); ++i) {
        const LatentCodeExt w = broadcast(world.sample_w0(rng), world.config().k_layers);
        const Tensor base = world.read_factors(w);
        LatentCodeExt w2 = w;
        const Tensor mod = world.oracle_modification(i, 1.0f);
        for (std::size_t j = 0; j < w2.size(); ++j) w2[j] += mod[j];
        const Tensor f = world.read_factors(w2);
        CHECK(f[static_cast<std::size_t>(i)] - base[static_cast<std::size_t>(i)] ==
              doctest::Approx(1.0f).epsilon(1e-4));
        for (int other = 0; other < world.factor_count(); ++other)
            if (other != i)
                CHECK(std::abs(f[static_cast<std::size_t>(other)] - base[static_cast<std::size_t>(other)]) < 1e-5f);
    }
}

TEST_CASE("renderer depends on the latent only through the factor reads") {
    const ToyWorld world(ToyWorldConfig{});
    const int k_layers = world.config().k_layers;
    const int n = world.config().n;
    Rng rng(11);
    const LatentCodeExt w = broadcast(world.sample_w0(rng), k_layers);

    // Add a vector orthogonal to both reads of one layer: image unchanged.
    for (int layer = 0; layer < k_layers; ++layer) {
        Tensor noise({n});
        for (auto& e : noise.v) e = rng.normalf();
        for (const Factor& fac : world.factors()) {
            if (fac.layer != layer) continue;
            const float d = dot(noise.data(), fac.read.data(), noise.size());
            for (int j = 0; j < n; ++j) noise[static_cast<std::size_t>(j)] -= d * fac.read[static_cast<std::size_t>(j)];
        }
        LatentCodeExt w2 = w;
        for (int j = 0; j < n; ++j) w2.at(layer, j) += noise[static_cast<std::size_t>(j)];
        const Image a = world.render(w), b = world.render(w2);
        float max_diff = 0.0f;
        for (std::size_t i = 0; i < a.size(); ++i) max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
        CHECK(max_diff < 1e-5f);
    }
}

TEST_CASE("image range and brightness monotonicity in blob-free corners") {
    const ToyWorld world(ToyWorldConfig{});
    Rng rng(17);
    const int hw = world.config().image_size;
    const int bright_index = 5;

    for (int rep = 0; rep < 10; ++rep) {
        const LatentCodeExt w = broadcast(world.sample_w0(rng), world.config().k_layers);
        float prev = -1e9f;
        for (int t = 0; t < 7; ++t) {
            LatentCodeExt w2 = w;
            const Tensor mod = world.oracle_modification(bright_index, -3.0f + t * 1.0f);
            for (std::size_t i = 0; i < w2.size(); ++i) w2[i] += mod[i];
            const Image img = world.render(w2);
            for (float v : img.v) {
                CHECK(v <= 1.0f);
                CHECK(v >= -1.0f);
            }
            // Mean over the four 2x2 corner patches.
            float corner = 0.0f;
            int count = 0;
            for (int cy : {0, hw - 2})
                for (int cx : {0, hw - 2})
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            for (int c = 0; c < 3; ++c) {
                                corner += img.v[((static_cast<std::size_t>(cy + dy)) * hw +
                                                 static_cast<std::size_t>(cx + dx)) * 3 + static_cast<std::size_t>(c)];
                                ++count;
                            }
            corner /= static_cast<float>(count);
            CHECK(corner > prev);
            prev = corner;
        }
    }
}

TEST_CASE("extract_features shapes and determinism") {
    const ToyWorld world(ToyWorldConfig{});
    Rng rng(19);
    const Image img = world.render(broadcast(world.sample_w0(rng), world.config().k_layers));
    const FeatureStack f1 = world.extract_features(img);
    const FeatureStack f2 = world.extract_features(img);
    REQUIRE(f1.stages.size() == 3);
    CHECK(f1.stages[0].shape == std::vector<int>{16, 16, 8});
    CHECK(f1.stages[1].shape == std::vector<int>{8, 8, 16});
    CHECK(f1.stages[2].shape == std::vector<int>{4, 4, 32});
    for (std::size_t l = 0; l < 3; ++l) CHECK(f1.stages[l].v == f2.stages[l].v);
}

TEST_CASE("render gradient matches finite differences") {
    const ToyWorld world(small_config());
    Rng rng(23);
    Tensor w = broadcast(world.sample_w0(rng), world.config().k_layers);
    Tensor weight({8, 8, 3});
    for (auto& e : weight.v) e = rng.normalf();

    auto loss_of = [&]() {
        ad::Graph g;
        const int wi = g.input(w);
        const int img = world.render_op(g, wi);
        return g.val(g.mean_all(g.mul_cvec(img, weight)))[0];
    };
    ad::Graph g;
    const int wi = g.input(w);
    const int img = world.render_op(g, wi);
    g.backward(g.mean_all(g.mul_cvec(img, weight)));
    const auto rep = testutil::fd_check(w, g.grad(wi), loss_of);
    CHECK(rep.ok());
}

TEST_CASE("extractor gradient w.r.t. the image matches finite differences") {
    const ToyWorld world(small_config());
    Rng rng(29);
    Image img({8, 8, 3});
    for (auto& e : img.v) e = 0.5f * rng.normalf();

    auto loss_of = [&]() {
        ad::Graph g;
        const int ii = g.input(img);
        const auto stages = world.extract_ops(g, ii);
        return g.val(g.mean_all(g.square(stages.back())))[0];
    };
    ad::Graph g;
    const int ii = g.input(img);
    const auto stages = world.extract_ops(g, ii);
    g.backward(g.mean_all(g.square(stages.back())));
    const auto rep = testutil::fd_check(img, g.grad(ii), loss_of);
    CHECK(rep.ok());
}

TEST_CASE("end-to-end gradient through render and extract") {
    const ToyWorld world(small_config());
    Rng rng(31);
    Tensor w = broadcast(world.sample_w0(rng), world.config().k_layers);

    auto loss_of = [&]() {
        ad::Graph g;
        const int wi = g.input(w);
        const auto stages = world.extract_ops(g, world.render_op(g, wi));
        return g.val(g.mean_all(g.square(stages.back())))[0];
    };
    ad::Graph g;
    const int wi = g.input(w);
    const auto stages = world.extract_ops(g, world.render_op(g, wi));
    g.backward(g.mean_all(g.square(stages.back())));
    const auto rep = testutil::fd_check(w, g.grad(wi), loss_of);
    CHECK(rep.ok());
}

TEST_CASE("conditioned sampling fixes the requested factor") {
    const ToyWorld world(ToyWorldConfig{});
    Rng rng(37);
    for (int i = 0; i < world.factor_count(); ++i) {
        const float target = 0.7f;
        for (int rep = 0; rep < 5; ++rep) {
            const LatentCode0 w0 = world.sample_w0_given_factor(rng, i, target);
            const LatentCodeExt w = broadcast(w0, world.config().k_layers);
            CHECK(world.read_factors(w)[static_cast<std::size_t>(i)] ==
                  doctest::Approx(target).epsilon(1e-3));
        }
    }
}

TEST_SUITE_END();
