#include <doctest.h>

#include <cmath>

#include "contrafeat/latent.hpp"
#include "contrafeat/navigator.hpp"
#include "contrafeat/rng.hpp"
#include "testutil.hpp"

using namespace contrafeat;

TEST_SUITE_BEGIN("navigator");

// Normalized 3-tap Gaussian at sigma 1: e^{-1/2} : 1 : e^{-1/2}, i.e.
// 0.6065307 / 2.2130613 and 1 / 2.2130613.
static const float kSide = 0.27406862f;
static const float kCenter = 0.45186276f;

TEST_CASE("uniform logits stay uniform through smoothing") {
    const AttentionVector att = smooth_attention({0.0f, 0.0f, 0.0f, 0.0f});
    for (float w : att.weights) CHECK(w == doctest::Approx(0.25f).epsilon(1e-6));
}

TEST_CASE("interior one-hot smooths to the hand-convolved kernel") {
    // k=5, spike at layer 2: neighbors are interior so the full kernel applies.
    const std::vector<float> spike = {0.0f, 0.0f, 1.0f, 0.0f, 0.0f};
    const auto out = smooth_simplex(spike, 1.0f, AttentionBoundary::Renorm);
    CHECK(out[0] == doctest::Approx(0.0f));
    CHECK(out[1] == doctest::Approx(kSide).epsilon(1e-5));
    CHECK(out[2] == doctest::Approx(kCenter).epsilon(1e-5));
    CHECK(out[3] == doctest::Approx(kSide).epsilon(1e-5));
    CHECK(out[4] == doctest::Approx(0.0f));
}

TEST_CASE("smoothed attention is a simplex for any finite logits") {
    Rng rng(3);
    for (int rep = 0; rep < 200; ++rep) {
        const int k = 1 + static_cast<int>(rng.below(8));
        std::vector<float> logits(static_cast<std::size_t>(k));
        for (auto& e : logits) e = 10.0f * rng.normalf();
        for (const auto boundary : {AttentionBoundary::Renorm, AttentionBoundary::Truncate}) {
            const AttentionVector att = smooth_attention(logits, 1.0f, boundary);
            float sum = 0.0f;
            for (float w : att.weights) {
                CHECK(w >= 0.0f);
                sum += w;
            }
            CHECK(std::abs(sum - 1.0f) < 1e-6f);
        }
    }
}

TEST_CASE("compose_modification is a rank-1 layer-weighted outer product") {
    Tensor v = Tensor::from({3}, {0.6f, 0.0f, 0.8f});
    AttentionVector att{{0.0f, 0.0f, 1.0f, 0.0f}};  // pre-smoothing one-hot for the unit test
    const Modification mod = compose_modification(v, att, 2.0f, 1);
    CHECK(mod.delta.shape == std::vector<int>{4, 3});
    for (int r = 0; r < 4; ++r)
        for (int j = 0; j < 3; ++j)
            CHECK(mod.delta.at(r, j) ==
                  doctest::Approx(r == 2 ? 2.0f * v[static_cast<std::size_t>(j)] : 0.0f));

    const Modification zero = compose_modification(v, att, 0.0f);
    for (float e : zero.delta.v) CHECK(e == 0.0f);

    // Sum of row norms equals strength * ||v|| since attention sums to 1.
    Rng rng(5);
    std::vector<float> logits = {0.3f, -1.0f, 0.7f, 0.2f};
    const AttentionVector smooth = smooth_attention(logits);
    const Modification m2 = compose_modification(v, smooth, 1.7f);
    float total = 0.0f;
    for (int r = 0; r < 4; ++r) total += norm2(&m2.delta.v[static_cast<std::size_t>(r) * 3], 3);
    CHECK(total == doctest::Approx(1.7f * 1.0f).epsilon(1e-5));

    // Rank-1: the delta reconstructs exactly from attention and direction.
    for (int r = 0; r < 4; ++r)
        for (int j = 0; j < 3; ++j)
            CHECK(m2.delta.at(r, j) ==
                  doctest::Approx(1.7f * smooth.weights[static_cast<std::size_t>(r)] *
                                  v[static_cast<std::size_t>(j)]).epsilon(1e-6));
}

TEST_CASE("apply adds and is invertible and linear") {
    Rng rng(7);
    Tensor w({3, 4});
    for (auto& e : w.v) e = rng.normalf();
    Modification m1, m2;
    m1.delta = Tensor({3, 4});
    m2.delta = Tensor({3, 4});
    for (auto& e : m1.delta.v) e = rng.normalf();
    for (auto& e : m2.delta.v) e = rng.normalf();

    const LatentCodeExt same = apply(w, Modification{Tensor({3, 4}), 0});
    CHECK(same.v == w.v);

    Modification neg = m1;
    for (auto& e : neg.delta.v) e = -e;
    const LatentCodeExt roundtrip = apply(apply(w, m1), neg);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(roundtrip[i] - w[i]) < 1e-6f);

    Modification sum = m1;
    for (std::size_t i = 0; i < sum.delta.size(); ++i) sum.delta[i] += m2.delta[i];
    const LatentCodeExt a = apply(w, sum);
    const LatentCodeExt b = apply(apply(w, m1), m2);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-6f);

    Modification bad;
    bad.delta = Tensor({2, 4});
    CHECK_THROWS(apply(w, bad));
}

TEST_CASE("directions: identical rows give identical directions, orthogonal rows stay orthogonal") {
    Rng rng(9);
    Tensor samples({100, 6});
    for (auto& e : samples.v) e = rng.normalf();
    const PcaBasis basis = compute_pca(samples);

    NavigatorParams params;
    params.att_logits = Tensor({2, 3});
    params.v_sub = Tensor({2, 4});
    for (int j = 0; j < 4; ++j) params.v_sub.at(0, j) = params.v_sub.at(1, j) = rng.normalf();
    auto dirs = directions(params, basis, 4, 1.0f);
    for (int i = 0; i < 6; ++i)
        CHECK(dirs[0][static_cast<std::size_t>(i)] == dirs[1][static_cast<std::size_t>(i)]);

    params.v_sub = Tensor({2, 4});
    params.v_sub.at(0, 0) = 1.0f;
    params.v_sub.at(1, 1) = 1.0f;
    dirs = directions(params, basis, 4, 1.0f);
    CHECK(std::abs(dot(dirs[0].data(), dirs[1].data(), 6)) < 1e-6f);
}

TEST_CASE("attention and modification gradients match finite differences") {
    Rng rng(13);
    Tensor samples({60, 5});
    for (auto& e : samples.v) e = rng.normalf();
    const PcaBasis basis = compute_pca(samples);
    const Tensor top_k = basis.top_k(3);
    const Tensor smoothing = smoothing_matrix(4, 1.0f, AttentionBoundary::Renorm);

    Tensor v_sub({2, 3}), att_logits({2, 4});
    for (auto& e : v_sub.v) e = rng.normalf();
    for (auto& e : att_logits.v) e = rng.normalf();
    Tensor probe({4, 5});
    for (auto& e : probe.v) e = 0.3f * rng.normalf();

    auto build = [&](ad::Graph& g) {
        const int vs = g.input(v_sub);
        const int al = g.input(att_logits);
        const int dir = direction_op(g, g.row(vs, 1), top_k, 1.5f);
        const int att = attention_op(g, g.row(al, 1), smoothing);
        const int mod = modification_op(g, att, dir, 0.8f);
        const int loss = g.mean_all(g.square(g.add(mod, g.constant(probe))));
        return std::tuple<int, int, int>{vs, al, loss};
    };
    ad::Graph g;
    auto [vs, al, loss] = build(g);
    g.backward(loss);
    Tensor gv = g.grad(vs), ga = g.grad(al);

    auto loss_of = [&]() {
        ad::Graph gg;
        auto [v2, a2, l2] = build(gg);
        return gg.val(l2)[0];
    };
    CHECK(testutil::fd_check(v_sub, gv, loss_of).ok());
    CHECK(testutil::fd_check(att_logits, ga, loss_of).ok());
}

TEST_SUITE_END();
