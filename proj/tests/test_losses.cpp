#include <doctest.h>

#include <cmath>

#include "contrafeat/errors.hpp"
#include "contrafeat/losses.hpp"
#include "contrafeat/rng.hpp"
#include "testutil.hpp"

using namespace contrafeat;

TEST_SUITE_BEGIN("losses");

namespace {

// A single-stage change with S spatial positions laid out as (1, S, C).
FeatureChange stage1(const std::vector<std::vector<float>>& rows) {
    FeatureChange fc;
    const int s = static_cast<int>(rows.size());
    const int c = static_cast<int>(rows[0].size());
    Tensor t({1, s, c});
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < c; ++j)
            t.v[static_cast<std::size_t>(i * c + j)] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    fc.stages.push_back(std::move(t));
    return fc;
}

LossConfig cfg_mode(LossMode mode) {
    LossConfig cfg;
    cfg.mode = mode;
    return cfg;
}

float graph_pair_score(const FeatureChange& fx, const FeatureChange& fy, LossMode mode, float eps) {
    ad::Graph g;
    std::vector<int> a, b;
    for (const Tensor& t : fx.stages) a.push_back(g.constant(t));
    for (const Tensor& t : fy.stages) b.push_back(g.constant(t));
    return g.val(masked_score_op(g, a, b, mode, eps))[0];
}

}  // namespace

TEST_CASE("masked consistency hand cases") {
    // Identical up to scale on the only active position: loss is exactly -1.
    const FeatureChange fx = stage1({{3, 4}, {0, 0}});
    const FeatureChange fy = stage1({{6, 8}, {0, 0}});
    CHECK(masked_consistency(fx, fy, cfg_mode(LossMode::L2Mask)) == doctest::Approx(-1.0f).epsilon(1e-6));

    // Equal-weight positions, one aligned one orthogonal: -0.5.
    const FeatureChange fx2 = stage1({{1, 0}, {0, 1}});
    const FeatureChange fy2 = stage1({{1, 0}, {1, 0}});
    CHECK(masked_consistency(fx2, fy2, cfg_mode(LossMode::L2Mask)) == doctest::Approx(-0.5f).epsilon(1e-6));

    // Identical nonzero change across L stages: exactly -L.
    FeatureChange fx3 = stage1({{1, 2}, {3, -1}});
    fx3.stages.push_back(fx3.stages[0]);
    fx3.stages.push_back(fx3.stages[0]);
    CHECK(masked_consistency(fx3, fx3, cfg_mode(LossMode::L2Mask)) == doctest::Approx(-3.0f).epsilon(1e-6));
}

TEST_CASE("masked orthogonality hand cases") {
    const FeatureChange fx = stage1({{3, 4}, {0, 0}});
    const FeatureChange fy = stage1({{-4, 3}, {0, 0}});
    CHECK(masked_orthogonality(fx, fy, cfg_mode(LossMode::L2Mask)) == doctest::Approx(0.0f).epsilon(1e-6));

    FeatureChange fx2 = stage1({{1, 1}, {2, 0}});
    CHECK(masked_orthogonality(fx2, fx2, cfg_mode(LossMode::L2Mask)) == doctest::Approx(1.0f).epsilon(1e-6));

    // Bounds: score in [0, L] for random inputs.
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        FeatureChange a = stage1({{rng.normalf(), rng.normalf()}, {rng.normalf(), rng.normalf()}});
        FeatureChange b = stage1({{rng.normalf(), rng.normalf()}, {rng.normalf(), rng.normalf()}});
        for (const auto mode : {LossMode::L2Mask, LossMode::Pooled, LossMode::NoFoc}) {
            const float v = masked_orthogonality(a, b, cfg_mode(mode));
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f + 1e-6f);
        }
    }
}

TEST_CASE("pooled mode collapses positions before the cosine") {
    // Pooled means: (1.5, 2) vs (3, 4) are parallel: consistency -1.
    const FeatureChange fx = stage1({{3, 4}, {0, 0}});
    const FeatureChange fy = stage1({{6, 8}, {0, 0}});
    CHECK(masked_consistency(fx, fy, cfg_mode(LossMode::Pooled)) == doctest::Approx(-1.0f).epsilon(1e-6));
}

TEST_CASE("nofoc equals l2mask when the mask is uniform") {
    // Equal norms at every position make q constant.
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        auto rot = [&](float angle) {
            return std::vector<float>{2.0f * std::cos(angle), 2.0f * std::sin(angle)};
        };
        const FeatureChange fx = stage1({rot(rng.normalf()), rot(rng.normalf()), rot(rng.normalf())});
        const FeatureChange fy = stage1({rot(rng.normalf()), rot(rng.normalf()), rot(rng.normalf())});
        const float a = masked_consistency(fx, fy, cfg_mode(LossMode::L2Mask));
        const float b = masked_consistency(fx, fy, cfg_mode(LossMode::NoFoc));
        CHECK(a == doctest::Approx(b).epsilon(1e-6));
    }
}

TEST_CASE("degenerate stages contribute zero and raise the flag") {
    const FeatureChange zero = stage1({{0, 0}, {0, 0}});
    const FeatureChange fy = stage1({{1, 2}, {0, 1}});
    bool degenerate = false;
    CHECK(masked_consistency(zero, zero, cfg_mode(LossMode::L2Mask), &degenerate) == 0.0f);
    CHECK(degenerate);
    degenerate = false;
    masked_consistency(zero, fy, cfg_mode(LossMode::L2Mask), &degenerate);
    CHECK(!degenerate);  // only both-zero stages are flagged
}

TEST_CASE("scale invariance of the masked core") {
    Rng rng(7);
    FeatureChange fx = stage1({{rng.normalf(), rng.normalf()},
                               {rng.normalf(), rng.normalf()},
                               {rng.normalf(), rng.normalf()}});
    const FeatureChange fy = stage1({{rng.normalf(), rng.normalf()},
                                     {rng.normalf(), rng.normalf()},
                                     {rng.normalf(), rng.normalf()}});
    for (const auto mode : {LossMode::L2Mask, LossMode::Pooled, LossMode::NoFoc}) {
        const float base = masked_pair_score(fx.stages, fy.stages, mode, 1e-8f);
        FeatureChange scaled = fx;
        for (auto& e : scaled.stages[0].v) e *= 37.5f;
        const float after = masked_pair_score(scaled.stages, fy.stages, mode, 1e-8f);
        CHECK(after == doctest::Approx(base).epsilon(1e-5));
    }
}

TEST_CASE("graph and plain loss cores agree") {
    Rng rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        FeatureChange fx, fy;
        for (int l = 0; l < 2; ++l) {
            Tensor a({3, 3, 4}), b({3, 3, 4});
            for (auto& e : a.v) e = rng.normalf();
            for (auto& e : b.v) e = rng.normalf();
            fx.stages.push_back(std::move(a));
            fy.stages.push_back(std::move(b));
        }
        for (const auto mode : {LossMode::L2Mask, LossMode::Pooled, LossMode::NoFoc}) {
            const float plain = masked_pair_score(fx.stages, fy.stages, mode, 1e-8f);
            const float graph = graph_pair_score(fx, fy, mode, 1e-8f);
            CHECK(plain == doctest::Approx(graph).epsilon(1e-6));
        }
    }
}

TEST_CASE("prototype features and pt losses") {
    ToyWorldConfig wc;
    wc.image_size = 8;
    wc.stages = 1;
    const ToyWorld world(wc);
    Rng rng(11);
    PrototypeBank bank = PrototypeBank::init(3, 8, rng);

    // Zero pattern maps to the all-gray image.
    bank.patterns.fill(0.0f);
    const FeatureStack gray = prototype_features(bank, 0, world);
    const FeatureStack direct = world.extract_features(Image({8, 8, 3}));
    CHECK(gray.stages[0].v == direct.stages[0].v);

    // Saturated patterns behave like a +-1 image.
    bank.patterns.fill(1e9f);
    const FeatureStack sat = prototype_features(bank, 1, world);
    const FeatureStack ones = world.extract_features(Tensor::full({8, 8, 3}, 1.0f));
    for (std::size_t i = 0; i < sat.stages[0].size(); ++i)
        CHECK(sat.stages[0][i] == doctest::Approx(ones.stages[0][i]).epsilon(1e-5));

    // pt consistency with the prototype itself is -L; zero change flags.
    FeatureChange fx;
    fx.stages = sat.stages;
    LossConfig cfg;
    CHECK(pt_consistency(fx, sat, cfg) == doctest::Approx(-1.0f).epsilon(1e-6));
    FeatureChange zero;
    zero.stages.push_back(Tensor(sat.stages[0].shape));
    bool degenerate = false;
    pt_consistency(zero, FeatureStack{{Tensor(sat.stages[0].shape)}}, cfg, &degenerate);
    CHECK(degenerate);

    // pt orthogonality: with m=2 the mean over one term is the term itself.
    Rng rng2(13);
    PrototypeBank bank2 = PrototypeBank::init(2, 8, rng2);
    const LatentCodeExt w = broadcast(world.sample_w0(rng2), wc.k_layers);
    Modification mod;
    mod.delta = world.oracle_modification(0, 1.0f);
    const FeatureChange fchange = feature_change(w, mod, world);
    const float orth = pt_orthogonality(fchange, bank2, 0, cfg, world);
    const float direct_term = masked_pair_score(
        fchange.stages, prototype_features(bank2, 1, world).stages, cfg.mode, cfg.eps_q);
    CHECK(orth == doctest::Approx(direct_term).epsilon(1e-6));
    CHECK(orth >= 0.0f);
    CHECK(orth <= 1.0f + 1e-6f);

    // All prototypes identical: the contrast is independent of d.
    PrototypeBank bank3 = PrototypeBank::init(3, 8, rng2);
    for (int d = 1; d < 3; ++d)
        for (int i = 0; i < 8 * 8 * 3; ++i)
            bank3.patterns.at(d, i) = bank3.patterns.at(0, i);
    CHECK(pt_orthogonality(fchange, bank3, 0, cfg, world) ==
          doctest::Approx(pt_orthogonality(fchange, bank3, 2, cfg, world)).epsilon(1e-6));

    PrototypeBank bank1 = PrototypeBank::init(1, 8, rng2);
    CHECK_THROWS_AS(pt_orthogonality(fchange, bank1, 0, cfg, world), ConfigError);
}

TEST_CASE("feature_change matches the two-pass oracle and is antisymmetric") {
    ToyWorldConfig wc;
    const ToyWorld world(wc);
    Rng rng(15);
    const LatentCodeExt w = broadcast(world.sample_w0(rng), wc.k_layers);
    Modification mod;
    mod.delta = world.oracle_modification(2, 1.5f);

    const FeatureChange fc = feature_change(w, mod, world);

    // Oracle: two explicit forward passes subtracted.
    const LatentCodeExt w2 = apply(w, mod);
    const FeatureStack f1 = world.extract_features(world.render(w2));
    const FeatureStack f0 = world.extract_features(world.render(w));
    for (std::size_t l = 0; l < fc.stages.size(); ++l)
        for (std::size_t i = 0; i < fc.stages[l].size(); ++i)
            CHECK(fc.stages[l][i] == f1.stages[l][i] - f0.stages[l][i]);

    // Zero modification: all-zero change.
    Modification zero;
    zero.delta = Tensor({wc.k_layers, wc.n});
    const FeatureChange fz = feature_change(w, zero, world);
    for (const Tensor& st : fz.stages)
        for (float v : st.v) CHECK(v == 0.0f);

    // Antisymmetry: change at w equals minus the change at w+mod with -mod.
    Modification neg = mod;
    for (auto& e : neg.delta.v) e = -e;
    const FeatureChange back = feature_change(w2, neg, world);
    for (std::size_t l = 0; l < fc.stages.size(); ++l)
        for (std::size_t i = 0; i < fc.stages[l].size(); ++i)
            CHECK(back.stages[l][i] == doctest::Approx(-fc.stages[l][i]).epsilon(1e-6));
}

TEST_CASE("diversity counts ordered pairs") {
    Tensor a = Tensor::from({2}, {1.0f, 0.0f});
    Tensor b = Tensor::from({2}, {0.0f, 1.0f});
    CHECK(diversity({a, b}) == doctest::Approx(0.0f));
    CHECK(diversity({a, a}) == doctest::Approx(2.0f).epsilon(1e-6));
    CHECK(diversity({a, a, a}) == doctest::Approx(6.0f).epsilon(1e-6));
    const std::vector<Tensor> one = {a};
    CHECK_THROWS_AS(diversity(one), ConfigError);
}

TEST_CASE("total_loss composes terms and validates input") {
    ToyWorldConfig wc;
    wc.image_size = 8;
    wc.stages = 1;
    const ToyWorld world(wc);
    Rng rng(21);

    Tensor samples({2000, wc.n});
    for (int i = 0; i < 2000; ++i) {
        const LatentCode0 w0 = world.sample_w0(rng);
        for (int j = 0; j < wc.n; ++j) samples.at(i, j) = w0[static_cast<std::size_t>(j)];
    }
    const PcaBasis basis = compute_pca(samples);

    NavigatorParams params = NavigatorParams::init(3, 4, wc.k_layers, rng);
    TotalLossSetup setup;
    setup.basis_top_k = basis.top_k(4);
    setup.smoothing = smoothing_matrix(wc.k_layers, 1.0f, AttentionBoundary::Renorm);
    setup.loss.lambda = 0.01f;

    Batch batch;
    batch.d = 0;
    batch.d_alt = 2;
    for (int i = 0; i < 2; ++i) {
        BiPair pair;
        pair.x = broadcast(world.sample_w0(rng), wc.k_layers);
        pair.y = broadcast(world.sample_w0(rng), wc.k_layers);
        batch.items.push_back(std::move(pair));
    }

    const TotalLossResult res = total_loss(batch, params, nullptr, setup, world);
    CHECK(std::isfinite(res.loss));
    CHECK(res.loss == doctest::Approx(res.consistency + res.orthogonality +
                                      setup.loss.lambda * res.diversity).epsilon(1e-5));
    CHECK(res.consistency <= 0.0f);
    CHECK(res.orthogonality >= 0.0f);
    CHECK(res.consistency >= -1.0f);
    CHECK(res.orthogonality <= 1.0f);

    // Plain-path diversity agrees with the graph term.
    const auto dirs = directions(params, basis, 4, 1.0f);
    CHECK(res.diversity == doctest::Approx(diversity(dirs)).epsilon(1e-4));

    // Degenerate configs are rejected.
    NavigatorParams single = NavigatorParams::init(1, 4, wc.k_layers, rng);
    CHECK_THROWS_AS(total_loss(batch, single, nullptr, setup, world), ConfigError);
    TotalLossSetup pt_setup = setup;
    pt_setup.loss.variant = LossVariant::Pt;
    CHECK_THROWS_AS(total_loss(batch, params, nullptr, pt_setup, world), ConfigError);
}

TEST_CASE("diversity dominates gradients in the large-lambda limit") {
    ToyWorldConfig wc;
    wc.image_size = 8;
    wc.stages = 1;
    const ToyWorld world(wc);
    Rng rng(23);
    Tensor samples({500, wc.n});
    for (int i = 0; i < 500; ++i) {
        const LatentCode0 w0 = world.sample_w0(rng);
        for (int j = 0; j < wc.n; ++j) samples.at(i, j) = w0[static_cast<std::size_t>(j)];
    }
    const PcaBasis basis = compute_pca(samples);
    NavigatorParams params = NavigatorParams::init(3, 4, wc.k_layers, rng);

    TotalLossSetup setup;
    setup.basis_top_k = basis.top_k(4);
    setup.smoothing = smoothing_matrix(wc.k_layers, 1.0f, AttentionBoundary::Renorm);

    Batch batch;
    batch.d = 0;
    batch.d_alt = 1;
    BiPair pair;
    pair.x = broadcast(world.sample_w0(rng), wc.k_layers);
    pair.y = broadcast(world.sample_w0(rng), wc.k_layers);
    batch.items.push_back(std::move(pair));

    setup.loss.lambda = 0.0f;
    const TotalLossResult base = total_loss(batch, params, nullptr, setup, world);
    setup.loss.lambda = 1e6f;
    const TotalLossResult big = total_loss(batch, params, nullptr, setup, world);

    // With huge lambda the v_sub gradient is essentially the diversity part.
    float diff = 0.0f, scale = 0.0f;
    for (std::size_t i = 0; i < big.grad_v_sub.size(); ++i) {
        scale += big.grad_v_sub[i] * big.grad_v_sub[i];
        const float d = big.grad_v_sub[i] - base.grad_v_sub[i];
        diff += d * d;
    }
    CHECK(std::sqrt(diff / scale) > 0.99f);
}

TEST_CASE("total_loss gradients match finite differences for both variants and all modes") {
    ToyWorldConfig wc;
    wc.image_size = 8;
    wc.stages = 1;
    const ToyWorld world(wc);
    Rng rng(25);
    Tensor samples({500, wc.n});
    for (int i = 0; i < 500; ++i) {
        const LatentCode0 w0 = world.sample_w0(rng);
        for (int j = 0; j < wc.n; ++j) samples.at(i, j) = w0[static_cast<std::size_t>(j)];
    }
    const PcaBasis basis = compute_pca(samples);

    for (const auto variant : {LossVariant::Bi, LossVariant::Pt}) {
        for (const auto mode : {LossMode::L2Mask, LossMode::Pooled, LossMode::NoFoc}) {
            NavigatorParams params = NavigatorParams::init(3, 4, wc.k_layers, rng);
            PrototypeBank bank = PrototypeBank::init(3, wc.image_size, rng);
            for (auto& e : bank.patterns.v) e = 0.3f * rng.normalf();

            TotalLossSetup setup;
            setup.loss.variant = variant;
            setup.loss.mode = mode;
            setup.loss.lambda = 0.01f;
            setup.strength = 2.5f;  // keeps attention gradients well above fd noise
            setup.basis_top_k = basis.top_k(4);
            setup.smoothing = smoothing_matrix(wc.k_layers, 1.0f, AttentionBoundary::Renorm);

            Batch batch;
            batch.d = 1;
            batch.d_alt = 2;
            BiPair pair;
            pair.x = broadcast(world.sample_w0(rng), wc.k_layers);
            pair.y = broadcast(world.sample_w0(rng), wc.k_layers);
            batch.items.push_back(std::move(pair));

            const PrototypeBank* bank_ptr = variant == LossVariant::Pt ? &bank : nullptr;
            const TotalLossResult res = total_loss(batch, params, bank_ptr, setup, world);
            auto loss_of = [&]() { return total_loss(batch, params, bank_ptr, setup, world).loss; };

            CHECK(testutil::fd_check(params.v_sub, res.grad_v_sub, loss_of).ok());
            CHECK(testutil::fd_check(params.att_logits, res.grad_att, loss_of, 0.05f).ok());
            if (variant == LossVariant::Pt) {
                std::vector<std::size_t> subset;
                for (int i = 0; i < 40; ++i) subset.push_back(rng.below(bank.patterns.size()));
                CHECK(testutil::fd_check(bank.patterns, res.grad_protos, loss_of, 0.02f, &subset).ok());
            }
        }
    }
}

TEST_SUITE_END();
