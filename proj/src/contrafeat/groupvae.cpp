#include "groupvae.hpp"

#include <cmath>

#include "errors.hpp"
#include "latent.hpp"

namespace contrafeat {

std::pair<GaussianPosterior, GaussianPosterior> merge_posteriors(const GaussianPosterior& pa,
                                                                 const GaussianPosterior& pb,
                                                                 const std::vector<bool>& shared_mask) {
    const std::size_t q = pa.mean.size();
    if (pb.mean.size() != q || pa.variance.size() != q || pb.variance.size() != q ||
        shared_mask.size() != q)
        throw ConfigError("merge_posteriors: dimension mismatch");
    GaussianPosterior qa = pa, qb = pb;
    for (std::size_t i = 0; i < q; ++i) {
        if (!shared_mask[i]) continue;
        const float mean = 0.5f * (pa.mean[i] + pb.mean[i]);
        const float var = 0.5f * (pa.variance[i] + pb.variance[i]);
        qa.mean[i] = qb.mean[i] = mean;
        qa.variance[i] = qb.variance[i] = var;
    }
    return {qa, qb};
}

LatentCodeExt PairedDataset::code_b(std::size_t i) const {
    LatentCodeExt w = codes_a[i];
    const Tensor& mod = mods[static_cast<std::size_t>(varied[i])];
    for (std::size_t j = 0; j < w.size(); ++j) w[j] += strength * mod[j];
    return w;
}

PairedSample PairedDataset::pair(std::size_t i) const {
    PairedSample s;
    s.image_a = world->render(codes_a[i]);
    s.image_b = world->render(code_b(i));
    s.varied_index = varied[i];
    return s;
}

PairedDataset build_pair_dataset(const std::vector<Tensor>& mods, const ToyWorld& world, int count,
                                 float strength, Rng& rng) {
    if (mods.empty() || count < 1) throw ConfigError("build_pair_dataset: bad arguments");
    PairedDataset ds;
    ds.mods = mods;
    ds.strength = strength;
    ds.world = &world;
    const int m = static_cast<int>(mods.size());
    for (int i = 0; i < count; ++i) {
        ds.codes_a.push_back(broadcast(world.sample_w0(rng), world.config().k_layers));
        ds.varied.push_back(i % m);
    }
    return ds;
}

namespace {

Tensor conv_init(int co, int ci, Rng& rng) {
    Tensor w({co, 3, 3, ci});
    const float std = std::sqrt(1.0f / (9.0f * static_cast<float>(ci)));
    for (auto& e : w.v) e = rng.normalf() * std;
    return w;
}

Tensor linear_init(int out, int in, Rng& rng) {
    Tensor w({out, in});
    const float std = std::sqrt(1.0f / static_cast<float>(in));
    for (auto& e : w.v) e = rng.normalf() * std;
    return w;
}

}  // namespace

VaeParams VaeParams::init(const VaeSpec& spec, Rng& rng) {
    if (spec.image_size % 8 != 0) throw ConfigError("vae: image size must be divisible by 8");
    const int mid = spec.image_size / 8;
    const int flat = mid * mid * 64;
    VaeParams p;
    p.w1 = conv_init(16, 3, rng);
    p.b1 = Tensor({16});
    p.w2 = conv_init(32, 16, rng);
    p.b2 = Tensor({32});
    p.w3 = conv_init(64, 32, rng);
    p.b3 = Tensor({64});
    p.w_mu = linear_init(spec.latent_dim, flat, rng);
    p.b_mu = Tensor({spec.latent_dim});
    p.w_lv = linear_init(spec.latent_dim, flat, rng);
    p.b_lv = Tensor({spec.latent_dim});
    p.w_dec = linear_init(flat, spec.latent_dim, rng);
    p.b_dec = Tensor({flat});
    p.u1 = conv_init(32, 64, rng);
    p.c1 = Tensor({32});
    p.u2 = conv_init(16, 32, rng);
    p.c2 = Tensor({16});
    p.u3 = conv_init(8, 16, rng);
    p.c3 = Tensor({8});
    p.u4 = conv_init(3, 8, rng);
    p.c4 = Tensor({3});
    return p;
}

std::vector<std::pair<const char*, Tensor*>> VaeParams::named() {
    return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}, {"w3", &w3}, {"b3", &b3},
            {"w_mu", &w_mu}, {"b_mu", &b_mu}, {"w_lv", &w_lv}, {"b_lv", &b_lv},
            {"w_dec", &w_dec}, {"b_dec", &b_dec}, {"u1", &u1}, {"c1", &c1}, {"u2", &u2},
            {"c2", &c2}, {"u3", &u3}, {"c3", &c3}, {"u4", &u4}, {"c4", &c4}};
}

VaeNodeIds register_vae(ad::Graph& g, VaeParams& p) {
    VaeNodeIds ids;
    ids.w1 = g.input(p.w1);
    ids.b1 = g.input(p.b1);
    ids.w2 = g.input(p.w2);
    ids.b2 = g.input(p.b2);
    ids.w3 = g.input(p.w3);
    ids.b3 = g.input(p.b3);
    ids.w_mu = g.input(p.w_mu);
    ids.b_mu = g.input(p.b_mu);
    ids.w_lv = g.input(p.w_lv);
    ids.b_lv = g.input(p.b_lv);
    ids.w_dec = g.input(p.w_dec);
    ids.b_dec = g.input(p.b_dec);
    ids.u1 = g.input(p.u1);
    ids.c1 = g.input(p.c1);
    ids.u2 = g.input(p.u2);
    ids.c2 = g.input(p.c2);
    ids.u3 = g.input(p.u3);
    ids.c3 = g.input(p.c3);
    ids.u4 = g.input(p.u4);
    ids.c4 = g.input(p.c4);
    return ids;
}

std::pair<int, int> encode_op(ad::Graph& g, const VaeNodeIds& ids, const VaeSpec& spec, int img) {
    int x = g.tanh_op(g.conv2d(img, ids.w1, ids.b1, 2, 1));
    x = g.tanh_op(g.conv2d(x, ids.w2, ids.b2, 2, 1));
    x = g.tanh_op(g.conv2d(x, ids.w3, ids.b3, 2, 1));
    const int mid = spec.image_size / 8;
    x = g.reshape(x, {mid * mid * 64});
    const int mu = g.linear(ids.w_mu, ids.b_mu, x);
    const int lv = g.linear(ids.w_lv, ids.b_lv, x);
    return {mu, lv};
}

int decode_op(ad::Graph& g, const VaeNodeIds& ids, const VaeSpec& spec, int z) {
    const int mid = spec.image_size / 8;
    int x = g.tanh_op(g.linear(ids.w_dec, ids.b_dec, z));
    x = g.reshape(x, {mid, mid, 64});
    x = g.tanh_op(g.conv2d(g.upsample2x(x), ids.u1, ids.c1, 1, 1));
    x = g.tanh_op(g.conv2d(g.upsample2x(x), ids.u2, ids.c2, 1, 1));
    x = g.tanh_op(g.conv2d(g.upsample2x(x), ids.u3, ids.c3, 1, 1));
    x = g.tanh_op(g.conv2d(x, ids.u4, ids.c4, 1, 1));
    return x;
}

namespace {

// 0.5 * sum(mu^2 + v - ln v - 1)
int kl_op(ad::Graph& g, int mu, int var) {
    const int q = g.val(mu).dim(0);
    Tensor ones({q});
    ones.fill(1.0f);
    const int t = g.sub(g.add(g.square(mu), var), g.add_cvec(g.log_eps(var, 1e-12f), std::move(ones)));
    return g.scale(g.sum_all(t), 0.5f);
}

}  // namespace

int pair_elbo_op(ad::Graph& g, const VaeNodeIds& ids, const VaeSpec& spec, const Image& a,
                 const Image& b, const std::vector<float>& shared_mask, const Tensor& noise_a,
                 const Tensor& noise_b) {
    const int q = spec.latent_dim;
    const int ia = g.constant(a);
    const int ib = g.constant(b);
    auto [mu_a, lv_a] = encode_op(g, ids, spec, ia);
    auto [mu_b, lv_b] = encode_op(g, ids, spec, ib);
    const int var_a = g.exp_op(lv_a);
    const int var_b = g.exp_op(lv_b);

    Tensor mask({q}), inv_mask({q});
    for (int i = 0; i < q; ++i) {
        mask[static_cast<std::size_t>(i)] = shared_mask[static_cast<std::size_t>(i)];
        inv_mask[static_cast<std::size_t>(i)] = 1.0f - shared_mask[static_cast<std::size_t>(i)];
    }
    auto merge = [&](int own, int other) {
        const int avg = g.scale(g.add(own, other), 0.5f);
        return g.add(g.mul_cvec(own, inv_mask), g.mul_cvec(avg, mask));
    };
    const int mu_ma = merge(mu_a, mu_b);
    const int mu_mb = merge(mu_b, mu_a);
    const int var_ma = merge(var_a, var_b);
    const int var_mb = merge(var_b, var_a);

    const int z_a = g.add(mu_ma, g.mul_cvec(g.sqrt_eps(var_ma, 1e-12f), noise_a));
    const int z_b = g.add(mu_mb, g.mul_cvec(g.sqrt_eps(var_mb, 1e-12f), noise_b));
    const int rec_a = g.scale(g.sum_all(g.square(g.sub(decode_op(g, ids, spec, z_a), ia))), 0.5f);
    const int rec_b = g.scale(g.sum_all(g.square(g.sub(decode_op(g, ids, spec, z_b), ib))), 0.5f);
    const int kl_a = kl_op(g, mu_ma, var_ma);
    const int kl_b = kl_op(g, mu_mb, var_mb);
    return g.weighted_sum({{rec_a, 1.0f}, {rec_b, 1.0f}, {kl_a, 1.0f}, {kl_b, 1.0f}});
}

std::vector<float> encode_mean(const VaeParams& p, const VaeSpec& spec, const Image& img) {
    Tensor x = img;
    const Tensor* convs[3] = {&p.w1, &p.w2, &p.w3};
    const Tensor* biases[3] = {&p.b1, &p.b2, &p.b3};
    for (int l = 0; l < 3; ++l) {
        const int h = x.dim(0), w = x.dim(1), ci = x.dim(2), co = convs[l]->dim(0);
        const int ho = ad::conv_out(h, 2, 1), wo = ad::conv_out(w, 2, 1);
        Tensor y({ho, wo, co});
        ad::conv2d_fwd(x.data(), h, w, ci, convs[l]->data(), co, 2, 1, biases[l]->data(), y.data(),
                       ho, wo);
        for (auto& e : y.v) e = std::tanh(e);
        x = std::move(y);
    }
    const int q = spec.latent_dim;
    std::vector<float> mu(static_cast<std::size_t>(q));
    for (int i = 0; i < q; ++i)
        mu[static_cast<std::size_t>(i)] =
            p.b_mu[static_cast<std::size_t>(i)] +
            dot(&p.w_mu.v[static_cast<std::size_t>(i) * x.size()], x.data(), x.size());
    return mu;
}

VaeModel train_group_vae(const PairedDataset& dataset, const VaeSpec& spec,
                         const VaeTrainConfig& cfg) {
    if (dataset.size() == 0) throw ConfigError("train_group_vae: empty dataset");
    Rng rng(cfg.seed);
    VaeModel model;
    model.spec = spec;
    model.params = VaeParams::init(spec, rng);

    std::vector<AdamState> adam;
    auto named = model.params.named();
    for (auto& [name, t] : named) adam.push_back(AdamState::for_param(*t));

    const float px_scale = 1.0f / static_cast<float>(spec.image_size * spec.image_size * 3);
    for (int step = 0; step < cfg.steps; ++step) {
        ad::Graph g;
        VaeNodeIds ids = register_vae(g, model.params);
        std::vector<std::pair<int, float>> terms;
        for (int i = 0; i < cfg.batch_size; ++i) {
            const std::size_t idx = static_cast<std::size_t>(rng.below(dataset.size()));
            const PairedSample s = dataset.pair(idx);
            std::vector<float> mask(static_cast<std::size_t>(spec.latent_dim), 0.0f);
            if (cfg.group_merge) {
                for (auto& e : mask) e = 1.0f;
                mask[static_cast<std::size_t>(s.varied_index % spec.latent_dim)] = 0.0f;
            }
            Tensor na({spec.latent_dim}), nb({spec.latent_dim});
            for (auto& e : na.v) e = rng.normalf();
            for (auto& e : nb.v) e = rng.normalf();
            terms.emplace_back(pair_elbo_op(g, ids, spec, s.image_a, s.image_b, mask, na, nb),
                               px_scale / static_cast<float>(cfg.batch_size));
        }
        const int loss_id = g.weighted_sum(terms);
        const float loss = g.val(loss_id)[0];
        if (!std::isfinite(loss))
            throw NumericalError("group_vae: non-finite loss at step " + std::to_string(step));
        g.backward(loss_id);

        const std::vector<int> id_list = ids.list();
        for (std::size_t t = 0; t < named.size(); ++t)
            adam[t].step(*named[t].second, g.grad(id_list[t]), cfg.lr, 0.9f, 0.999f, 1e-8f);
        model.loss_trace.push_back(loss);
    }
    return model;
}

}  // namespace contrafeat
