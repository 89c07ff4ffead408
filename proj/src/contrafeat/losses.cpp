#include "losses.hpp"

#include <cmath>

#include "errors.hpp"

namespace contrafeat {

LossMode loss_mode_from_string(const std::string& s) {
    if (s == "l2mask") return LossMode::L2Mask;
    if (s == "pooled") return LossMode::Pooled;
    if (s == "nofoc") return LossMode::NoFoc;
    throw ConfigError("unknown loss mode '" + s + "'");
}

LossVariant loss_variant_from_string(const std::string& s) {
    if (s == "bi") return LossVariant::Bi;
    if (s == "pt") return LossVariant::Pt;
    throw ConfigError("unknown loss variant '" + s + "'");
}

std::string to_string(LossMode m) {
    switch (m) {
        case LossMode::L2Mask: return "l2mask";
        case LossMode::Pooled: return "pooled";
        default: return "nofoc";
    }
}

std::string to_string(LossVariant v) { return v == LossVariant::Bi ? "bi" : "pt"; }

PrototypeBank PrototypeBank::init(int m, int image_size, Rng& rng) {
    PrototypeBank bank;
    bank.image_size = image_size;
    bank.patterns = Tensor({m, image_size * image_size * 3});
    for (auto& e : bank.patterns.v) e = 0.1f * rng.normalf();
    return bank;
}

Tensor PrototypeBank::pattern(int d) const {
    if (d < 0 || d >= m()) throw ConfigError("prototype bank: index out of range");
    Tensor out({image_size, image_size, 3});
    const std::size_t len = out.size();
    for (std::size_t i = 0; i < len; ++i) out[i] = patterns.v[static_cast<std::size_t>(d) * len + i];
    return out;
}

FeatureChange feature_change(const LatentCodeExt& w, const Modification& mod,
                             const ToyWorld& world) {
    const LatentCodeExt w_mod = apply(w, mod);
    const FeatureStack f1 = world.extract_features(world.render(w_mod));
    const FeatureStack f0 = world.extract_features(world.render(w));
    FeatureChange out;
    out.direction_index = mod.direction_index;
    for (std::size_t l = 0; l < f0.stages.size(); ++l) {
        Tensor d = f1.stages[l];
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= f0.stages[l][i];
        out.stages.push_back(std::move(d));
    }
    return out;
}

namespace {

bool stage_is_zero(const Tensor& t) {
    for (float x : t.v)
        if (x != 0.0f) return false;
    return true;
}

float stage_score(const Tensor& a, const Tensor& b, LossMode mode, float eps) {
    const int c = a.dim(a.ndim() - 1);
    const int s = static_cast<int>(a.size()) / c;
    auto at = [&](const Tensor& t, int i) { return &t.v[static_cast<std::size_t>(i) * c]; };

    if (mode == LossMode::Pooled) {
        std::vector<float> xb(static_cast<std::size_t>(c), 0.0f), yb(static_cast<std::size_t>(c), 0.0f);
        for (int i = 0; i < s; ++i)
            for (int j = 0; j < c; ++j) {
                xb[static_cast<std::size_t>(j)] += at(a, i)[j];
                yb[static_cast<std::size_t>(j)] += at(b, i)[j];
            }
        for (int j = 0; j < c; ++j) {
            xb[static_cast<std::size_t>(j)] /= static_cast<float>(s);
            yb[static_cast<std::size_t>(j)] /= static_cast<float>(s);
        }
        const float d = dot(xb.data(), yb.data(), xb.size());
        const float nx = dot(xb.data(), xb.data(), xb.size());
        const float ny = dot(yb.data(), yb.data(), yb.size());
        return d * d / (nx * ny + eps);
    }

    std::vector<float> cos2(static_cast<std::size_t>(s));
    std::vector<float> nmx(static_cast<std::size_t>(s)), nmy(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) {
        const float* pa = at(a, i);
        const float* pb = at(b, i);
        const float d = dot(pa, pb, static_cast<std::size_t>(c));
        const float na = dot(pa, pa, static_cast<std::size_t>(c));
        const float nb = dot(pb, pb, static_cast<std::size_t>(c));
        cos2[static_cast<std::size_t>(i)] = d * d / (na * nb + eps);
        nmx[static_cast<std::size_t>(i)] = std::sqrt(na + 1e-12f);
        nmy[static_cast<std::size_t>(i)] = std::sqrt(nb + 1e-12f);
    }
    if (mode == LossMode::NoFoc) {
        float sum = 0.0f;
        for (float v : cos2) sum += v;
        return sum / static_cast<float>(s);
    }
    float mx = 0.0f, my = 0.0f;
    for (int i = 0; i < s; ++i) {
        mx = std::max(mx, nmx[static_cast<std::size_t>(i)]);
        my = std::max(my, nmy[static_cast<std::size_t>(i)]);
    }
    float q_sum = 0.0f, acc = 0.0f;
    for (int i = 0; i < s; ++i) {
        const float q = (nmx[static_cast<std::size_t>(i)] / (mx + eps)) * (nmy[static_cast<std::size_t>(i)] / (my + eps));
        q_sum += q;
        acc += q * cos2[static_cast<std::size_t>(i)];
    }
    return acc / (q_sum + eps);
}

}  // namespace

float masked_pair_score(const std::vector<Tensor>& a, const std::vector<Tensor>& b, LossMode mode,
                        float eps_q, bool* degenerate) {
    if (a.size() != b.size()) throw ConfigError("masked_pair_score: stage count mismatch");
    if (degenerate) *degenerate = false;
    float total = 0.0f;
    for (std::size_t l = 0; l < a.size(); ++l) {
        if (!a[l].same_shape(b[l])) throw ConfigError("masked_pair_score: stage shape mismatch");
        if (stage_is_zero(a[l]) && stage_is_zero(b[l])) {
            if (degenerate) *degenerate = true;
            continue;
        }
        total += stage_score(a[l], b[l], mode, eps_q);
    }
    return total;
}

float masked_consistency(const FeatureChange& fx, const FeatureChange& fy, const LossConfig& cfg,
                         bool* degenerate) {
    return -masked_pair_score(fx.stages, fy.stages, cfg.mode, cfg.eps_q, degenerate);
}

float masked_orthogonality(const FeatureChange& fx, const FeatureChange& fy, const LossConfig& cfg,
                           bool* degenerate) {
    return masked_pair_score(fx.stages, fy.stages, cfg.mode, cfg.eps_q, degenerate);
}

FeatureStack prototype_features(const PrototypeBank& bank, int d, const ToyWorld& world) {
    Tensor img = bank.pattern(d);
    for (auto& e : img.v) e = std::tanh(e);
    return world.extract_features(img);
}

float pt_consistency(const FeatureChange& fx, const FeatureStack& proto, const LossConfig& cfg,
                     bool* degenerate) {
    return -masked_pair_score(fx.stages, proto.stages, cfg.mode, cfg.eps_q, degenerate);
}

float pt_orthogonality(const FeatureChange& fx, const PrototypeBank& bank, int d,
                       const LossConfig& cfg, const ToyWorld& world) {
    const int m = bank.m();
    if (m < 2) throw ConfigError("pt_orthogonality: need at least 2 directions");
    float sum = 0.0f;
    for (int other = 0; other < m; ++other) {
        if (other == d) continue;
        const FeatureStack proto = prototype_features(bank, other, world);
        sum += masked_pair_score(fx.stages, proto.stages, cfg.mode, cfg.eps_q);
    }
    return sum / static_cast<float>(m - 1);
}

float diversity(const std::vector<Tensor>& dirs) {
    const int m = static_cast<int>(dirs.size());
    if (m < 2) throw ConfigError("diversity: need at least 2 directions");
    float sum = 0.0f;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            const float d = dot(dirs[static_cast<std::size_t>(i)].data(), dirs[static_cast<std::size_t>(j)].data(),
                                dirs[static_cast<std::size_t>(i)].size());
            const float ni = dot(dirs[static_cast<std::size_t>(i)].data(), dirs[static_cast<std::size_t>(i)].data(),
                                 dirs[static_cast<std::size_t>(i)].size());
            const float nj = dot(dirs[static_cast<std::size_t>(j)].data(), dirs[static_cast<std::size_t>(j)].data(),
                                 dirs[static_cast<std::size_t>(j)].size());
            sum += 2.0f * (d * d) / (ni * nj + 1e-12f);
        }
    return sum;
}

namespace {

int stage_score_op(ad::Graph& g, int a, int b, LossMode mode, float eps) {
    const Tensor& va = g.val(a);
    const int c = va.dim(va.ndim() - 1);
    const int s = static_cast<int>(va.size()) / c;
    const int a2 = g.reshape(a, {s, c});
    const int b2 = g.reshape(b, {s, c});

    if (mode == LossMode::Pooled) {
        const int xb = g.reshape(g.mean_rows(a2), {1, c});
        const int yb = g.reshape(g.mean_rows(b2), {1, c});
        const int d = g.dot_rows(xb, yb);
        const int den = g.mul(g.sqnorm_rows(xb), g.sqnorm_rows(yb));
        return g.reshape(g.div_eps(g.square(d), den, eps), {1});
    }

    const int dots = g.dot_rows(a2, b2);
    const int na = g.sqnorm_rows(a2);
    const int nb = g.sqnorm_rows(b2);
    const int cos2 = g.div_eps(g.square(dots), g.mul(na, nb), eps);
    if (mode == LossMode::NoFoc) return g.mean_all(cos2);

    const int nmx = g.sqrt_eps(na, 1e-12f);
    const int nmy = g.sqrt_eps(nb, 1e-12f);
    const int qx = g.div_by_scalar(nmx, g.max_all(nmx), eps);
    const int qy = g.div_by_scalar(nmy, g.max_all(nmy), eps);
    const int q = g.mul(qx, qy);
    const int weighted = g.sum_all(g.mul(q, cos2));
    return g.div_by_scalar(weighted, g.sum_all(q), eps);
}

}  // namespace

int masked_score_op(ad::Graph& g, const std::vector<int>& a, const std::vector<int>& b,
                    LossMode mode, float eps_q) {
    std::vector<std::pair<int, float>> terms;
    for (std::size_t l = 0; l < a.size(); ++l)
        terms.emplace_back(stage_score_op(g, a[l], b[l], mode, eps_q), 1.0f);
    return g.weighted_sum(terms);
}

int diversity_op(ad::Graph& g, const std::vector<int>& dirs) {
    const int m = static_cast<int>(dirs.size());
    const int n = g.val(dirs[0]).dim(0);
    std::vector<std::pair<int, float>> terms;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            const int vi = g.reshape(dirs[static_cast<std::size_t>(i)], {1, n});
            const int vj = g.reshape(dirs[static_cast<std::size_t>(j)], {1, n});
            const int d = g.dot_rows(vi, vj);
            const int den = g.mul(g.sqnorm_rows(vi), g.sqnorm_rows(vj));
            terms.emplace_back(g.reshape(g.div_eps(g.square(d), den, 1e-12f), {1}), 2.0f);
        }
    return g.weighted_sum(terms);
}

TotalLossResult total_loss(const Batch& batch, const NavigatorParams& params,
                           const PrototypeBank* bank, const TotalLossSetup& setup,
                           const ToyWorld& world) {
    const int m = params.m();
    const int k_layers = world.config().k_layers;
    const int n = world.config().n;
    if (m < 2) throw ConfigError("total_loss: need at least 2 directions");
    if (setup.loss.variant == LossVariant::Pt && bank == nullptr)
        throw ConfigError("total_loss: pt variant requires a prototype bank");
    if (batch.items.empty()) throw ConfigError("total_loss: empty batch");
    if (batch.d == batch.d_alt && setup.loss.variant == LossVariant::Bi)
        throw ConfigError("total_loss: d and d_alt must differ");

    ad::Graph g;
    const int v_sub_id = g.input(params.v_sub);
    const int att_id = g.input(params.att_logits);
    int proto_id = -1;
    if (setup.loss.variant == LossVariant::Pt) proto_id = g.input(bank->patterns);

    // Directions and attentions for every d (diversity needs all of them).
    std::vector<int> dir_ids(static_cast<std::size_t>(m)), att_ids(static_cast<std::size_t>(m));
    for (int d = 0; d < m; ++d) {
        if (setup.frozen_directions) {
            Tensor dir({n});
            for (int j = 0; j < n; ++j) dir[static_cast<std::size_t>(j)] = setup.frozen_directions->at(d, j);
            dir_ids[static_cast<std::size_t>(d)] = g.constant(std::move(dir));
        } else {
            dir_ids[static_cast<std::size_t>(d)] =
                direction_op(g, g.row(v_sub_id, d), setup.basis_top_k, setup.dir_length);
        }
        if (setup.freeze_attention) {
            Tensor uniform({k_layers});
            uniform.fill(1.0f / static_cast<float>(k_layers));
            att_ids[static_cast<std::size_t>(d)] = g.constant(std::move(uniform));
        } else {
            att_ids[static_cast<std::size_t>(d)] = attention_op(g, g.row(att_id, d), setup.smoothing);
        }
    }

    auto build_change = [&](const LatentCodeExt& w, int mod_id) {
        const int w_id = g.constant(w);
        const int img = world.render_op(g, g.add(w_id, mod_id));
        std::vector<int> stages = world.extract_ops(g, img);
        const FeatureStack base = world.extract_features(world.render(w));
        for (std::size_t l = 0; l < stages.size(); ++l)
            stages[l] = g.sub(stages[l], g.constant(base.stages[l]));
        return stages;
    };

    const int mod_d = modification_op(g, att_ids[static_cast<std::size_t>(batch.d)],
                                      dir_ids[static_cast<std::size_t>(batch.d)], setup.strength);
    int mod_alt = -1;
    if (setup.loss.variant == LossVariant::Bi)
        mod_alt = modification_op(g, att_ids[static_cast<std::size_t>(batch.d_alt)],
                                  dir_ids[static_cast<std::size_t>(batch.d_alt)], setup.strength);

    std::vector<std::vector<int>> proto_stages;
    if (setup.loss.variant == LossVariant::Pt) {
        const int hw = bank->image_size;
        for (int d = 0; d < m; ++d) {
            const int img = g.tanh_op(g.reshape(g.row(proto_id, d), {hw, hw, 3}));
            proto_stages.push_back(world.extract_ops(g, img));
        }
    }

    const float item_w = 1.0f / static_cast<float>(batch.items.size());
    std::vector<std::pair<int, float>> cons_terms, orth_terms;
    for (const BiPair& item : batch.items) {
        const std::vector<int> fx = build_change(item.x, mod_d);
        if (setup.loss.variant == LossVariant::Bi) {
            const std::vector<int> fy = build_change(item.y, mod_d);
            const std::vector<int> fy_alt = build_change(item.y, mod_alt);
            cons_terms.emplace_back(masked_score_op(g, fx, fy, setup.loss.mode, setup.loss.eps_q),
                                    -item_w);
            orth_terms.emplace_back(masked_score_op(g, fx, fy_alt, setup.loss.mode, setup.loss.eps_q),
                                    item_w);
        } else {
            cons_terms.emplace_back(
                masked_score_op(g, fx, proto_stages[static_cast<std::size_t>(batch.d)], setup.loss.mode,
                                setup.loss.eps_q),
                -item_w);
            const float ow = item_w / static_cast<float>(m - 1);
            for (int other = 0; other < m; ++other) {
                if (other == batch.d) continue;
                orth_terms.emplace_back(
                    masked_score_op(g, fx, proto_stages[static_cast<std::size_t>(other)], setup.loss.mode,
                                    setup.loss.eps_q),
                    ow);
            }
        }
    }

    const int cons_id = g.weighted_sum(cons_terms);
    const int orth_id = g.weighted_sum(orth_terms);
    const int div_id = diversity_op(g, dir_ids);
    const int loss_id =
        g.weighted_sum({{cons_id, 1.0f}, {orth_id, 1.0f}, {div_id, setup.loss.lambda}});

    g.backward(loss_id);

    TotalLossResult res;
    res.loss = g.val(loss_id)[0];
    res.consistency = g.val(cons_id)[0];
    res.orthogonality = g.val(orth_id)[0];
    res.diversity = g.val(div_id)[0];
    res.grad_v_sub = g.grad(v_sub_id);
    res.grad_att = g.grad(att_id);
    if (proto_id >= 0) res.grad_protos = g.grad(proto_id);
    return res;
}

}  // namespace contrafeat
