#include "toyworld.hpp"
#include <cstdlib>

#include <cmath>

#include "errors.hpp"
#include "rng.hpp"

namespace contrafeat {

namespace {

constexpr float kTwoThirdsPi = 2.0943951023931953f;
constexpr float kPhase[3] = {0.0f, -kTwoThirdsPi, kTwoThirdsPi};

float tex_knob(const char* name, float fallback) {
    const char* s = std::getenv(name);
    return s ? std::strtof(s, nullptr) : fallback;
}

// Gram-Schmidt a fresh unit vector against `prev`, drawing candidates
// through `draw` until the residual is well-conditioned.
template <typename DrawFn>
Tensor orthonormal_draw(const std::vector<Tensor>& prev, DrawFn&& draw) {
    for (;;) {
        Tensor v = draw();
        for (const Tensor& p : prev) {
            const float d = dot(v.data(), p.data(), v.size());
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * p[i];
        }
        const float nrm = norm2(v.data(), v.size());
        if (nrm > 1e-4f) {
            for (auto& e : v.v) e /= nrm;
            return v;
        }
    }
}

}  // namespace

ToyWorld::ToyWorld(const ToyWorldConfig& cfg) : cfg_(cfg) {
    if (cfg.z_dim < 2 || cfg.n < cfg.z_dim || cfg.k_layers < 3 || cfg.image_size < 8 ||
        cfg.stages < 1)
        throw ConfigError("toyworld: invalid dimensions");

    Rng rng(cfg.world_seed);
    const int n = cfg.n, zd = cfg.z_dim;

    auto gauss = [&rng](int len) {
        Tensor t({len});
        for (auto& e : t.v) e = rng.normalf();
        return t;
    };

    // M = U diag(sigma) V^T with orthonormal U (n x zd), orthogonal V (zd x zd)
    // and singular values decaying geometrically from 3.0 to 0.05.
    std::vector<Tensor> ucols, vcols;
    for (int j = 0; j < zd; ++j) ucols.push_back(orthonormal_draw(ucols, [&] { return gauss(n); }));
    for (int j = 0; j < zd; ++j) vcols.push_back(orthonormal_draw(vcols, [&] { return gauss(zd); }));
    sing_.resize(static_cast<std::size_t>(zd));
    for (int i = 0; i < zd; ++i)
        sing_[static_cast<std::size_t>(i)] =
            3.0f * std::pow(0.05f / 3.0f, static_cast<float>(i) / static_cast<float>(zd - 1));

    mapping_ = Tensor({n, zd});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < zd; ++j) {
            float s = 0.0f;
            for (int k = 0; k < zd; ++k)
                s += ucols[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] * sing_[static_cast<std::size_t>(k)] *
                     vcols[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
            mapping_.at(i, j) = s;
        }

    cov_ = Tensor({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            float s = 0.0f;
            for (int k = 0; k < zd; ++k) s += mapping_.at(i, k) * mapping_.at(j, k);
            cov_.at(i, j) = s;
        }

    // Read vectors live in the column space of M so the PCA subspace can
    // express every oracle direction.
    auto span_draw = [&] {
        Tensor z = gauss(zd);
        Tensor v({n});
        for (int i = 0; i < n; ++i) {
            float s = 0.0f;
            for (int j = 0; j < zd; ++j) s += mapping_.at(i, j) * z[static_cast<std::size_t>(j)];
            v[static_cast<std::size_t>(i)] = s;
        }
        return v;
    };
    std::vector<Tensor> layer0, layer1;
    layer0.push_back(orthonormal_draw(layer0, span_draw));
    layer0.push_back(orthonormal_draw(layer0, span_draw));
    layer1.push_back(orthonormal_draw(layer1, span_draw));
    layer1.push_back(orthonormal_draw(layer1, span_draw));
    Tensor mix_a({n}), mix_b({n});
    const float inv_sqrt2 = 0.7071067811865476f;
    for (int i = 0; i < n; ++i) {
        mix_a[static_cast<std::size_t>(i)] = (layer0[0][static_cast<std::size_t>(i)] + layer0[1][static_cast<std::size_t>(i)]) * inv_sqrt2;
        mix_b[static_cast<std::size_t>(i)] = (layer0[0][static_cast<std::size_t>(i)] - layer0[1][static_cast<std::size_t>(i)]) * inv_sqrt2;
    }
    factors_ = {{"pos_x", 0, layer0[0]},   {"pos_y", 0, layer0[1]},
                {"radius", 1, layer1[0]},  {"blob_hue", 1, layer1[1]},
                {"bg_hue", 2, mix_a},      {"bg_brightness", 2, mix_b}};

    factor_std_.clear();
    for (const Factor& f : factors_) {
        float q = 0.0f;
        for (int i = 0; i < n; ++i) {
            float s = 0.0f;
            for (int j = 0; j < n; ++j) s += cov_.at(i, j) * f.read[static_cast<std::size_t>(j)];
            q += f.read[static_cast<std::size_t>(i)] * s;
        }
        factor_std_.push_back(std::sqrt(std::max(q, 1e-12f)));
    }

    // Frozen random conv stack: 3x3 stride-2 stages with tanh, fan-in scaled.
    // Most of each filter's mean response is removed so that smooth inputs do
    // not collapse every feature into the local-color subspace; without this
    // the extractor is perceptually degenerate and all latent edits look alike.
    Rng erng(cfg.extractor_seed);
    const float dc_kill = tex_knob("CONTRAFEAT_EXT_DCKILL", 0.85f);
    int ci = 3, co = 8;
    for (int l = 0; l < cfg.stages; ++l) {
        Tensor w({co, 3, 3, ci});
        const float target_std = std::sqrt(1.5f / (9.0f * static_cast<float>(ci)));
        const std::size_t filter_len = static_cast<std::size_t>(9 * ci);
        for (int c = 0; c < co; ++c) {
            float* f = &w.v[static_cast<std::size_t>(c) * filter_len];
            for (std::size_t i = 0; i < filter_len; ++i) f[i] = erng.normalf();
            float mean = 0.0f;
            for (std::size_t i = 0; i < filter_len; ++i) mean += f[i];
            mean /= static_cast<float>(filter_len);
            float var = 0.0f;
            for (std::size_t i = 0; i < filter_len; ++i) {
                f[i] -= dc_kill * mean;
                var += f[i] * f[i];
            }
            const float scale = target_std / std::sqrt(var / static_cast<float>(filter_len));
            for (std::size_t i = 0; i < filter_len; ++i) f[i] *= scale;
        }
        ext_w_.push_back(std::move(w));
        ci = co;
        co *= 2;
    }
}

LatentCode0 ToyWorld::map_latent(const Tensor& z) const {
    if (z.ndim() != 1 || z.dim(0) != cfg_.z_dim) throw ConfigError("map_latent: bad z shape");
    Tensor w0({cfg_.n});
    for (int i = 0; i < cfg_.n; ++i) {
        float s = 0.0f;
        for (int j = 0; j < cfg_.z_dim; ++j) s += mapping_.at(i, j) * z[static_cast<std::size_t>(j)];
        w0[static_cast<std::size_t>(i)] = s;
    }
    return w0;
}

Tensor ToyWorld::read_factors(const LatentCodeExt& w) const {
    if (w.ndim() != 2 || w.dim(0) != cfg_.k_layers || w.dim(1) != cfg_.n)
        throw ConfigError("read_factors: bad latent shape");
    Tensor f({factor_count()});
    for (int i = 0; i < factor_count(); ++i) {
        const Factor& fac = factors_[static_cast<std::size_t>(i)];
        f[static_cast<std::size_t>(i)] =
            dot(&w.v[static_cast<std::size_t>(fac.layer) * cfg_.n], fac.read.data(), static_cast<std::size_t>(cfg_.n));
    }
    return f;
}

ToyWorld::VisualParams ToyWorld::visual_params(const std::vector<float>& f) const {
    // Slopes balanced so a unit change of any raw factor produces feature
    // changes of comparable size; otherwise training gravitates to the
    // globally-visible background factors.
    VisualParams p{};
    auto fn = [&](int i) { return f[static_cast<std::size_t>(i)] / factor_std_[static_cast<std::size_t>(i)]; };
    static const float pos_range = tex_knob("CONTRAFEAT_POS_RANGE", 0.24f);
    static const float r_base = tex_knob("CONTRAFEAT_R_BASE", 0.22f);
    static const float r_spread = tex_knob("CONTRAFEAT_R_SPREAD", 0.12f);
    const float t0 = std::tanh(1.1f * fn(0));
    const float t1 = std::tanh(1.1f * fn(1));
    const float t2 = std::tanh(1.0f * fn(2));
    static const float br_scale = tex_knob("CONTRAFEAT_BRIGHT", 0.45f);
    const float t5 = std::tanh(0.6f * fn(5));
    p.cx = 0.5f + pos_range * t0;
    p.cy = 0.5f + pos_range * t1;
    p.r = r_base + r_spread * t2;
    p.hue_blob = tex_knob("CONTRAFEAT_BLOB_HUE", 0.6f) * fn(3);
    p.hue_bg = tex_knob("CONTRAFEAT_BG_HUE", 0.8f) * fn(4);
    p.bright = br_scale * t5;
    p.dcx = pos_range * 1.1f * (1.0f - t0 * t0);
    p.dcy = pos_range * 1.1f * (1.0f - t1 * t1);
    p.dr = r_spread * 1.0f * (1.0f - t2 * t2);
    p.dbright = br_scale * 0.6f * (1.0f - t5 * t5);
    return p;
}

// Spatial hue phase inside the blob. Without it the blob is locally smooth
// at the extractor's patch scale, every blob factor shares one color axis in
// feature space, and training collapses onto the background factors.
namespace {
const float kTexFreq = tex_knob("CONTRAFEAT_TEX_FREQ", 5.0f);
const float kTexAmp = tex_knob("CONTRAFEAT_TEX_AMP", 0.0f);
}  // namespace

Image ToyWorld::render_from_factors(const std::vector<float>& f) const {
    const VisualParams p = visual_params(f);
    const int hw = cfg_.image_size;
    Image img({hw, hw, 3});
    // Brightness scales a hue-tinted base, so its change direction depends on
    // the sampled background hue instead of being the same white axis in
    // every image.
    static const float bg_amp = tex_knob("CONTRAFEAT_BG_AMP", 0.25f);
    static const float br_mix = tex_knob("CONTRAFEAT_BR_MIX", 0.0f);
    float bgcol[3];
    for (int c = 0; c < 3; ++c)
        bgcol[c] = p.bright * (1.0f - br_mix * 0.45f) +
                   (bg_amp + br_mix * 0.5f * p.bright) * std::cos(p.hue_bg + kPhase[c]);
    const float inv = 1.0f / static_cast<float>(hw);
    for (int y = 0; y < hw; ++y) {
        const float py = (static_cast<float>(y) + 0.5f) * inv;
        for (int x = 0; x < hw; ++x) {
            const float px = (static_cast<float>(x) + 0.5f) * inv;
            const float u = px - p.cx, v = py - p.cy;
            const float d2 = u * u + v * v;
            const float alpha = std::exp(-d2 / (2.0f * p.r * p.r));
            const float psi =
                kTexAmp * std::sin(kTexFreq * u / p.r) * std::sin(kTexFreq * v / p.r);
            static const float blob_base = tex_knob("CONTRAFEAT_BLOB_BASE", 0.20f);
            static const float ring_depth = tex_knob("CONTRAFEAT_RING", 0.0f);
            static const float ring_w = tex_knob("CONTRAFEAT_RING_W", 0.025f);
            const float dist = std::sqrt(d2);
            const float ring = std::exp(-(dist - p.r) * (dist - p.r) / (2.0f * ring_w * ring_w));
            const float darken = 1.0f - ring_depth * ring;
            float* pix = &img.v[(static_cast<std::size_t>(y) * hw + static_cast<std::size_t>(x)) * 3];
            for (int c = 0; c < 3; ++c) {
                const float blob = blob_base + 0.45f * std::cos(p.hue_blob + psi + kPhase[c]);
                pix[c] = std::tanh((bgcol[c] * (1.0f - alpha) + blob * alpha) * darken);
            }
        }
    }
    return img;
}

void ToyWorld::render_factor_grad(const std::vector<float>& f, const Tensor& dimg,
                                  std::vector<float>& df) const {
    const VisualParams p = visual_params(f);
    const int hw = cfg_.image_size;
    static const float bg_amp = tex_knob("CONTRAFEAT_BG_AMP", 0.25f);
    static const float br_mix = tex_knob("CONTRAFEAT_BR_MIX", 0.0f);
    float bgcol[3], dbg_dhue[3], dbg_dbright[3];
    for (int c = 0; c < 3; ++c) {
        bgcol[c] = p.bright * (1.0f - br_mix * 0.45f) +
                   (bg_amp + br_mix * 0.5f * p.bright) * std::cos(p.hue_bg + kPhase[c]);
        dbg_dhue[c] = -(bg_amp + br_mix * 0.5f * p.bright) * std::sin(p.hue_bg + kPhase[c]);
        dbg_dbright[c] = (1.0f - br_mix * 0.45f) + br_mix * 0.5f * std::cos(p.hue_bg + kPhase[c]);
    }
    df.assign(6, 0.0f);
    float gcx = 0.0f, gcy = 0.0f, gr = 0.0f, ghb = 0.0f, ghg = 0.0f, gbr = 0.0f;
    const float inv = 1.0f / static_cast<float>(hw);
    for (int y = 0; y < hw; ++y) {
        const float py = (static_cast<float>(y) + 0.5f) * inv;
        for (int x = 0; x < hw; ++x) {
            const float px = (static_cast<float>(x) + 0.5f) * inv;
            const float u = px - p.cx, v = py - p.cy;
            const float d2 = u * u + v * v;
            const float r2 = p.r * p.r;
            const float alpha = std::exp(-d2 / (2.0f * r2));
            const float su = std::sin(kTexFreq * u / p.r), cu = std::cos(kTexFreq * u / p.r);
            const float sv = std::sin(kTexFreq * v / p.r), cv = std::cos(kTexFreq * v / p.r);
            const float psi = kTexAmp * su * sv;
            // d(psi)/d(cx) etc.: u depends on cx with du/dcx = -1; r rescales.
            const float psi_cx = -kTexAmp * (kTexFreq / p.r) * cu * sv;
            const float psi_cy = -kTexAmp * (kTexFreq / p.r) * su * cv;
            const float psi_r =
                -kTexAmp * (kTexFreq / r2) * (cu * sv * u + su * cv * v);
            const float dalpha_cx = alpha * u / r2;
            const float dalpha_cy = alpha * v / r2;
            const float dalpha_r = alpha * d2 / (r2 * p.r);
            static const float blob_base = tex_knob("CONTRAFEAT_BLOB_BASE", 0.20f);
            static const float ring_depth = tex_knob("CONTRAFEAT_RING", 0.0f);
            static const float ring_w = tex_knob("CONTRAFEAT_RING_W", 0.025f);
            const float dist = std::sqrt(d2);
            const float ring = std::exp(-(dist - p.r) * (dist - p.r) / (2.0f * ring_w * ring_w));
            const float darken = 1.0f - ring_depth * ring;
            // d(ring)/d(dist) and dist derivatives; ring vanishes fast near the
            // center so the dist singularity at 0 is harmless.
            const float dring_ddist = -ring * (dist - p.r) / (ring_w * ring_w);
            const float inv_dist = dist > 1e-6f ? 1.0f / dist : 0.0f;
            const float ddist_cx = -u * inv_dist;
            const float ddist_cy = -v * inv_dist;
            const float ddarken_cx = -ring_depth * dring_ddist * ddist_cx;
            const float ddarken_cy = -ring_depth * dring_ddist * ddist_cy;
            const float ddarken_r = -ring_depth * (-dring_ddist);  // d(dist-r)/dr = -1
            const std::size_t off = (static_cast<std::size_t>(y) * hw + static_cast<std::size_t>(x)) * 3;
            for (int c = 0; c < 3; ++c) {
                const float blob = blob_base + 0.45f * std::cos(p.hue_blob + psi + kPhase[c]);
                const float dblob_dphase = -0.45f * std::sin(p.hue_blob + psi + kPhase[c]);
                const float mix = bgcol[c] * (1.0f - alpha) + blob * alpha;
                const float pre = mix * darken;
                const float t = std::tanh(pre);
                const float gpre = dimg[off + static_cast<std::size_t>(c)] * (1.0f - t * t);
                const float gmix = gpre * darken;
                const float gdarken = gpre * mix;
                const float galpha = gmix * (blob - bgcol[c]);
                const float gphase = gmix * alpha * dblob_dphase;
                gcx += galpha * dalpha_cx + gphase * psi_cx + gdarken * ddarken_cx;
                gcy += galpha * dalpha_cy + gphase * psi_cy + gdarken * ddarken_cy;
                gr += galpha * dalpha_r + gphase * psi_r + gdarken * ddarken_r;
                ghb += gphase;
                ghg += gmix * (1.0f - alpha) * dbg_dhue[c];
                gbr += gmix * (1.0f - alpha) * dbg_dbright[c];
            }
        }
    }
    df[0] = gcx * p.dcx / factor_std_[0];
    df[1] = gcy * p.dcy / factor_std_[1];
    df[2] = gr * p.dr / factor_std_[2];
    df[3] = ghb * tex_knob("CONTRAFEAT_BLOB_HUE", 0.6f) / factor_std_[3];
    df[4] = ghg * tex_knob("CONTRAFEAT_BG_HUE", 0.8f) / factor_std_[4];
    df[5] = gbr * p.dbright / factor_std_[5];
}

Image ToyWorld::render(const LatentCodeExt& w) const {
    const Tensor f = read_factors(w);
    return render_from_factors(f.v);
}

FeatureStack ToyWorld::extract_features(const Image& img) const {
    if (img.ndim() != 3 || img.dim(0) != cfg_.image_size || img.dim(2) != 3)
        throw ConfigError("extract_features: bad image shape");
    FeatureStack out;
    Tensor x = img;
    for (const Tensor& w : ext_w_) {
        const int h = x.dim(0), wd = x.dim(1), ci = x.dim(2), co = w.dim(0);
        const int ho = ad::conv_out(h, 2, 1), wo = ad::conv_out(wd, 2, 1);
        Tensor y({ho, wo, co});
        ad::conv2d_fwd(x.data(), h, wd, ci, w.data(), co, 2, 1, nullptr, y.data(), ho, wo, 1);
        for (auto& e : y.v) e = std::tanh(e);
        out.stages.push_back(y);
        x = std::move(y);
    }
    return out;
}

Tensor ToyWorld::oracle_modification(int factor_index, float strength) const {
    if (factor_index < 0 || factor_index >= factor_count())
        throw ConfigError("oracle_modification: factor index out of range");
    Tensor mod({cfg_.k_layers, cfg_.n});
    const Factor& f = factors_[static_cast<std::size_t>(factor_index)];
    for (int j = 0; j < cfg_.n; ++j) mod.at(f.layer, j) = strength * f.read[static_cast<std::size_t>(j)];
    return mod;
}

LatentCode0 ToyWorld::sample_w0(Rng& rng) const {
    Tensor z({cfg_.z_dim});
    for (auto& e : z.v) e = rng.normalf();
    return map_latent(z);
}

LatentCode0 ToyWorld::sample_w0_given_factor(Rng& rng, int index, float value) const {
    LatentCode0 w0 = sample_w0(rng);
    const Factor& f = factors_[static_cast<std::size_t>(index)];
    const float current = dot(w0.data(), f.read.data(), w0.size());
    const float var = factor_std_[static_cast<std::size_t>(index)] * factor_std_[static_cast<std::size_t>(index)];
    const float k = (value - current) / var;
    for (int i = 0; i < cfg_.n; ++i) {
        float s = 0.0f;
        for (int j = 0; j < cfg_.n; ++j) s += cov_.at(i, j) * f.read[static_cast<std::size_t>(j)];
        w0[static_cast<std::size_t>(i)] += k * s;
    }
    return w0;
}

int ToyWorld::render_op(ad::Graph& g, int w_ext) const {
    const Tensor f = read_factors(g.val(w_ext));
    Image img = render_from_factors(f.v);
    const ToyWorld* world = this;
    std::vector<float> fv = f.v;
    int id = g.custom(std::move(img), nullptr);
    g.nodes.back().back = [id, w_ext, world, fv = std::move(fv)](ad::Graph& gg) {
        std::vector<float> df;
        world->render_factor_grad(fv, gg.grad(id), df);
        Tensor& gw = gg.grad(w_ext);
        const int n = world->cfg_.n;
        for (int i = 0; i < world->factor_count(); ++i) {
            const Factor& fac = world->factors_[static_cast<std::size_t>(i)];
            float* row = &gw.v[static_cast<std::size_t>(fac.layer) * n];
            for (int j = 0; j < n; ++j) row[j] += df[static_cast<std::size_t>(i)] * fac.read[static_cast<std::size_t>(j)];
        }
    };
    return id;
}

std::vector<int> ToyWorld::extract_ops(ad::Graph& g, int img) const {
    std::vector<int> stages;
    int x = img;
    for (const Tensor& w : ext_w_) {
        x = g.tanh_op(g.conv2d_frozen(x, w, 2, 1, 1));
        stages.push_back(x);
    }
    return stages;
}

}  // namespace contrafeat
