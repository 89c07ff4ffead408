#include "experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "errors.hpp"

namespace contrafeat {

namespace fs = std::filesystem;
using nlohmann::json;

ToyWorld world_from_config(const RunConfig& cfg) { return ToyWorld(cfg.world); }

std::vector<Tensor> navigator_modifications(const NavigatorParams& params, const PcaBasis& basis,
                                            const TrainConfig& cfg, int k_layers) {
    std::vector<Tensor> mods;
    const int m = params.m();
    std::vector<Tensor> dirs;
    if (cfg.frozen_directions) {
        for (int d = 0; d < m; ++d) {
            Tensor dir({cfg.frozen_directions->dim(1)});
            for (int j = 0; j < dir.dim(0); ++j) dir[static_cast<std::size_t>(j)] = cfg.frozen_directions->at(d, j);
            dirs.push_back(std::move(dir));
        }
    } else {
        dirs = directions(params, basis, cfg.subspace_k, cfg.dir_length);
    }
    for (int d = 0; d < m; ++d) {
        std::vector<float> logits(static_cast<std::size_t>(k_layers));
        for (int r = 0; r < k_layers; ++r) logits[static_cast<std::size_t>(r)] = params.att_logits.at(d, r);
        AttentionVector att = cfg.freeze_attention
                                  ? AttentionVector{std::vector<float>(static_cast<std::size_t>(k_layers),
                                                                       1.0f / static_cast<float>(k_layers))}
                                  : smooth_attention(logits, cfg.att_sigma, cfg.att_boundary);
        mods.push_back(compose_modification(dirs[static_cast<std::size_t>(d)], att, 1.0f, d + 1).delta);
    }
    return mods;
}

std::vector<Tensor> oracle_modifications(const ToyWorld& world) {
    std::vector<Tensor> mods;
    for (int i = 0; i < world.factor_count(); ++i) mods.push_back(world.oracle_modification(i));
    return mods;
}

namespace {

Tensor pca_samples(const ToyWorld& world, long long count, Rng& rng) {
    const int n = world.config().n;
    Tensor samples({static_cast<int>(count), n});
    for (long long i = 0; i < count; ++i) {
        const LatentCode0 w0 = world.sample_w0(rng);
        for (int j = 0; j < n; ++j) samples.at(static_cast<int>(i), j) = w0[static_cast<std::size_t>(j)];
    }
    return samples;
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string());
    os << content;
    if (!os) throw IoError("write failed for " + path.string());
}

std::string format_float(float x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(x));
    return buf;
}

}  // namespace

PcaRunResult run_pca(const RunConfig& cfg) {
    const ToyWorld world = world_from_config(cfg);
    Rng rng(cfg.seed);
    const Tensor samples = pca_samples(world, cfg.pca.sample_count, rng);
    PcaRunResult res;
    res.basis = compute_pca(samples);

    float total = 0.0f;
    for (float e : res.basis.eigenvalues.v) total += e;
    for (float e : res.basis.eigenvalues.v)
        res.explained_ratio.push_back(total > 0.0f ? e / total : 0.0f);

    res.bundle_dir = fs::path(cfg.out_dir) / "pca";
    Bundle b;
    b.arrays["pca.components"] = res.basis.components;
    b.arrays["pca.eigenvalues"] = res.basis.eigenvalues;
    b.arrays["pca.mean"] = res.basis.mean;
    b.put_scalar("pca.sample_count", static_cast<float>(res.basis.sample_count));
    // Top-m components as ready-made frozen directions.
    const int n = res.basis.n();
    const int m = cfg.train.directions;
    Tensor dirs({m, n});
    for (int d = 0; d < m && d < n; ++d)
        for (int i = 0; i < n; ++i) dirs.at(d, i) = res.basis.components.at(i, d);
    b.arrays["directions"] = std::move(dirs);
    b.config = cfg.to_json();
    save_bundle(res.bundle_dir, b);

    json report;
    report["eigenvalues"] = res.basis.eigenvalues.v;
    report["explained_ratio"] = res.explained_ratio;
    report["sample_count"] = res.basis.sample_count;
    write_text_file(fs::path(cfg.out_dir) / "pca_report.json", report.dump(2) + "\n");
    return res;
}

std::pair<TrainerState, RunConfig> load_checkpoint(const fs::path& dir) {
    const Bundle b = load_bundle(dir);
    if (b.config.is_null()) throw IoError("checkpoint: missing config echo in " + dir.string());
    RunConfig cfg = RunConfig::from_json(b.config);
    TrainerState state = Trainer::state_from_bundle(b);
    TrainConfig tc = cfg.train;
    tc.frozen_directions = state.config.frozen_directions;
    state.config = tc;
    return {std::move(state), std::move(cfg)};
}

TrainRunResult run_train(const RunConfig& cfg_in, const std::optional<fs::path>& resume) {
    RunConfig cfg = cfg_in;
    const ToyWorld world = world_from_config(cfg);

    if (!cfg.frozen_directions_path.empty()) {
        const Bundle fb = load_bundle(cfg.frozen_directions_path);
        Tensor dirs = fb.get("directions");
        if (dirs.ndim() != 2 || dirs.dim(1) != world.config().n)
            throw ConfigError("frozen directions: bad shape");
        if (dirs.dim(0) < cfg.train.directions)
            throw ConfigError("frozen directions: fewer rows than configured directions");
        Tensor take({cfg.train.directions, world.config().n});
        for (int d = 0; d < cfg.train.directions; ++d) {
            const float* row = &dirs.v[static_cast<std::size_t>(d) * world.config().n];
            const float nrm = norm2(row, static_cast<std::size_t>(world.config().n));
            if (!(nrm > 0.0f)) throw NumericalError("frozen directions: zero row");
            for (int j = 0; j < world.config().n; ++j)
                take.at(d, j) = cfg.train.dir_length * row[j] / nrm;
        }
        cfg.train.frozen_directions = std::move(take);
    }

    std::optional<Trainer> trainer;
    if (resume) {
        auto [state, ckpt_cfg] = load_checkpoint(*resume);
        TrainConfig tc = state.config;
        tc.steps = cfg.train.steps;  // extend the run, everything else pinned
        state.config = tc;
        trainer.emplace(std::move(state), world);
    } else {
        Trainer fresh(cfg.train, [&] {
            Rng rng(cfg.seed);
            return compute_pca(pca_samples(world, cfg.pca.sample_count, rng));
        }(), world);
        trainer.emplace(std::move(fresh));
    }

    trainer->train();

    TrainRunResult res;
    res.trace = trainer->trace();
    fs::create_directories(cfg.out_dir);
    res.trace_csv = fs::path(cfg.out_dir) / "loss.csv";
    std::string csv = "step,loss,cons,orth,div\n";
    for (const TraceRow& r : res.trace)
        csv += std::to_string(r.step) + "," + format_float(r.loss) + "," + format_float(r.cons) +
               "," + format_float(r.orth) + "," + format_float(r.div) + "\n";
    write_text_file(res.trace_csv, csv);

    Bundle b = trainer->to_bundle();
    b.config = cfg.to_json();
    res.checkpoint_dir = fs::path(cfg.out_dir) / "checkpoint";
    save_bundle(res.checkpoint_dir, b);
    return res;
}

EvalRunResult run_eval(const RunConfig& cfg, const fs::path& checkpoint_dir,
                       bool oracle_directions) {
    EvalRunResult res;
    Rng rng(cfg.seed);
    std::optional<ToyWorld> world;
    std::vector<Tensor> mods;
    if (oracle_directions) {
        world.emplace(cfg.world);
        mods = oracle_modifications(*world);
    } else {
        auto [state, ckpt_cfg] = load_checkpoint(checkpoint_dir);
        world.emplace(ckpt_cfg.world);
        mods = navigator_modifications(state.params, state.basis, state.config,
                                       world->config().k_layers);
    }
    res.acm = attribute_change_matrix(mods, *world, cfg.eval.samples, cfg.eval.strength, rng);
    res.s_disen = s_disen(res.acm);
    res.n_discov = n_discov(res.acm);

    json report;
    report["S_disen"] = res.s_disen;
    report["N_discov"] = res.n_discov;
    json a = json::array();
    for (int d = 0; d < res.acm.m(); ++d) {
        json row = json::array();
        for (int c = 0; c < res.acm.p(); ++c) row.push_back(res.acm.a.at(d, c));
        a.push_back(row);
    }
    report["A"] = a;
    report["dead_rows"] = res.acm.dead_rows;

    fs::create_directories(cfg.out_dir);
    res.report_path = fs::path(cfg.out_dir) / "metrics.json";
    write_text_file(res.report_path, report.dump(2) + "\n");
    return res;
}

void write_ppm(const fs::path& path, const std::vector<Image>& columns) {
    if (columns.empty()) throw ConfigError("write_ppm: no columns");
    const int h = columns[0].dim(0), w = columns[0].dim(1);
    const int total_w = w * static_cast<int>(columns.size());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string());
    os << "P6\n" << total_w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(total_w) * 3);
    for (int y = 0; y < h; ++y) {
        for (std::size_t col = 0; col < columns.size(); ++col) {
            const Image& img = columns[col];
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) {
                    const float v = img.v[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3 +
                                          static_cast<std::size_t>(c)];
                    const float scaled = std::round((v + 1.0f) * 127.5f);
                    row[(col * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)) * 3 +
                        static_cast<std::size_t>(c)] =
                        static_cast<unsigned char>(std::clamp(scaled, 0.0f, 255.0f));
                }
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("write failed for " + path.string());
}

std::vector<fs::path> run_traverse(const RunConfig& cfg, const fs::path& checkpoint_dir) {
    auto [state, ckpt_cfg] = load_checkpoint(checkpoint_dir);
    const ToyWorld world(ckpt_cfg.world);
    const int steps = cfg.traverse.steps;
    if (steps < 1) throw ConfigError("traverse: steps must be >= 1");

    Rng rng(cfg.seed);
    const LatentCodeExt base = broadcast(world.sample_w0(rng), world.config().k_layers);
    const std::vector<Tensor> mods =
        navigator_modifications(state.params, state.basis, state.config, world.config().k_layers);

    fs::create_directories(fs::path(cfg.out_dir) / "traverse");
    std::vector<fs::path> files;
    for (std::size_t d = 0; d < mods.size(); ++d) {
        std::vector<Image> columns;
        for (int t = 0; t < steps; ++t) {
            const float frac = steps == 1 ? 0.5f : static_cast<float>(t) / static_cast<float>(steps - 1);
            const float strength =
                cfg.traverse.strength_min + (cfg.traverse.strength_max - cfg.traverse.strength_min) * frac;
            LatentCodeExt w = base;
            for (std::size_t i = 0; i < w.size(); ++i) w[i] += strength * mods[d][i];
            columns.push_back(world.render(w));
        }
        const fs::path file = fs::path(cfg.out_dir) / "traverse" / ("dir_" + std::to_string(d + 1) + ".ppm");
        write_ppm(file, columns);
        files.push_back(file);
    }
    return files;
}

MaskExperimentResult run_mask_experiment(const RunConfig& cfg) {
    const ToyWorld world = world_from_config(cfg);
    Rng rng(cfg.seed);
    const int p = world.factor_count();
    const int samples = cfg.mask_experiment.samples_per_pair;
    const float s = cfg.mask_experiment.strength;
    const float eps = cfg.train.loss.eps_q;
    const LossMode modes[3] = {LossMode::Pooled, LossMode::NoFoc, LossMode::L2Mask};

    double pure[3] = {0, 0, 0}, mixed[3] = {0, 0, 0};
    int n_pairs = 0;

    auto change = [&](const LatentCodeExt& w, const Tensor& mod) {
        LatentCodeExt wm = w;
        for (std::size_t i = 0; i < wm.size(); ++i) wm[i] += mod[i];
        FeatureStack f1 = world.extract_features(world.render(wm));
        const FeatureStack f0 = world.extract_features(world.render(w));
        for (std::size_t l = 0; l < f1.stages.size(); ++l)
            for (std::size_t i = 0; i < f1.stages[l].size(); ++i) f1.stages[l][i] -= f0.stages[l][i];
        return f1.stages;
    };

    for (int fi = 0; fi < p; ++fi) {
        for (int fj = fi + 1; fj < p; ++fj) {
            const Tensor mod_a = world.oracle_modification(fi, s);
            const Tensor mod_b = world.oracle_modification(fj, s);
            Tensor mix1 = mod_a, mix2 = mod_a;
            for (std::size_t i = 0; i < mix1.size(); ++i) {
                mix1[i] += mod_b[i];
                mix2[i] -= mod_b[i];
            }
            double pure_acc[3] = {0, 0, 0}, mixed_acc[3] = {0, 0, 0};
            for (int it = 0; it < samples; ++it) {
                const LatentCodeExt w1 = broadcast(world.sample_w0(rng), world.config().k_layers);
                const LatentCodeExt w2 = broadcast(world.sample_w0(rng), world.config().k_layers);
                const auto f1a = change(w1, mod_a), f1b = change(w1, mod_b);
                const auto f2a = change(w2, mod_a), f2b = change(w2, mod_b);
                const auto g1p = change(w1, mix1), g1m = change(w1, mix2);
                const auto g2p = change(w2, mix1), g2m = change(w2, mix2);
                for (int mo = 0; mo < 3; ++mo) {
                    const LossMode mode = modes[mo];
                    const double d1 = -masked_pair_score(f1a, f2a, mode, eps) +
                                      masked_pair_score(f1a, f2b, mode, eps);
                    const double d2 = -masked_pair_score(f1b, f2b, mode, eps) +
                                      masked_pair_score(f1b, f2a, mode, eps);
                    pure_acc[mo] += 0.5 * (d1 + d2);
                    const double e1 = -masked_pair_score(g1p, g2p, mode, eps) +
                                      masked_pair_score(g1p, g2m, mode, eps);
                    const double e2 = -masked_pair_score(g1m, g2m, mode, eps) +
                                      masked_pair_score(g1m, g2p, mode, eps);
                    mixed_acc[mo] += 0.5 * (e1 + e2);
                }
            }
            for (int mo = 0; mo < 3; ++mo) {
                pure[mo] += pure_acc[mo] / samples;
                mixed[mo] += mixed_acc[mo] / samples;
            }
            ++n_pairs;
        }
    }

    MaskExperimentResult res;
    json modes_json;
    std::string csv = "mode,pure,mixed\n";
    for (int mo = 0; mo < 3; ++mo) {
        const std::string name = to_string(modes[mo]);
        const float pv = static_cast<float>(pure[mo] / n_pairs);
        const float mv = static_cast<float>(mixed[mo] / n_pairs);
        res.table[name] = {pv, mv};
        modes_json[name] = {{"pure", pv}, {"mixed", mv}};
        csv += name + "," + format_float(pv) + "," + format_float(mv) + "\n";
    }
    json report = {{"modes", modes_json},
                   {"samples_per_pair", samples},
                   {"strength", s},
                   {"seed", cfg.seed}};
    fs::create_directories(cfg.out_dir);
    res.json_path = fs::path(cfg.out_dir) / "mask_experiment.json";
    res.csv_path = fs::path(cfg.out_dir) / "mask_experiment.csv";
    write_text_file(res.json_path, report.dump(2) + "\n");
    write_text_file(res.csv_path, csv);
    return res;
}

DistillRunResult run_distill(const RunConfig& cfg, const fs::path& checkpoint_dir,
                             bool oracle_directions, bool plain_vae) {
    Rng rng(cfg.seed);
    std::optional<ToyWorld> world;
    std::vector<Tensor> mods;
    if (oracle_directions) {
        world.emplace(cfg.world);
        mods = oracle_modifications(*world);
    } else {
        auto [state, ckpt_cfg] = load_checkpoint(checkpoint_dir);
        world.emplace(ckpt_cfg.world);
        mods = navigator_modifications(state.params, state.basis, state.config,
                                       world->config().k_layers);
    }

    const PairedDataset dataset =
        build_pair_dataset(mods, *world, cfg.distill.pairs, cfg.distill.strength, rng);

    if (cfg.distill.save_dataset) {
        Bundle db;
        const int hw = world->config().image_size;
        const int count = static_cast<int>(dataset.size());
        Tensor ia({count, hw, hw, 3}), ib({count, hw, hw, 3}), varied({count});
        for (int i = 0; i < count; ++i) {
            const PairedSample pair = dataset.pair(static_cast<std::size_t>(i));
            std::copy(pair.image_a.v.begin(), pair.image_a.v.end(),
                      ia.v.begin() + static_cast<std::size_t>(i) * pair.image_a.size());
            std::copy(pair.image_b.v.begin(), pair.image_b.v.end(),
                      ib.v.begin() + static_cast<std::size_t>(i) * pair.image_b.size());
            varied[static_cast<std::size_t>(i)] = static_cast<float>(pair.varied_index);
        }
        db.arrays["images_a"] = std::move(ia);
        db.arrays["images_b"] = std::move(ib);
        db.arrays["varied"] = std::move(varied);
        db.config = cfg.to_json();
        save_bundle(fs::path(cfg.out_dir) / "pair_dataset", db);
    }

    VaeSpec spec;
    spec.image_size = world->config().image_size;
    spec.latent_dim = cfg.distill.latent_dim;
    VaeTrainConfig vcfg;
    vcfg.seed = cfg.seed;
    vcfg.steps = cfg.distill.vae_steps;
    vcfg.batch_size = cfg.distill.vae_batch;
    vcfg.lr = cfg.distill.vae_lr;
    vcfg.group_merge = !plain_vae;
    const VaeModel model = train_group_vae(dataset, spec, vcfg);

    // Held-out factor-labelled samples for the metrics.
    const int n_eval = cfg.distill.eval_samples;
    std::vector<std::vector<float>> codes, factors;
    for (int i = 0; i < n_eval; ++i) {
        const LatentCodeExt w = broadcast(world->sample_w0(rng), world->config().k_layers);
        const Tensor f = world->read_factors(w);
        codes.push_back(encode_mean(model.params, spec, world->render(w)));
        factors.push_back(f.v);
    }
    DistillRunResult res;
    res.mig = mig(codes, factors).value;

    const auto sampler = [&](int factor_index, int batch, std::vector<std::vector<float>>& out) {
        out.clear();
        const float value =
            world->factor_stds()[static_cast<std::size_t>(factor_index)] * rng.normalf();
        for (int i = 0; i < batch; ++i) {
            const LatentCodeExt w = broadcast(
                world->sample_w0_given_factor(rng, factor_index, value), world->config().k_layers);
            out.push_back(encode_mean(model.params, spec, world->render(w)));
        }
    };
    res.fvm = fvm(world->factor_count(), spec.latent_dim, sampler, rng, cfg.distill.fvm_votes,
                  cfg.distill.fvm_batch);

    json report = {{"MIG", res.mig}, {"FVM", res.fvm}};
    fs::create_directories(cfg.out_dir);
    res.report_path = fs::path(cfg.out_dir) / "distill.json";
    write_text_file(res.report_path, report.dump(2) + "\n");

    Bundle vb;
    VaeParams params_copy = model.params;
    for (auto& [name, t] : params_copy.named()) vb.arrays[std::string("vae.") + name] = *t;
    vb.config = cfg.to_json();
    save_bundle(fs::path(cfg.out_dir) / "vae", vb);
    return res;
}

}  // namespace contrafeat
