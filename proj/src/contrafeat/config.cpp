#include "config.hpp"

#include <fstream>
#include <set>

#include "errors.hpp"

namespace contrafeat {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& scope, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: '" + scope + "' must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw ConfigError("config: unknown key '" + scope + key + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value type for '") + key + "'");
    }
}

}  // namespace

json RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["world"] = {{"z_dim", world.z_dim},
                  {"n", world.n},
                  {"k_layers", world.k_layers},
                  {"image_size", world.image_size},
                  {"stages", world.stages},
                  {"world_seed", world.world_seed},
                  {"extractor_seed", world.extractor_seed}};
    j["pca"] = {{"sample_count", pca.sample_count}, {"k", train.subspace_k}};
    j["nav"] = {{"att_sigma", train.att_sigma},
                {"att_boundary", to_string(train.att_boundary)},
                {"length", train.dir_length}};
    j["train"] = {{"steps", train.steps},
                  {"batch_size", train.batch_size},
                  {"directions", train.directions},
                  {"lr_navigator", train.lr_navigator},
                  {"lr_prototypes", train.lr_prototypes},
                  {"adam_beta1", train.adam_beta1},
                  {"adam_beta2", train.adam_beta2},
                  {"adam_eps", train.adam_eps},
                  {"strength", train.strength},
                  {"log_interval", train.log_interval},
                  {"clip_norm", train.clip_norm},
                  {"frozen_directions", frozen_directions_path},
                  {"freeze_attention", train.freeze_attention}};
    j["loss"] = {{"mode", to_string(train.loss.mode)},
                 {"variant", to_string(train.loss.variant)},
                 {"lambda", train.loss.lambda},
                 {"eps_q", train.loss.eps_q}};
    j["eval"] = {{"samples", eval.samples}, {"strength", eval.strength}};
    j["traverse"] = {{"steps", traverse.steps},
                     {"strength_min", traverse.strength_min},
                     {"strength_max", traverse.strength_max}};
    j["mask_experiment"] = {{"samples_per_pair", mask_experiment.samples_per_pair},
                            {"strength", mask_experiment.strength}};
    j["distill"] = {{"pairs", distill.pairs},
                    {"strength", distill.strength},
                    {"vae_steps", distill.vae_steps},
                    {"vae_batch", distill.vae_batch},
                    {"vae_lr", distill.vae_lr},
                    {"latent_dim", distill.latent_dim},
                    {"eval_samples", distill.eval_samples},
                    {"fvm_votes", distill.fvm_votes},
                    {"fvm_batch", distill.fvm_batch},
                    {"save_dataset", distill.save_dataset}};
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    check_keys(j, "", {"seed", "out_dir", "world", "pca", "nav", "train", "loss", "eval",
                       "traverse", "mask_experiment", "distill"});
    RunConfig c;
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir);

    if (j.contains("world")) {
        const json& w = j.at("world");
        check_keys(w, "world.",
                   {"z_dim", "n", "k_layers", "image_size", "stages", "world_seed", "extractor_seed"});
        c.world.z_dim = get_or<int>(w, "z_dim", c.world.z_dim);
        c.world.n = get_or<int>(w, "n", c.world.n);
        c.world.k_layers = get_or<int>(w, "k_layers", c.world.k_layers);
        c.world.image_size = get_or<int>(w, "image_size", c.world.image_size);
        c.world.stages = get_or<int>(w, "stages", c.world.stages);
        c.world.world_seed = get_or<std::uint64_t>(w, "world_seed", c.world.world_seed);
        c.world.extractor_seed = get_or<std::uint64_t>(w, "extractor_seed", c.world.extractor_seed);
    }
    if (j.contains("pca")) {
        const json& p = j.at("pca");
        check_keys(p, "pca.", {"sample_count", "k"});
        c.pca.sample_count = get_or<long long>(p, "sample_count", c.pca.sample_count);
        c.pca.k = get_or<int>(p, "k", c.pca.k);
    }
    c.train.subspace_k = c.pca.k;
    if (j.contains("nav")) {
        const json& n = j.at("nav");
        check_keys(n, "nav.", {"att_sigma", "att_boundary", "length"});
        c.train.att_sigma = get_or<float>(n, "att_sigma", c.train.att_sigma);
        c.train.att_boundary =
            attention_boundary_from_string(get_or<std::string>(n, "att_boundary", "renorm"));
        c.train.dir_length = get_or<float>(n, "length", c.train.dir_length);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train.",
                   {"steps", "batch_size", "directions", "lr_navigator", "lr_prototypes",
                    "adam_beta1", "adam_beta2", "adam_eps", "strength", "log_interval", "clip_norm",
                    "frozen_directions", "freeze_attention"});
        c.train.steps = get_or<int>(t, "steps", c.train.steps);
        c.train.batch_size = get_or<int>(t, "batch_size", c.train.batch_size);
        c.train.directions = get_or<int>(t, "directions", c.train.directions);
        c.train.lr_navigator = get_or<float>(t, "lr_navigator", c.train.lr_navigator);
        c.train.lr_prototypes = get_or<float>(t, "lr_prototypes", c.train.lr_prototypes);
        c.train.adam_beta1 = get_or<float>(t, "adam_beta1", c.train.adam_beta1);
        c.train.adam_beta2 = get_or<float>(t, "adam_beta2", c.train.adam_beta2);
        c.train.adam_eps = get_or<float>(t, "adam_eps", c.train.adam_eps);
        c.train.strength = get_or<float>(t, "strength", c.train.strength);
        c.train.log_interval = get_or<int>(t, "log_interval", c.train.log_interval);
        c.train.clip_norm = get_or<float>(t, "clip_norm", c.train.clip_norm);
        c.frozen_directions_path = get_or<std::string>(t, "frozen_directions", "");
        c.train.freeze_attention = get_or<bool>(t, "freeze_attention", c.train.freeze_attention);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, "loss.", {"mode", "variant", "lambda", "eps_q"});
        c.train.loss.mode = loss_mode_from_string(get_or<std::string>(l, "mode", "l2mask"));
        c.train.loss.variant = loss_variant_from_string(get_or<std::string>(l, "variant", "bi"));
        c.train.loss.lambda = get_or<float>(l, "lambda", c.train.loss.lambda);
        c.train.loss.eps_q = get_or<float>(l, "eps_q", c.train.loss.eps_q);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, "eval.", {"samples", "strength"});
        c.eval.samples = get_or<int>(e, "samples", c.eval.samples);
        c.eval.strength = get_or<float>(e, "strength", c.eval.strength);
    }
    if (j.contains("traverse")) {
        const json& t = j.at("traverse");
        check_keys(t, "traverse.", {"steps", "strength_min", "strength_max"});
        c.traverse.steps = get_or<int>(t, "steps", c.traverse.steps);
        c.traverse.strength_min = get_or<float>(t, "strength_min", c.traverse.strength_min);
        c.traverse.strength_max = get_or<float>(t, "strength_max", c.traverse.strength_max);
    }
    if (j.contains("mask_experiment")) {
        const json& m = j.at("mask_experiment");
        check_keys(m, "mask_experiment.", {"samples_per_pair", "strength"});
        c.mask_experiment.samples_per_pair =
            get_or<int>(m, "samples_per_pair", c.mask_experiment.samples_per_pair);
        c.mask_experiment.strength = get_or<float>(m, "strength", c.mask_experiment.strength);
    }
    if (j.contains("distill")) {
        const json& d = j.at("distill");
        check_keys(d, "distill.",
                   {"pairs", "strength", "vae_steps", "vae_batch", "vae_lr", "latent_dim",
                    "eval_samples", "fvm_votes", "fvm_batch", "save_dataset"});
        c.distill.pairs = get_or<int>(d, "pairs", c.distill.pairs);
        c.distill.strength = get_or<float>(d, "strength", c.distill.strength);
        c.distill.vae_steps = get_or<int>(d, "vae_steps", c.distill.vae_steps);
        c.distill.vae_batch = get_or<int>(d, "vae_batch", c.distill.vae_batch);
        c.distill.vae_lr = get_or<float>(d, "vae_lr", c.distill.vae_lr);
        c.distill.latent_dim = get_or<int>(d, "latent_dim", c.distill.latent_dim);
        c.distill.eval_samples = get_or<int>(d, "eval_samples", c.distill.eval_samples);
        c.distill.fvm_votes = get_or<int>(d, "fvm_votes", c.distill.fvm_votes);
        c.distill.fvm_batch = get_or<int>(d, "fvm_batch", c.distill.fvm_batch);
        c.distill.save_dataset = get_or<bool>(d, "save_dataset", c.distill.save_dataset);
    }
    c.train.seed = c.seed;
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("config: cannot open " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

}  // namespace contrafeat
