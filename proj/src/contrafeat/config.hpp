#pragma once

#include <string>

#include <json.hpp>

#include "losses.hpp"
#include "toyworld.hpp"
#include "trainer.hpp"

namespace contrafeat {

struct PcaRunConfig {
    long long sample_count = 50000;
    int k = 8;
};

struct EvalRunConfig {
    int samples = 256;
    float strength = 1.0f;
};

struct TraverseRunConfig {
    int steps = 7;
    float strength_min = -3.0f;
    float strength_max = 3.0f;
};

struct MaskExperimentConfig {
    int samples_per_pair = 1000;
    float strength = 1.0f;
};

struct DistillRunConfig {
    int pairs = 2048;
    float strength = 2.0f;
    int vae_steps = 1500;
    int vae_batch = 8;
    float vae_lr = 1e-3f;
    int latent_dim = 6;
    int eval_samples = 5000;
    int fvm_votes = 500;
    int fvm_batch = 64;
    bool save_dataset = false;
};

// Full run configuration; serialized as a JSON document with exactly these
// keys. Unknown keys are rejected before any compute.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    ToyWorldConfig world;
    PcaRunConfig pca;
    TrainConfig train;
    EvalRunConfig eval;
    TraverseRunConfig traverse;
    MaskExperimentConfig mask_experiment;
    DistillRunConfig distill;
    std::string frozen_directions_path;  // train.frozen_directions source

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
};

}  // namespace contrafeat
