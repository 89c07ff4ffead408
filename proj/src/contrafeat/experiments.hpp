#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "groupvae.hpp"
#include "metrics.hpp"
#include "trainer.hpp"

namespace contrafeat {

ToyWorld world_from_config(const RunConfig& cfg);

// Latent modifications produced by a trained navigator (one per direction).
std::vector<Tensor> navigator_modifications(const NavigatorParams& params, const PcaBasis& basis,
                                            const TrainConfig& cfg, int k_layers);
// Ground-truth modification set (each read vector in its own layer).
std::vector<Tensor> oracle_modifications(const ToyWorld& world);

struct PcaRunResult {
    PcaBasis basis;
    std::vector<float> explained_ratio;  // per component
    std::filesystem::path bundle_dir;
};
PcaRunResult run_pca(const RunConfig& cfg);

struct TrainRunResult {
    std::filesystem::path checkpoint_dir;
    std::filesystem::path trace_csv;
    std::vector<TraceRow> trace;
};
TrainRunResult run_train(const RunConfig& cfg,
                         const std::optional<std::filesystem::path>& resume = std::nullopt);

struct EvalRunResult {
    AttributeChangeMatrix acm;
    float s_disen = 0.0f;
    int n_discov = 0;
    std::filesystem::path report_path;
};
EvalRunResult run_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint_dir,
                       bool oracle_directions);

std::vector<std::filesystem::path> run_traverse(const RunConfig& cfg,
                                                const std::filesystem::path& checkpoint_dir);

struct MaskExperimentResult {
    // mode -> (pure, mixed)
    std::map<std::string, std::pair<float, float>> table;
    std::filesystem::path json_path;
    std::filesystem::path csv_path;
};
MaskExperimentResult run_mask_experiment(const RunConfig& cfg);

struct DistillRunResult {
    float mig = 0.0f;
    float fvm = 0.0f;
    std::filesystem::path report_path;
};
DistillRunResult run_distill(const RunConfig& cfg, const std::filesystem::path& checkpoint_dir,
                             bool oracle_directions, bool plain_vae);

// P6 image strip writer, [-1,1] mapped linearly to [0,255].
void write_ppm(const std::filesystem::path& path, const std::vector<Image>& columns);

// Loads a trainer state together with the run config echoed in the bundle.
std::pair<TrainerState, RunConfig> load_checkpoint(const std::filesystem::path& dir);

}  // namespace contrafeat
