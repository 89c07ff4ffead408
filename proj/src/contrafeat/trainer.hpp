#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adam.hpp"
#include "bundle.hpp"
#include "losses.hpp"
#include "navigator.hpp"
#include "toyworld.hpp"

namespace contrafeat {

struct TrainConfig {
    std::uint64_t seed = 1;
    int steps = 10000;
    int batch_size = 8;
    int directions = 6;   // m
    int subspace_k = 8;   // k
    float lr_navigator = 0.05f;
    float lr_prototypes = 0.01f;
    float adam_beta1 = 0.0f;
    float adam_beta2 = 0.99f;
    float adam_eps = 1e-8f;
    float strength = 1.0f;
    float clip_norm = 10.0f;
    int log_interval = 50;
    float dir_length = 1.0f;
    float att_sigma = 1.0f;
    AttentionBoundary att_boundary = AttentionBoundary::Renorm;
    LossConfig loss;
    std::optional<Tensor> frozen_directions;  // (m, n)
    bool freeze_attention = false;

    void validate(const ToyWorldConfig& world) const;
};

struct TraceRow {
    int step;
    float loss, cons, orth, div;
};

// Full training state; checkpoints capture everything needed to resume a run
// bitwise, including optimizer moments and the RNG stream.
struct TrainerState {
    NavigatorParams params;
    std::optional<PrototypeBank> bank;
    PcaBasis basis;
    TrainConfig config;
    long long step = 0;
    Rng rng{0};
    AdamState adam_v_sub, adam_att, adam_protos;
};

class Trainer {
  public:
    Trainer(const TrainConfig& cfg, const PcaBasis& basis, const ToyWorld& world);
    // Resume from a loaded state.
    Trainer(TrainerState state, const ToyWorld& world);

    // One optimization step; returns the loss terms for the trace.
    TraceRow train_step();

    // Runs until config.steps, recording the trace every log_interval steps.
    const std::vector<TraceRow>& train();

    const TrainerState& state() const { return state_; }
    const std::vector<TraceRow>& trace() const { return trace_; }

    Bundle to_bundle() const;
    static TrainerState state_from_bundle(const Bundle& b);

  private:
    TrainerState state_;
    const ToyWorld& world_;
    TotalLossSetup setup_;
    std::vector<TraceRow> trace_;

    void build_setup();
};

}  // namespace contrafeat
