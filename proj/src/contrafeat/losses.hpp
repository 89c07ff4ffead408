#pragma once

#include <optional>
#include <string>
#include <vector>

#include "navigator.hpp"
#include "toyworld.hpp"

namespace contrafeat {

enum class LossMode { L2Mask, Pooled, NoFoc };
enum class LossVariant { Bi, Pt };

LossMode loss_mode_from_string(const std::string& s);
LossVariant loss_variant_from_string(const std::string& s);
std::string to_string(LossMode m);
std::string to_string(LossVariant v);

struct LossConfig {
    LossMode mode = LossMode::L2Mask;
    LossVariant variant = LossVariant::Bi;
    float lambda = 0.01f;
    float eps_q = 1e-8f;
};

// Stage-wise feature difference caused by one latent modification.
struct FeatureChange {
    std::vector<Tensor> stages;
    int direction_index = 0;
};

// Learned per-direction variation patterns, stored pre-activation; tanh is
// applied before feature extraction.
struct PrototypeBank {
    Tensor patterns;  // (m, H*W*3)
    int image_size = 0;

    static PrototypeBank init(int m, int image_size, Rng& rng);  // N(0, 0.01)
    int m() const { return patterns.dim(0); }
    Tensor pattern(int d) const;  // (H, W, 3)
};

FeatureChange feature_change(const LatentCodeExt& w, const Modification& mod,
                             const ToyWorld& world);

// Shared aggregation core: per-stage weighted mean of squared channel
// cosines, in [0, L]. Consistency negates it, orthogonality keeps the sign.
// `degenerate` is set when some stage has both inputs identically zero.
float masked_pair_score(const std::vector<Tensor>& a, const std::vector<Tensor>& b, LossMode mode,
                        float eps_q, bool* degenerate = nullptr);

float masked_consistency(const FeatureChange& fx, const FeatureChange& fy, const LossConfig& cfg,
                         bool* degenerate = nullptr);
float masked_orthogonality(const FeatureChange& fx, const FeatureChange& fy, const LossConfig& cfg,
                           bool* degenerate = nullptr);

FeatureStack prototype_features(const PrototypeBank& bank, int d, const ToyWorld& world);

float pt_consistency(const FeatureChange& fx, const FeatureStack& proto, const LossConfig& cfg,
                     bool* degenerate = nullptr);
float pt_orthogonality(const FeatureChange& fx, const PrototypeBank& bank, int d,
                       const LossConfig& cfg, const ToyWorld& world);

// Sum over ordered pairs i != j of squared cosine between directions.
float diversity(const std::vector<Tensor>& dirs);

// --- graph builders ---

int masked_score_op(ad::Graph& g, const std::vector<int>& a, const std::vector<int>& b,
                    LossMode mode, float eps_q);
int diversity_op(ad::Graph& g, const std::vector<int>& dirs);

// Full objective over one sampled batch. Builds a graph, runs backward and
// returns the loss terms together with parameter gradients.
struct BiPair {
    LatentCodeExt x;
    LatentCodeExt y;
};

struct Batch {
    std::vector<BiPair> items;  // pt variant uses x only
    int d = 0;
    int d_alt = 1;  // the contrasted direction (bi variant)
};

struct TotalLossSetup {
    LossConfig loss;
    float strength = 1.0f;
    Tensor basis_top_k;  // (n, k)
    Tensor smoothing;    // (k_layers, k_layers)
    float dir_length = 1.0f;
    std::optional<Tensor> frozen_directions;  // (m, n) unit rows
    bool freeze_attention = false;
};

struct TotalLossResult {
    float loss = 0.0f;
    float consistency = 0.0f;
    float orthogonality = 0.0f;
    float diversity = 0.0f;
    Tensor grad_v_sub;
    Tensor grad_att;
    Tensor grad_protos;
    int degenerate_stages = 0;
};

TotalLossResult total_loss(const Batch& batch, const NavigatorParams& params,
                           const PrototypeBank* bank, const TotalLossSetup& setup,
                           const ToyWorld& world);

}  // namespace contrafeat
