#pragma once

#include <string>
#include <vector>

#include "graph.hpp"
#include "latent.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace contrafeat {

struct ToyWorldConfig {
    int z_dim = 8;
    int n = 16;
    int k_layers = 3;
    int image_size = 32;
    int stages = 3;
    std::uint64_t world_seed = 7;
    std::uint64_t extractor_seed = 99;
};

struct Factor {
    std::string name;
    int layer = 0;
    Tensor read;  // (n), unit length, orthonormal within a layer
};

// (H, W, 3) image with entries in (-1, 1).
using Image = Tensor;

// Multi-stage spatial feature maps.
struct FeatureStack {
    std::vector<Tensor> stages;  // each (H_l, W_l, C_l)
};

// Frozen stand-in for mapping network + synthesis network + feature
// extractor. Everything is derived deterministically from the two seeds at
// construction and never mutated afterwards.
//
// Factor layout: layer 0 drives the blob center (pos_x, pos_y), layer 1 the
// blob radius and hue, layer 2 the background hue and brightness. The two
// layer-2 read vectors are rotations of the layer-0 pair, so no single W0
// direction applied across all layers can isolate them; layer attention is
// what disambiguates.
class ToyWorld {
  public:
    explicit ToyWorld(const ToyWorldConfig& cfg);

    const ToyWorldConfig& config() const { return cfg_; }
    const Tensor& mapping() const { return mapping_; }            // (n, z_dim)
    const std::vector<float>& singular_values() const { return sing_; }
    const std::vector<Factor>& factors() const { return factors_; }
    int factor_count() const { return static_cast<int>(factors_.size()); }
    const std::vector<Tensor>& extractor_weights() const { return ext_w_; }

    LatentCode0 map_latent(const Tensor& z) const;                 // (z_dim) -> (n)
    Tensor read_factors(const LatentCodeExt& w) const;             // -> (p)
    Image render(const LatentCodeExt& w) const;
    FeatureStack extract_features(const Image& img) const;

    // Ground-truth modification for factor i: its read vector placed only in
    // its own layer. Changes factor i by `strength`, all others untouched.
    Tensor oracle_modification(int factor_index, float strength = 1.0f) const;  // (k_layers, n)

    // Population std of each raw factor read under z ~ N(0, I).
    const std::vector<float>& factor_stds() const { return factor_std_; }

    // Sample w0 = M z with z ~ N(0, I).
    LatentCode0 sample_w0(Rng& rng) const;
    // Sample w0 conditioned on read r of factor `index` being `value`.
    LatentCode0 sample_w0_given_factor(Rng& rng, int index, float value) const;

    // Graph builders (share kernels with the plain paths above).
    int render_op(ad::Graph& g, int w_ext) const;
    std::vector<int> extract_ops(ad::Graph& g, int img) const;

    // Renderer internals split out for testing: image from raw factor reads.
    Image render_from_factors(const std::vector<float>& f) const;
    void render_factor_grad(const std::vector<float>& f, const Tensor& dimg,
                            std::vector<float>& df) const;

  private:
    ToyWorldConfig cfg_;
    Tensor mapping_;                 // (n, z_dim)
    Tensor cov_;                     // (n, n) = M M^T
    std::vector<float> sing_;        // z_dim singular values of M
    std::vector<Factor> factors_;
    std::vector<float> factor_std_;
    std::vector<Tensor> ext_w_;      // per stage (Co, 3, 3, Ci)

    struct VisualParams {
        float cx, cy, r, hue_blob, hue_bg, bright;
        // squash derivatives wrt the normalized factor values
        float dcx, dcy, dr, dbright;
    };
    VisualParams visual_params(const std::vector<float>& f) const;
};

}  // namespace contrafeat
