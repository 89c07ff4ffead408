#pragma once

#include <optional>
#include <vector>

#include "adam.hpp"
#include "bundle.hpp"
#include "graph.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "toyworld.hpp"

namespace contrafeat {

struct GaussianPosterior {
    std::vector<float> mean;
    std::vector<float> variance;  // > 0
};

// Averages means and variances on shared dimensions; the varied dimension
// keeps each posterior's own values. shared_mask[i] == true marks shared.
std::pair<GaussianPosterior, GaussianPosterior> merge_posteriors(const GaussianPosterior& pa,
                                                                 const GaussianPosterior& pb,
                                                                 const std::vector<bool>& shared_mask);

struct PairedSample {
    Image image_a;
    Image image_b;
    int varied_index = 0;
};

// Pairs differing along one direction; codes are stored and images rendered
// on demand to keep the dataset light.
struct PairedDataset {
    std::vector<LatentCodeExt> codes_a;
    std::vector<int> varied;
    std::vector<Tensor> mods;  // (k_layers, n) per direction
    float strength = 1.0f;
    const ToyWorld* world = nullptr;

    std::size_t size() const { return codes_a.size(); }
    LatentCodeExt code_b(std::size_t i) const;
    PairedSample pair(std::size_t i) const;
};

PairedDataset build_pair_dataset(const std::vector<Tensor>& mods, const ToyWorld& world, int count,
                                 float strength, Rng& rng);

struct VaeSpec {
    int image_size = 32;
    int latent_dim = 6;
    // Encoder channels are fixed at 16/32/64 (stride-2 stages with tanh).
};

struct VaeParams {
    // encoder
    Tensor w1, b1, w2, b2, w3, b3;
    Tensor w_mu, b_mu, w_lv, b_lv;
    // decoder
    Tensor w_dec, b_dec;
    Tensor u1, c1, u2, c2, u3, c3, u4, c4;

    static VaeParams init(const VaeSpec& spec, Rng& rng);
    std::vector<std::pair<const char*, Tensor*>> named();
};

// Node ids of the parameters once registered in a graph.
struct VaeNodeIds {
    int w1, b1, w2, b2, w3, b3, w_mu, b_mu, w_lv, b_lv;
    int w_dec, b_dec, u1, c1, u2, c2, u3, c3, u4, c4;

    // Same order as VaeParams::named().
    std::vector<int> list() const {
        return {w1, b1, w2, b2, w3, b3, w_mu, b_mu, w_lv, b_lv,
                w_dec, b_dec, u1, c1, u2, c2, u3, c3, u4, c4};
    }
};

VaeNodeIds register_vae(ad::Graph& g, VaeParams& p);
std::pair<int, int> encode_op(ad::Graph& g, const VaeNodeIds& ids, const VaeSpec& spec, int img);
int decode_op(ad::Graph& g, const VaeNodeIds& ids, const VaeSpec& spec, int z);

// Pair objective: reconstruction (unit-scale Gaussian, SSE/2) of both images
// plus KL of both merged posteriors. shared_mask[i] == 1 averages dimension i
// across the pair; an all-zero mask degenerates to two independent VAE terms.
int pair_elbo_op(ad::Graph& g, const VaeNodeIds& ids, const VaeSpec& spec, const Image& a,
                 const Image& b, const std::vector<float>& shared_mask, const Tensor& noise_a,
                 const Tensor& noise_b);

// Plain forward encoder (mean head), used for metric evaluation.
std::vector<float> encode_mean(const VaeParams& p, const VaeSpec& spec, const Image& img);

struct VaeTrainConfig {
    std::uint64_t seed = 1;
    int steps = 1500;
    int batch_size = 8;
    float lr = 1e-3f;
    bool group_merge = true;  // false: plain VAE on the same images
};

struct VaeModel {
    VaeSpec spec;
    VaeParams params;
    std::vector<float> loss_trace;
};

VaeModel train_group_vae(const PairedDataset& dataset, const VaeSpec& spec,
                         const VaeTrainConfig& cfg);

}  // namespace contrafeat
