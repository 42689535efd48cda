#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

#include "partseg/mi.hpp"
#include "partseg/nets.hpp"
#include "partseg/priors.hpp"

namespace partseg::pipeline {

enum class ReconMode { PixelL2, Perceptual };

struct LatentCodes {
    torch::Tensor pi_mean;    // [B, dim_pi]
    torch::Tensor pi_logvar;  // [B, dim_pi]
    torch::Tensor pi_sample;  // [B, dim_pi]
    torch::Tensor alpha_parts;  // [B, N, dim_alpha]
    torch::Tensor alpha_full;   // [B, dim_alpha], unmasked code fed to the adversary
};

struct ForwardResult {
    torch::Tensor recon;
    priors::SegmentationMap seg1;
    priors::SegmentationMap seg2;
    LatentCodes codes;
    std::map<std::string, torch::Tensor> losses;  // rec, kl_pi, gmrf, entropy, adv_penalty
};

struct ForwardOptions {
    ReconMode recon_mode = ReconMode::PixelL2;
    bool detach_s2 = true;
    std::int64_t perceptual_octaves = 3;
};

// S = softmax(D_m(mu_pi(x))); deterministic, uses the posterior mean.
priors::SegmentationMap infer_segmentation(nets::ModelSet& model, const torch::Tensor& x);

// Soft-masks x2 with each part probability map and encodes every masked image.
torch::Tensor extract_part_appearances(nets::ModelSet& model, const torch::Tensor& x2,
                                       const torch::Tensor& probs2);  // -> [B, N, dim_alpha]

// S_alpha(u,v) = sum_i alpha_i * p_i(u,v); per-pixel convex combination.
torch::Tensor expected_appearance_map(const torch::Tensor& probs, const torch::Tensor& alphas);

// pixel_l2: 0.5 * sum of squared error per image, batch-averaged (Gaussian NLL
// up to a constant). perceptual: pixel_l2 summed over downsampled octaves plus
// first-order gradient maps at each octave.
torch::Tensor reconstruction_loss(const torch::Tensor& target, const torch::Tensor& recon,
                                  ReconMode mode, std::int64_t octaves = 3);

// One training forward pass over an image pair; assembles all loss terms.
ForwardResult forward_train(nets::ModelSet& model, const torch::Tensor& x1,
                            const torch::Tensor& x2, const ForwardOptions& opts,
                            torch::Generator& gen);

// Reconstructs x_pose with appearance codes of the active parts taken from x_app.
torch::Tensor transfer_appearance(nets::ModelSet& model, const torch::Tensor& x_pose,
                                  const torch::Tensor& x_app,
                                  const std::vector<std::int64_t>& active_parts);

}  // namespace partseg::pipeline
