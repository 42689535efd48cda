#pragma once

#include <torch/torch.h>

#include "partseg/common.hpp"

namespace partseg::priors {

// Per-pixel categorical distribution over parts. probs is always the softmax
// of logits over the part axis. Layout: [N, H, W] or batched [B, N, H, W].
struct SegmentationMap {
    torch::Tensor logits;
    torch::Tensor probs;
};

// Diagonal-Gaussian posterior over the shape code.
struct GaussianPosterior {
    torch::Tensor mean;
    torch::Tensor logvar;
};

// Numerically stable softmax over the part axis (dim -3).
torch::Tensor normalize_segmentation(const torch::Tensor& logits);

// Sum of squared forward-difference spatial gradients of the logits.
// Replicate boundary: the last row/column contributes zero differences.
torch::Tensor gmrf_kl(const torch::Tensor& logits);

// Shannon entropy of the per-pixel part distribution, summed over pixels.
// Natural log, 0*log(0) := 0 via a 1e-12 clamp inside the log.
torch::Tensor entropy_reg(const torch::Tensor& probs);

// Closed-form KL(N(mu, diag sigma^2) || N(0, I)).
torch::Tensor gaussian_kl(const GaussianPosterior& post);

}  // namespace partseg::priors
