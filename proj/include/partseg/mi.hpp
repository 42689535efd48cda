#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "partseg/common.hpp"

namespace partseg::mi {

// EMA tracker for the adversary's mean logit I_T.
struct MiEstimate {
    double value = 0.0;
    double decay = 0.99;
    std::int64_t step = 0;
};

// Reorders the rows of alphas [B, D] by a uniformly drawn non-identity
// permutation, yielding in-batch samples from the product of marginals.
torch::Tensor shuffle_marginals(const torch::Tensor& alphas, std::uint64_t seed);

// Value the adversary maximizes: mean log sigma(t_joint) + mean log(1 - sigma(t_marginal)).
torch::Tensor adversary_objective(const torch::Tensor& t_joint, const torch::Tensor& t_marginal);

// Mean adversary logit on joint pairs; the dependence penalty fed to the shape encoder.
torch::Tensor mi_penalty(const torch::Tensor& t_joint);

MiEstimate update_mi_ema(MiEstimate est, double batch_value);

}  // namespace partseg::mi
