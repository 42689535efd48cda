#include "partseg/priors.hpp"

namespace partseg::priors {

using torch::indexing::None;
using torch::indexing::Slice;

torch::Tensor normalize_segmentation(const torch::Tensor& logits) {
    TORCH_CHECK(logits.dim() >= 3, "expected [..., N, H, W] logits, got dim ", logits.dim());
    if (logits.isnan().any().item<bool>()) throw NumericError("normalize_segmentation: NaN logits");
    // softmax subtracts the per-pixel max internally
    return torch::softmax(logits, -3);
}

torch::Tensor gmrf_kl(const torch::Tensor& logits) {
    TORCH_CHECK(logits.dim() >= 3, "expected [..., N, H, W] logits");
    if (logits.size(-1) < 2 || logits.size(-2) < 2)
        throw ConfigError("gmrf_kl needs H, W >= 2");
    const auto dv = logits.index({torch::indexing::Ellipsis, Slice(1, None), Slice()}) -
                    logits.index({torch::indexing::Ellipsis, Slice(None, -1), Slice()});
    const auto du = logits.index({torch::indexing::Ellipsis, Slice(), Slice(1, None)}) -
                    logits.index({torch::indexing::Ellipsis, Slice(), Slice(None, -1)});
    return dv.pow(2).sum() + du.pow(2).sum();
}

torch::Tensor entropy_reg(const torch::Tensor& probs) {
    TORCH_CHECK(probs.dim() >= 3, "expected [..., N, H, W] probs");
    return -(probs * torch::log(probs.clamp_min(1e-12))).sum();
}

torch::Tensor gaussian_kl(const GaussianPosterior& post) {
    TORCH_CHECK(post.mean.sizes() == post.logvar.sizes(), "mean/logvar shape mismatch");
    return 0.5 * (post.logvar.exp() + post.mean.pow(2) - 1.0 - post.logvar).sum();
}

}  // namespace partseg::priors
