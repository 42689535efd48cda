#include "partseg/pipeline.hpp"

namespace partseg::pipeline {

namespace {

priors::SegmentationMap to_segmentation(const torch::Tensor& logits) {
    return {logits, priors::normalize_segmentation(logits)};
}

}  // namespace

priors::SegmentationMap infer_segmentation(nets::ModelSet& model, const torch::Tensor& x) {
    const auto batched = x.dim() == 3 ? x.unsqueeze(0) : x;
    const auto post = model.e_shape->forward(batched);
    auto seg = to_segmentation(model.d_mask->forward(post.mean));
    if (x.dim() == 3) {
        seg.logits = seg.logits.squeeze(0);
        seg.probs = seg.probs.squeeze(0);
    }
    return seg;
}

torch::Tensor extract_part_appearances(nets::ModelSet& model, const torch::Tensor& x2,
                                       const torch::Tensor& probs2) {
    TORCH_CHECK(x2.dim() == 4 && probs2.dim() == 4, "expected batched [B, C, H, W] inputs");
    TORCH_CHECK(x2.size(0) == probs2.size(0), "batch mismatch");
    const auto batch = x2.size(0);
    const auto parts = probs2.size(1);
    // x_{2,i} = p_i (.) x2, broadcast over color channels; all N encoder
    // evaluations run as one batch of B*N masked images.
    const auto masked = probs2.unsqueeze(2) * x2.unsqueeze(1);  // [B, N, 3, H, W]
    const auto flat = masked.reshape({batch * parts, x2.size(1), x2.size(2), x2.size(3)});
    const auto codes = model.e_alpha->forward(flat);
    return codes.reshape({batch, parts, codes.size(1)});
}

torch::Tensor expected_appearance_map(const torch::Tensor& probs, const torch::Tensor& alphas) {
    TORCH_CHECK(probs.dim() == 4 && alphas.dim() == 3, "expected probs [B,N,H,W], alphas [B,N,D]");
    TORCH_CHECK(probs.size(0) == alphas.size(0) && probs.size(1) == alphas.size(1),
                "probs/alphas dimension mismatch: ", probs.sizes(), " vs ", alphas.sizes());
    return torch::einsum("bnhw,bnd->bdhw", {probs, alphas});
}

namespace {

torch::Tensor pixel_l2(const torch::Tensor& target, const torch::Tensor& recon) {
    const auto batch = target.size(0);
    return (recon - target).pow(2).sum() / (2.0 * static_cast<double>(batch));
}

torch::Tensor grad_rows(const torch::Tensor& x) {
    using torch::indexing::None;
    using torch::indexing::Slice;
    return x.index({torch::indexing::Ellipsis, Slice(1, None), Slice()}) -
           x.index({torch::indexing::Ellipsis, Slice(None, -1), Slice()});
}

torch::Tensor grad_cols(const torch::Tensor& x) {
    using torch::indexing::None;
    using torch::indexing::Slice;
    return x.index({torch::indexing::Ellipsis, Slice(), Slice(1, None)}) -
           x.index({torch::indexing::Ellipsis, Slice(), Slice(None, -1)});
}

}  // namespace

torch::Tensor reconstruction_loss(const torch::Tensor& target, const torch::Tensor& recon,
                                  ReconMode mode, std::int64_t octaves) {
    TORCH_CHECK(target.sizes() == recon.sizes(), "reconstruction shape mismatch: ", target.sizes(),
                " vs ", recon.sizes());
    const auto t = target.dim() == 3 ? target.unsqueeze(0) : target;
    const auto r = recon.dim() == 3 ? recon.unsqueeze(0) : recon;
    if (mode == ReconMode::PixelL2) return pixel_l2(t, r);

    // self-contained perceptual proxy: image pyramid plus first-order gradients
    auto total = torch::zeros({}, t.options());
    auto ct = t;
    auto cr = r;
    for (std::int64_t level = 0; level <= octaves; ++level) {
        total = total + pixel_l2(ct, cr);
        total = total + pixel_l2(grad_rows(ct), grad_rows(cr));
        total = total + pixel_l2(grad_cols(ct), grad_cols(cr));
        if (level < octaves && ct.size(2) >= 2 && ct.size(3) >= 2) {
            ct = torch::avg_pool2d(ct, 2);
            cr = torch::avg_pool2d(cr, 2);
        }
    }
    return total;
}

ForwardResult forward_train(nets::ModelSet& model, const torch::Tensor& x1,
                            const torch::Tensor& x2, const ForwardOptions& opts,
                            torch::Generator& gen) {
    TORCH_CHECK(x1.dim() == 4 && x1.sizes() == x2.sizes(), "forward_train expects matching [B,3,H,W]");
    const auto batch = x1.size(0);

    ForwardResult result;
    const auto post1 = model.e_shape->forward(x1);
    const auto eps = torch::randn(post1.mean.sizes(), gen, post1.mean.options());
    const auto pi = post1.mean + torch::exp(0.5 * post1.logvar) * eps;
    result.seg1 = to_segmentation(model.d_mask->forward(pi));

    // S2 from x2's posterior mean; with detach_s2 the appearance branch cannot
    // push pose gradients into the shape encoder.
    torch::Tensor l2;
    if (opts.detach_s2) {
        torch::NoGradGuard no_grad;
        l2 = model.d_mask->forward(model.e_shape->forward(x2).mean);
    } else {
        l2 = model.d_mask->forward(model.e_shape->forward(x2).mean);
    }
    result.seg2 = to_segmentation(l2);

    const auto alphas = extract_part_appearances(model, x2, result.seg2.probs);
    const auto appearance = expected_appearance_map(result.seg1.probs, alphas);
    result.recon = model.gen->forward(torch::cat({appearance, result.seg1.probs}, 1));

    result.codes.pi_mean = post1.mean;
    result.codes.pi_logvar = post1.logvar;
    result.codes.pi_sample = pi;
    result.codes.alpha_parts = alphas;
    result.codes.alpha_full = model.e_alpha->forward(x2);

    const double b = static_cast<double>(batch);
    result.losses["rec"] =
        reconstruction_loss(x1, result.recon, opts.recon_mode, opts.perceptual_octaves);
    result.losses["kl_pi"] = priors::gaussian_kl({post1.mean, post1.logvar}) / b;
    result.losses["gmrf"] = priors::gmrf_kl(result.seg1.logits) / b;
    result.losses["entropy"] = priors::entropy_reg(result.seg1.probs) / b;
    // dependence penalty: gradient reaches pi through T, never T's parameters
    result.losses["adv_penalty"] =
        mi::mi_penalty(model.adv->forward(pi, result.codes.alpha_full.detach()));
    return result;
}

torch::Tensor transfer_appearance(nets::ModelSet& model, const torch::Tensor& x_pose,
                                  const torch::Tensor& x_app,
                                  const std::vector<std::int64_t>& active_parts) {
    torch::NoGradGuard no_grad;
    const auto pose = x_pose.dim() == 3 ? x_pose.unsqueeze(0) : x_pose;
    const auto app = x_app.dim() == 3 ? x_app.unsqueeze(0) : x_app;
    const auto parts = model.cfg.num_parts;
    for (auto p : active_parts)
        if (p < 1 || p > parts)
            throw ConfigError("transfer_appearance: part id " + std::to_string(p) +
                              " outside 1.." + std::to_string(parts));

    const auto seg_pose = infer_segmentation(model, pose);
    const auto seg_app = infer_segmentation(model, app);
    auto alphas = extract_part_appearances(model, pose, seg_pose.probs);
    const auto alphas_app = extract_part_appearances(model, app, seg_app.probs);
    for (auto p : active_parts)
        alphas.select(1, p - 1).copy_(alphas_app.select(1, p - 1));

    const auto appearance = expected_appearance_map(seg_pose.probs, alphas);
    auto out = model.gen->forward(torch::cat({appearance, seg_pose.probs}, 1));
    return x_pose.dim() == 3 ? out.squeeze(0) : out;
}

}  // namespace partseg::pipeline
