#include "partseg/tps.hpp"

#include <cmath>

namespace partseg::synth {

void TpsParams::validate(double max_disp) const {
    TORCH_CHECK(grid.dim() == 3 && grid.size(2) == 2, "tps grid must be [G, G, 2]");
    TORCH_CHECK(displacements.sizes() == grid.sizes(), "tps displacement shape mismatch");
    if (regularization < 0.0) throw ConfigError("tps regularization must be nonnegative");
    const double lo = grid.min().item<double>();
    const double hi = grid.max().item<double>();
    if (lo < -1e-9 || hi > 1.0 + 1e-9) throw ConfigError("tps grid must cover [0,1]^2");
    const double dmax = displacements.abs().max().item<double>();
    if (dmax > max_disp + 1e-9)
        throw ConfigError("tps displacement " + std::to_string(dmax) + " exceeds max " + std::to_string(max_disp));
}

TpsParams random_tps(std::int64_t grid_size, double max_disp, std::uint64_t seed, double regularization) {
    TORCH_CHECK(grid_size >= 2, "tps grid_size must be >= 2");
    TpsParams params;
    params.regularization = regularization;
    const auto axis = torch::linspace(0.0, 1.0, grid_size, torch::kFloat64);
    const auto rows = axis.view({grid_size, 1}).expand({grid_size, grid_size});
    const auto cols = axis.view({1, grid_size}).expand({grid_size, grid_size});
    params.grid = torch::stack({rows, cols}, 2).contiguous();
    auto rng = make_rng(seed, 0x40u);
    std::uniform_real_distribution<double> u(-max_disp, max_disp);
    auto disp = torch::zeros({grid_size, grid_size, 2}, torch::kFloat64);
    auto acc = disp.accessor<double, 3>();
    for (std::int64_t r = 0; r < grid_size; ++r)
        for (std::int64_t c = 0; c < grid_size; ++c)
            for (int d = 0; d < 2; ++d) acc[r][c][d] = u(rng);
    params.displacements = disp;
    return params;
}

namespace {

// U(r) = r^2 log(r), with U(0) = 0.
torch::Tensor tps_kernel(const torch::Tensor& dist) {
    return dist.pow(2) * torch::log(dist.clamp_min(1e-12));
}

torch::Tensor pairwise_dist(const torch::Tensor& a, const torch::Tensor& b) {
    return torch::cdist(a, b);
}

}  // namespace

TpsInterpolant::TpsInterpolant(const torch::Tensor& sites, const torch::Tensor& values,
                               double regularization) {
    sites_ = sites.to(torch::kFloat64).contiguous();
    const auto vals = values.to(torch::kFloat64);
    const auto m = sites_.size(0);
    const auto kernel = tps_kernel(pairwise_dist(sites_, sites_)) +
                        regularization * torch::eye(m, torch::kFloat64);
    const auto poly = torch::cat({torch::ones({m, 1}, torch::kFloat64), sites_}, 1);  // [M, 3]
    auto system = torch::zeros({m + 3, m + 3}, torch::kFloat64);
    system.index_put_({torch::indexing::Slice(0, m), torch::indexing::Slice(0, m)}, kernel);
    system.index_put_({torch::indexing::Slice(0, m), torch::indexing::Slice(m, m + 3)}, poly);
    system.index_put_({torch::indexing::Slice(m, m + 3), torch::indexing::Slice(0, m)}, poly.t());
    auto rhs = torch::cat({vals, torch::zeros({3, 2}, torch::kFloat64)}, 0);
    torch::Tensor solution;
    try {
        solution = torch::linalg_solve(system, rhs);
    } catch (const c10::Error&) {
        throw ConfigError(
            "singular TPS system: collinear or duplicate control points with zero regularization");
    }
    if (!solution.isfinite().all().item<bool>())
        throw ConfigError(
            "singular TPS system: collinear or duplicate control points with zero regularization");
    weights_ = solution.index({torch::indexing::Slice(0, m)}).contiguous();
    affine_ = solution.index({torch::indexing::Slice(m, m + 3)}).contiguous();
}

torch::Tensor TpsInterpolant::evaluate(const torch::Tensor& points) const {
    const auto p = points.to(torch::kFloat64);
    const auto kernel = tps_kernel(pairwise_dist(p, sites_));  // [P, M]
    const auto poly = torch::cat({torch::ones({p.size(0), 1}, torch::kFloat64), p}, 1);
    return kernel.matmul(weights_) + poly.matmul(affine_);
}

namespace {

torch::Tensor flat_sites(const TpsParams& params) { return params.grid.reshape({-1, 2}); }
torch::Tensor flat_disp(const TpsParams& params) {
    return params.displacements.reshape({-1, 2}).to(torch::kFloat64);
}

// Normalized (row, col) positions of every pixel center, [H*W, 2].
torch::Tensor pixel_points(std::int64_t h, std::int64_t w) {
    const auto rows = torch::arange(h, torch::kFloat64).div(static_cast<double>(h - 1));
    const auto cols = torch::arange(w, torch::kFloat64).div(static_cast<double>(w - 1));
    const auto rg = rows.view({h, 1}).expand({h, w});
    const auto cg = cols.view({1, w}).expand({h, w});
    return torch::stack({rg.reshape(-1), cg.reshape(-1)}, 1);
}

// Source pixel coordinates for the inverse warp, each [H*W] double.
std::pair<torch::Tensor, torch::Tensor> source_coords(const TpsParams& params, std::int64_t h,
                                                      std::int64_t w) {
    // Inverse map: fit the displaced sites back to their origins.
    const auto sites = flat_sites(params) + flat_disp(params);
    const TpsInterpolant inverse(sites, -flat_disp(params), params.regularization);
    const auto points = pixel_points(h, w);
    const auto src = points + inverse.evaluate(points);
    auto src_r = src.select(1, 0) * static_cast<double>(h - 1);
    auto src_c = src.select(1, 1) * static_cast<double>(w - 1);
    // border replication
    src_r = src_r.clamp(0.0, static_cast<double>(h - 1));
    src_c = src_c.clamp(0.0, static_cast<double>(w - 1));
    return {src_r, src_c};
}

}  // namespace

torch::Tensor tps_warp(const torch::Tensor& image, const TpsParams& params) {
    TORCH_CHECK(image.dim() == 3, "tps_warp expects [C, H, W]");
    const auto h = image.size(1);
    const auto w = image.size(2);
    auto [src_r, src_c] = source_coords(params, h, w);
    const auto r0 = src_r.floor().clamp(0, static_cast<double>(h - 1));
    const auto c0 = src_c.floor().clamp(0, static_cast<double>(w - 1));
    const auto r1 = (r0 + 1).clamp(0, static_cast<double>(h - 1));
    const auto c1 = (c0 + 1).clamp(0, static_cast<double>(w - 1));
    const auto fr = (src_r - r0).to(image.dtype());
    const auto fc = (src_c - c0).to(image.dtype());
    const auto flat = image.reshape({image.size(0), h * w});
    auto gather_at = [&](const torch::Tensor& rr, const torch::Tensor& cc) {
        const auto idx = (rr * static_cast<double>(w) + cc).to(torch::kInt64);
        return flat.index_select(1, idx);
    };
    const auto v00 = gather_at(r0, c0);
    const auto v01 = gather_at(r0, c1);
    const auto v10 = gather_at(r1, c0);
    const auto v11 = gather_at(r1, c1);
    const auto out = v00 * (1 - fr) * (1 - fc) + v01 * (1 - fr) * fc + v10 * fr * (1 - fc) +
                     v11 * fr * fc;
    return out.reshape(image.sizes()).contiguous();
}

torch::Tensor tps_warp_nearest(const torch::Tensor& id_map, const TpsParams& params) {
    TORCH_CHECK(id_map.dim() == 2, "tps_warp_nearest expects [H, W]");
    const auto h = id_map.size(0);
    const auto w = id_map.size(1);
    auto [src_r, src_c] = source_coords(params, h, w);
    const auto rr = src_r.round().clamp(0, static_cast<double>(h - 1)).to(torch::kInt64);
    const auto cc = src_c.round().clamp(0, static_cast<double>(w - 1)).to(torch::kInt64);
    const auto idx = rr * w + cc;
    return id_map.reshape(-1).index_select(0, idx).reshape({h, w}).contiguous();
}

std::pair<double, double> tps_map_point(const TpsParams& params, double row, double col,
                                        std::int64_t height, std::int64_t width) {
    const TpsInterpolant forward(flat_sites(params), flat_disp(params), params.regularization);
    auto point = torch::tensor({{row / static_cast<double>(height - 1),
                                 col / static_cast<double>(width - 1)}},
                               torch::kFloat64);
    const auto mapped = point + forward.evaluate(point);
    return {mapped[0][0].item<double>() * static_cast<double>(height - 1),
            mapped[0][1].item<double>() * static_cast<double>(width - 1)};
}

Sample warp_sample(const Sample& sample, const TpsParams& params) {
    Sample out;
    out.image = tps_warp(sample.image, params);
    const auto ids = tps_warp_nearest(sample.class_map(), params);
    const auto parts = sample.gt_masks.size(0);
    out.gt_masks = torch::zeros_like(sample.gt_masks);
    for (std::int64_t k = 0; k < parts; ++k) out.gt_masks[k] = ids == (k + 1);
    const auto h = sample.image.size(1);
    const auto w = sample.image.size(2);
    for (const auto& kp : sample.gt_keypoints) {
        if (!kp) {
            out.gt_keypoints.push_back(std::nullopt);
            continue;
        }
        const auto [r, c] = tps_map_point(params, kp->first, kp->second, h, w);
        if (r < 0 || c < 0 || r > static_cast<double>(h - 1) || c > static_cast<double>(w - 1))
            out.gt_keypoints.push_back(std::nullopt);
        else
            out.gt_keypoints.push_back(std::make_pair(r, c));
    }
    out.instance_id = sample.instance_id;
    out.pose_seed = sample.pose_seed;
    return out;
}

std::pair<Sample, Sample> make_tps_pair(const Sample& sample, std::uint64_t seed, double max_disp) {
    const auto params_a = random_tps(5, max_disp, mix_seed(seed, 0x41u));
    const auto params_b = random_tps(5, max_disp, mix_seed(seed, 0x42u));
    return {warp_sample(sample, params_a), warp_sample(sample, params_b)};
}

}  // namespace partseg::synth
