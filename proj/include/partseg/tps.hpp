#pragma once

#include <torch/torch.h>

#include <utility>

#include "partseg/common.hpp"
#include "partseg/sprites.hpp"

namespace partseg::synth {

// Thin-plate-spline control grid over [0,1]^2 with per-point displacements.
struct TpsParams {
    torch::Tensor grid;           // [G, G, 2] (row, col) in normalized coordinates
    torch::Tensor displacements;  // [G, G, 2] normalized offsets
    double regularization = 1e-6;

    void validate(double max_disp) const;
};

// Uniform grid with displacements drawn from U(-max_disp, max_disp) per point.
TpsParams random_tps(std::int64_t grid_size, double max_disp, std::uint64_t seed,
                     double regularization = 1e-6);

// Fitted TPS interpolant of a displacement field over scattered sites.
class TpsInterpolant {
public:
    // sites [M, 2], values [M, 2]; solves the regularized bending-energy system.
    TpsInterpolant(const torch::Tensor& sites, const torch::Tensor& values, double regularization);

    // points [P, 2] -> interpolated displacements [P, 2]
    torch::Tensor evaluate(const torch::Tensor& points) const;

private:
    torch::Tensor sites_;    // [M, 2] double
    torch::Tensor weights_;  // [M, 2]
    torch::Tensor affine_;   // [3, 2]
};

// Resamples image [C, H, W] through the TPS interpolant fitted to the control
// displacements. Bilinear sampling, border replication outside the image.
torch::Tensor tps_warp(const torch::Tensor& image, const TpsParams& params);

// Hard (nearest-neighbor) resampling of an integer id map [H, W].
torch::Tensor tps_warp_nearest(const torch::Tensor& id_map, const TpsParams& params);

// Forward-maps a pixel position through the TPS transform.
std::pair<double, double> tps_map_point(const TpsParams& params, double row, double col,
                                        std::int64_t height, std::int64_t width);

// Applies one warp to image, masks, and keypoints together.
Sample warp_sample(const Sample& sample, const TpsParams& params);

// Two independent TPS draws applied to the same source sample.
std::pair<Sample, Sample> make_tps_pair(const Sample& sample, std::uint64_t seed, double max_disp);

}  // namespace partseg::synth
