#pragma once

#include <torch/torch.h>

#include <utility>
#include <vector>

#include "partseg/common.hpp"
#include "partseg/config.hpp"
#include "partseg/evalmetrics.hpp"

namespace partseg::synth {

// Procedural articulated sprite: a kinematic chain of rectangular segments.
struct SpriteSpec {
    std::int64_t num_parts = 3;
    std::vector<double> part_lengths;  // fractions of image height
    std::vector<double> part_widths;   // fractions of image height
    double angle_range = 1.4;          // radians for joint-angle sampling
    enum class Palette { RandomHuePerPart, SharedHue } palette = Palette::RandomHuePerPart;
    enum class Background { Solid, Noise } background = Background::Solid;
    std::int64_t image_size = 64;

    void validate() const;
    static SpriteSpec from_config(const KeyValueConfig& cfg);
};

struct Sample {
    torch::Tensor image;     // [3, H, W] float32 in [0, 1]
    torch::Tensor gt_masks;  // [K, H, W] bool, pairwise disjoint
    std::vector<eval::Keypoint> gt_keypoints;  // part centroids, (row, col) pixels
    std::int64_t instance_id = 0;
    std::int64_t pose_seed = 0;

    // Per-pixel class-id map: 0 = background, k = part k (1-based).
    torch::Tensor class_map() const;
};

// Deterministic render: hue_seed fixes the palette, pose_seed the articulation.
Sample render_sprite(const SpriteSpec& spec, std::uint64_t hue_seed, std::uint64_t pose_seed,
                     std::int64_t instance_id);

// Same instance (palette), independently resampled poses.
std::pair<Sample, Sample> generate_sprite_pair(std::uint64_t seed, const SpriteSpec& spec);

// Same pose, independently resampled palette. Ground-truth masks are identical.
std::pair<Sample, Sample> generate_hue_pair(std::uint64_t seed, const SpriteSpec& spec);

torch::Tensor hsv_to_rgb(double h, double s, double v);  // [3]

}  // namespace partseg::synth
