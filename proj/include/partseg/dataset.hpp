#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "partseg/common.hpp"
#include "partseg/sprites.hpp"

namespace partseg::data {

// PNG / CSV primitives for the on-disk dataset layout
// root/{train,val,test}/<instance_id>/<pose_id>.png (+ .mask.png, .kps.csv).
void save_image_png(const std::string& path, const torch::Tensor& image);
torch::Tensor load_image_png(const std::string& path);
void save_mask_png(const std::string& path, const torch::Tensor& class_map);
torch::Tensor load_mask_png(const std::string& path);
void save_keypoints_csv(const std::string& path, const std::vector<eval::Keypoint>& kps);
std::vector<eval::Keypoint> load_keypoints_csv(const std::string& path);

void write_sample(const std::string& instance_dir, std::int64_t pose_id, const synth::Sample& sample);

struct Instance {
    std::int64_t id = 0;
    std::vector<synth::Sample> poses;
};

// Loads one split fully into memory, instances sorted by id, poses by pose id.
std::vector<Instance> load_split(const std::string& root, const std::string& split);

// Flattened view of a split for evaluation.
std::vector<synth::Sample> flatten(const std::vector<Instance>& instances);

struct PairBatch {
    torch::Tensor x1;  // [B, 3, H, W]
    torch::Tensor x2;
};

// Deterministic stream of same-instance image pairs with optional horizontal
// flip applied identically to both images of a pair.
class PairLoader {
public:
    // Dataset-directory mode.
    PairLoader(const std::string& root, const std::string& split, std::int64_t batch_size,
               double flip_prob, std::uint64_t seed);
    // Generator mode: sprite pairs synthesized from (seed, pair index).
    PairLoader(const synth::SpriteSpec& spec, std::int64_t num_pairs, std::int64_t batch_size,
               double flip_prob, std::uint64_t seed);

    PairBatch next();

    std::int64_t num_pairs() const { return static_cast<std::int64_t>(pairs_.size()); }
    std::string rng_state() const;
    void set_rng_state(const std::string& state);

private:
    void push_pair(const torch::Tensor& a, const torch::Tensor& b);

    std::vector<std::pair<torch::Tensor, torch::Tensor>> pairs_;  // uint8 [3, H, W]
    std::int64_t batch_size_;
    double flip_prob_;
    std::mt19937_64 rng_;
};

}  // namespace partseg::data
