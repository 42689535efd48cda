#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "partseg/common.hpp"
#include "partseg/config.hpp"
#include "partseg/priors.hpp"

namespace partseg::nets {

struct NetConfig {
    std::int64_t image_size = 64;
    std::int64_t num_parts = 5;
    std::int64_t dim_alpha = 64;
    std::int64_t dim_pi = 64;
    double width_multiplier = 0.25;
    bool coords_shape_encoder = true;
    bool coords_mask_decoder = true;
    bool coords_appearance_encoder = false;
    bool coords_generator = false;

    void validate() const;
    bool operator==(const NetConfig&) const = default;
    static NetConfig from_config(const KeyValueConfig& cfg);
    void to_config(KeyValueConfig& cfg) const;

    std::int64_t scaled(std::int64_t channels) const;  // width_multiplier applied, min 4
};

// Appends two channels holding row/column coordinates normalized to [-1, 1]
// (pixel-center convention; a 1x1 map gets coordinate 0).
torch::Tensor coord_append(const torch::Tensor& x);

// 3x3 conv with optional coordinate-channel augmentation of its input.
class CoordConv2dImpl : public torch::nn::Module {
public:
    CoordConv2dImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, std::int64_t stride,
                    bool coords);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv{nullptr};
    bool coords;
};
TORCH_MODULE(CoordConv2d);

// y = conv(leaky_relu(x)) + x
class ResidualBlockImpl : public torch::nn::Module {
public:
    ResidualBlockImpl(std::int64_t channels, bool coords);
    torch::Tensor forward(const torch::Tensor& x);

    CoordConv2d conv{nullptr};
};
TORCH_MODULE(ResidualBlock);

// y = conv(concat(leaky_relu(x), 1x1conv(leaky_relu(skip)))) + x
class ResidualSkipBlockImpl : public torch::nn::Module {
public:
    ResidualSkipBlockImpl(std::int64_t channels, std::int64_t skip_channels, bool coords);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& skip);

    CoordConv2d conv{nullptr};
    torch::nn::Conv2d skip_proj{nullptr};
};
TORCH_MODULE(ResidualSkipBlock);

// Strided residual pyramid to 4x4, four extra residual blocks, global mean
// pooling, 1x1 projection to out_dim.
class ImageEncoderImpl : public torch::nn::Module {
public:
    ImageEncoderImpl(const NetConfig& cfg, std::int64_t out_dim, bool coords);
    torch::Tensor forward(const torch::Tensor& x);  // [B, 3, H, W] -> [B, out_dim]

    torch::nn::Sequential features{nullptr};
    torch::nn::Linear proj{nullptr};
};
TORCH_MODULE(ImageEncoder);

class AppearanceEncoderImpl : public torch::nn::Module {
public:
    explicit AppearanceEncoderImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x) { return body->forward(x); }

    ImageEncoder body{nullptr};
};
TORCH_MODULE(AppearanceEncoder);

class ShapeEncoderImpl : public torch::nn::Module {
public:
    explicit ShapeEncoderImpl(const NetConfig& cfg);
    priors::GaussianPosterior forward(const torch::Tensor& x);  // mean, diagonal logvar

    ImageEncoder body{nullptr};
    std::int64_t dim_pi;
};
TORCH_MODULE(ShapeEncoder);

// pi -> logits l [B, N, H, W]: 1x1 projection to a 4x4 seed, residual/upsample
// ladder to image resolution, final conv to N channels.
class MaskDecoderImpl : public torch::nn::Module {
public:
    explicit MaskDecoderImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& pi);

    torch::nn::Linear seed_proj{nullptr};
    torch::nn::Sequential ladder{nullptr};
    std::int64_t seed_channels;
};
TORCH_MODULE(MaskDecoder);

// Shallow hourglass with one internal skip; input concat(S_alpha, p).
class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x);  // [B, dim_alpha + N, H, W] -> [B, 3, H, W]

    CoordConv2d stem{nullptr};
    ResidualBlock res_in{nullptr};
    CoordConv2d down{nullptr};
    ResidualBlock res_a{nullptr};
    ResidualBlock res_b{nullptr};
    ResidualSkipBlock res_skip{nullptr};
    CoordConv2d up_conv{nullptr};
    ResidualBlock res_out{nullptr};
    CoordConv2d out_conv{nullptr};
};
TORCH_MODULE(Generator);

// Simple classifier on concat(pi, alpha): 3 hidden layers of width 256.
class AdversaryImpl : public torch::nn::Module {
public:
    explicit AdversaryImpl(const NetConfig& cfg);
    torch::Tensor forward(const torch::Tensor& pi, const torch::Tensor& alpha);  // [B] logits

    torch::nn::Sequential mlp{nullptr};
};
TORCH_MODULE(Adversary);

// The five parametric functions plus their config, with stable dotted names.
struct ModelSet {
    NetConfig cfg;
    AppearanceEncoder e_alpha{nullptr};
    ShapeEncoder e_shape{nullptr};
    MaskDecoder d_mask{nullptr};
    Generator gen{nullptr};
    Adversary adv{nullptr};

    static ModelSet make(const NetConfig& cfg, std::uint64_t seed);

    std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;
    std::vector<torch::Tensor> parameters() const;
    std::vector<torch::Tensor> model_parameters() const;      // everything but the adversary
    std::vector<torch::Tensor> adversary_parameters() const;
    std::vector<torch::Tensor> mask_decoder_parameters() const;
    void to(torch::ScalarType dtype);
    void train(bool on = true);
};

// He-style fan-in initialization for every conv/linear in the module tree.
void he_init(torch::nn::Module& module);

}  // namespace partseg::nets
