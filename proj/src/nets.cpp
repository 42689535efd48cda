#include "partseg/nets.hpp"

#include <cmath>

namespace partseg::nets {

namespace {

bool is_pow2(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

std::int64_t num_scales(std::int64_t image_size) {
    std::int64_t n = 0;
    for (std::int64_t s = image_size; s > 4; s /= 2) ++n;
    return n;
}

constexpr double kLeakySlope = 0.2;

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

}  // namespace

void NetConfig::validate() const {
    if (num_parts < 2) throw ConfigError("net config: num_parts must be >= 2");
    if (dim_alpha < 1 || dim_pi < 1) throw ConfigError("net config: latent dims must be >= 1");
    if (!is_pow2(image_size) || image_size < 16)
        throw ConfigError("net config: image_size must be a power of two >= 16");
    if (width_multiplier <= 0.0) throw ConfigError("net config: width_multiplier must be positive");
}

std::int64_t NetConfig::scaled(std::int64_t channels) const {
    return std::max<std::int64_t>(4, std::llround(static_cast<double>(channels) * width_multiplier));
}

NetConfig NetConfig::from_config(const KeyValueConfig& cfg) {
    NetConfig net;
    net.image_size = cfg.get_int("net.image_size", net.image_size);
    net.num_parts = cfg.get_int("net.num_parts", net.num_parts);
    net.dim_alpha = cfg.get_int("net.dim_alpha", net.dim_alpha);
    net.dim_pi = cfg.get_int("net.dim_pi", net.dim_pi);
    net.width_multiplier = cfg.get_double("net.width_multiplier", net.width_multiplier);
    net.coords_shape_encoder = cfg.get_bool("net.coords_shape_encoder", net.coords_shape_encoder);
    net.coords_mask_decoder = cfg.get_bool("net.coords_mask_decoder", net.coords_mask_decoder);
    net.coords_appearance_encoder =
        cfg.get_bool("net.coords_appearance_encoder", net.coords_appearance_encoder);
    net.coords_generator = cfg.get_bool("net.coords_generator", net.coords_generator);
    net.validate();
    return net;
}

void NetConfig::to_config(KeyValueConfig& cfg) const {
    cfg.set("net.image_size", std::to_string(image_size));
    cfg.set("net.num_parts", std::to_string(num_parts));
    cfg.set("net.dim_alpha", std::to_string(dim_alpha));
    cfg.set("net.dim_pi", std::to_string(dim_pi));
    std::ostringstream w;
    w << width_multiplier;
    cfg.set("net.width_multiplier", w.str());
    cfg.set("net.coords_shape_encoder", coords_shape_encoder ? "true" : "false");
    cfg.set("net.coords_mask_decoder", coords_mask_decoder ? "true" : "false");
    cfg.set("net.coords_appearance_encoder", coords_appearance_encoder ? "true" : "false");
    cfg.set("net.coords_generator", coords_generator ? "true" : "false");
}

torch::Tensor coord_append(const torch::Tensor& x) {
    TORCH_CHECK(x.dim() == 4, "coord_append expects [B, C, H, W]");
    const auto h = x.size(2);
    const auto w = x.size(3);
    const auto opts = x.options();
    // pixel centers: -1 + (2i+1)/n, so a 1x1 map gets coordinate 0
    const auto rows = (torch::arange(h, opts) * 2.0 + 1.0) / static_cast<double>(h) - 1.0;
    const auto cols = (torch::arange(w, opts) * 2.0 + 1.0) / static_cast<double>(w) - 1.0;
    const auto rc = rows.view({1, 1, h, 1}).expand({x.size(0), 1, h, w});
    const auto cc = cols.view({1, 1, 1, w}).expand({x.size(0), 1, h, w});
    return torch::cat({x, rc, cc}, 1);
}

CoordConv2dImpl::CoordConv2dImpl(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel,
                                 std::int64_t stride, bool coords_)
    : coords(coords_) {
    const auto in_total = in_ch + (coords ? 2 : 0);
    conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_total, out_ch, kernel)
                                                         .stride(stride)
                                                         .padding(kernel / 2)));
}

torch::Tensor CoordConv2dImpl::forward(const torch::Tensor& x) {
    return conv->forward(coords ? coord_append(x) : x);
}

ResidualBlockImpl::ResidualBlockImpl(std::int64_t channels, bool coords) {
    conv = register_module("conv", CoordConv2d(channels, channels, 3, 1, coords));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    TORCH_CHECK(x.size(1) == conv->conv->options.in_channels() - (conv->coords ? 2 : 0),
                "residual block channel mismatch");
    return conv->forward(lrelu(x)) + x;
}

ResidualSkipBlockImpl::ResidualSkipBlockImpl(std::int64_t channels, std::int64_t skip_channels,
                                             bool coords) {
    conv = register_module("conv", CoordConv2d(channels + skip_channels, channels, 3, 1, coords));
    skip_proj = register_module(
        "skip_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(skip_channels, skip_channels, 1)));
}

torch::Tensor ResidualSkipBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& skip) {
    const auto merged = torch::cat({lrelu(x), skip_proj->forward(lrelu(skip))}, 1);
    return conv->forward(merged) + x;
}

ImageEncoderImpl::ImageEncoderImpl(const NetConfig& cfg, std::int64_t out_dim, bool coords) {
    const auto n_down = num_scales(cfg.image_size);
    // channel plan recovers the full-scale pyramid at width_multiplier 1
    static const std::int64_t kPlan[] = {16, 32, 64, 128, 128};
    std::vector<std::int64_t> plan;
    for (std::int64_t i = 0; i < n_down; ++i)
        plan.push_back(cfg.scaled(kPlan[std::min<std::int64_t>(i, 4)]));
    plan.push_back(cfg.scaled(256));

    features = torch::nn::Sequential();
    features->push_back(CoordConv2d(3, plan[0], 3, 1, coords));
    features->push_back(ResidualBlock(plan[0], coords));
    for (std::int64_t i = 0; i < n_down; ++i) {
        features->push_back(CoordConv2d(plan[static_cast<std::size_t>(i)],
                                        plan[static_cast<std::size_t>(i + 1)], 3, 2, coords));
        features->push_back(ResidualBlock(plan[static_cast<std::size_t>(i + 1)], coords));
    }
    for (int i = 0; i < 4; ++i) features->push_back(ResidualBlock(plan.back(), coords));
    register_module("features", features);
    proj = register_module("proj", torch::nn::Linear(plan.back(), out_dim));
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& x) {
    TORCH_CHECK(x.dim() == 4 && x.size(1) == 3, "encoder expects [B, 3, H, W]");
    auto f = features->forward(x);
    f = f.mean({2, 3});  // global mean pooling
    return proj->forward(f);
}

AppearanceEncoderImpl::AppearanceEncoderImpl(const NetConfig& cfg) {
    body = register_module("body", ImageEncoder(cfg, cfg.dim_alpha, cfg.coords_appearance_encoder));
}

ShapeEncoderImpl::ShapeEncoderImpl(const NetConfig& cfg) : dim_pi(cfg.dim_pi) {
    body = register_module("body", ImageEncoder(cfg, 2 * cfg.dim_pi, cfg.coords_shape_encoder));
}

priors::GaussianPosterior ShapeEncoderImpl::forward(const torch::Tensor& x) {
    const auto out = body->forward(x);
    return {out.narrow(1, 0, dim_pi), out.narrow(1, dim_pi, dim_pi)};
}

MaskDecoderImpl::MaskDecoderImpl(const NetConfig& cfg) {
    const bool coords = cfg.coords_mask_decoder;
    const auto n_up = num_scales(cfg.image_size);
    seed_channels = cfg.scaled(256);
    // 4096-unit projection reshaped to the 4x4 seed
    seed_proj = register_module("seed_proj", torch::nn::Linear(cfg.dim_pi, seed_channels * 16));

    static const std::int64_t kPlan[] = {128, 128, 32, 32};
    std::vector<std::int64_t> plan;
    for (std::int64_t i = 0; i + 1 < n_up; ++i)
        plan.push_back(cfg.scaled(kPlan[std::min<std::int64_t>(i, 3)]));
    plan.push_back(cfg.scaled(16));

    ladder = torch::nn::Sequential();
    ladder->push_back(CoordConv2d(seed_channels, seed_channels, 3, 1, coords));
    ladder->push_back(ResidualBlock(seed_channels, coords));
    ladder->push_back(ResidualBlock(seed_channels, coords));
    std::int64_t prev = seed_channels;
    for (std::int64_t i = 0; i < n_up; ++i) {
        ladder->push_back(torch::nn::Upsample(
            torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2, 2}).mode(torch::kBilinear).align_corners(false)));
        ladder->push_back(CoordConv2d(prev, plan[static_cast<std::size_t>(i)], 3, 1, coords));
        ladder->push_back(ResidualBlock(plan[static_cast<std::size_t>(i)], coords));
        prev = plan[static_cast<std::size_t>(i)];
    }
    ladder->push_back(ResidualBlock(prev, coords));
    ladder->push_back(CoordConv2d(prev, cfg.num_parts, 3, 1, coords));
    register_module("ladder", ladder);
}

torch::Tensor MaskDecoderImpl::forward(const torch::Tensor& pi) {
    TORCH_CHECK(pi.dim() == 2, "mask decoder expects [B, dim_pi]");
    if (!pi.isfinite().all().item<bool>()) throw NumericError("mask decoder: non-finite shape code");
    auto seed = seed_proj->forward(pi).view({pi.size(0), seed_channels, 4, 4});
    return ladder->forward(seed);
}

GeneratorImpl::GeneratorImpl(const NetConfig& cfg) {
    const bool coords = cfg.coords_generator;
    const auto c32 = cfg.scaled(32);
    const auto c64 = cfg.scaled(64);
    const auto in_ch = cfg.dim_alpha + cfg.num_parts;
    stem = register_module("stem", CoordConv2d(in_ch, c32, 3, 1, coords));
    res_in = register_module("res_in", ResidualBlock(c32, coords));
    down = register_module("down", CoordConv2d(c32, c64, 3, 2, coords));
    res_a = register_module("res_a", ResidualBlock(c64, coords));
    res_b = register_module("res_b", ResidualBlock(c64, coords));
    res_skip = register_module("res_skip", ResidualSkipBlock(c64, c64, coords));
    up_conv = register_module("up_conv", CoordConv2d(c64, c32, 3, 1, coords));
    res_out = register_module("res_out", ResidualBlock(c32, coords));
    // no output activation; the reconstruction loss handles range
    out_conv = register_module("out_conv", CoordConv2d(c32, 3, 3, 1, coords));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
    auto h = stem->forward(x);
    h = res_in->forward(h);
    h = down->forward(h);
    const auto a = res_a->forward(h);
    h = res_b->forward(a);
    h = res_skip->forward(h, a);
    h = torch::nn::functional::interpolate(
        h, torch::nn::functional::InterpolateFuncOptions()
               .scale_factor(std::vector<double>{2, 2})
               .mode(torch::kBilinear)
               .align_corners(false));
    h = up_conv->forward(h);
    h = res_out->forward(h);
    return out_conv->forward(h);
}

AdversaryImpl::AdversaryImpl(const NetConfig& cfg) {
    mlp = torch::nn::Sequential(
        torch::nn::Linear(cfg.dim_pi + cfg.dim_alpha, 256),
        torch::nn::Functional(torch::leaky_relu, kLeakySlope),
        torch::nn::Linear(256, 256), torch::nn::Functional(torch::leaky_relu, kLeakySlope),
        torch::nn::Linear(256, 256), torch::nn::Functional(torch::leaky_relu, kLeakySlope),
        torch::nn::Linear(256, 1));
    register_module("mlp", mlp);
}

torch::Tensor AdversaryImpl::forward(const torch::Tensor& pi, const torch::Tensor& alpha) {
    TORCH_CHECK(pi.dim() == 2 && alpha.dim() == 2 && pi.size(0) == alpha.size(0),
                "adversary expects aligned [B, dim] inputs");
    return mlp->forward(torch::cat({pi, alpha}, 1)).squeeze(1);
}

void he_init(torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    for (const auto& m : module.modules(/*include_self=*/true)) {
        if (auto* conv = m->as<torch::nn::Conv2d>()) {
            torch::nn::init::kaiming_normal_(conv->weight, kLeakySlope, torch::kFanIn,
                                             torch::kLeakyReLU);
            if (conv->bias.defined()) conv->bias.zero_();
        } else if (auto* linear = m->as<torch::nn::Linear>()) {
            torch::nn::init::kaiming_normal_(linear->weight, kLeakySlope, torch::kFanIn,
                                             torch::kLeakyReLU);
            if (linear->bias.defined()) linear->bias.zero_();
        }
    }
}

ModelSet ModelSet::make(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    torch::manual_seed(seed);
    ModelSet model;
    model.cfg = cfg;
    model.e_alpha = AppearanceEncoder(cfg);
    model.e_shape = ShapeEncoder(cfg);
    model.d_mask = MaskDecoder(cfg);
    model.gen = Generator(cfg);
    model.adv = Adversary(cfg);
    he_init(*model.e_alpha);
    he_init(*model.e_shape);
    he_init(*model.d_mask);
    he_init(*model.gen);
    he_init(*model.adv);
    {
        // Fan-in-scaled logits out of the residual ladder saturate the part
        // softmax at init (near-argmax masks), killing the gradient that lets
        // reconstruction reshape the parts. Shrink the final logits conv so
        // training starts from near-uniform masks.
        torch::NoGradGuard no_grad;
        auto last = model.d_mask->ladder[model.d_mask->ladder->size() - 1];
        last->as<CoordConv2dImpl>()->conv->weight.mul_(0.01);
    }
    return model;
}

std::vector<std::pair<std::string, torch::Tensor>> ModelSet::named_parameters() const {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    const auto add = [&](const std::string& prefix, const torch::nn::Module& m) {
        for (const auto& p : m.named_parameters()) out.emplace_back(prefix + "." + p.key(), p.value());
    };
    add("e_alpha", *e_alpha);
    add("e_shape", *e_shape);
    add("d_mask", *d_mask);
    add("gen", *gen);
    add("adv", *adv);
    return out;
}

std::vector<torch::Tensor> ModelSet::parameters() const {
    std::vector<torch::Tensor> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
}

std::vector<torch::Tensor> ModelSet::model_parameters() const {
    std::vector<torch::Tensor> out;
    for (auto& [name, p] : named_parameters())
        if (!name.starts_with("adv.")) out.push_back(p);
    return out;
}

std::vector<torch::Tensor> ModelSet::adversary_parameters() const {
    return adv->parameters();
}

std::vector<torch::Tensor> ModelSet::mask_decoder_parameters() const {
    return d_mask->parameters();
}

void ModelSet::to(torch::ScalarType dtype) {
    e_alpha->to(dtype);
    e_shape->to(dtype);
    d_mask->to(dtype);
    gen->to(dtype);
    adv->to(dtype);
}

void ModelSet::train(bool on) {
    e_alpha->train(on);
    e_shape->train(on);
    d_mask->train(on);
    gen->train(on);
    adv->train(on);
}

}  // namespace partseg::nets
