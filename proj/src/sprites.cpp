#include "partseg/sprites.hpp"

#include <cmath>

namespace partseg::synth {

void SpriteSpec::validate() const {
    if (num_parts < 1) throw ConfigError("sprite spec: num_parts must be >= 1");
    if (image_size < 8) throw ConfigError("sprite spec: image_size must be >= 8");
    if (!(angle_range > 0.0 && angle_range <= M_PI))
        throw ConfigError("sprite spec: angle_range must lie in (0, pi]");
    auto check_fracs = [&](const std::vector<double>& v, const char* what) {
        if (static_cast<std::int64_t>(v.size()) != num_parts)
            throw ConfigError(std::string("sprite spec: ") + what + " must have num_parts entries");
        for (double f : v)
            if (!(f > 0.0 && f < 1.0))
                throw ConfigError(std::string("sprite spec: ") + what + " entries must lie in (0, 1)");
    };
    check_fracs(part_lengths, "part_lengths");
    check_fracs(part_widths, "part_widths");
}

SpriteSpec SpriteSpec::from_config(const KeyValueConfig& cfg) {
    SpriteSpec spec;
    spec.num_parts = cfg.get_int("sprite.num_parts", spec.num_parts);
    spec.angle_range = cfg.get_double("sprite.angle_range", spec.angle_range);
    spec.image_size = cfg.get_int("sprite.image_size", spec.image_size);
    const std::string palette = cfg.get_str("sprite.palette", "random_hue_per_part");
    if (palette == "random_hue_per_part")
        spec.palette = Palette::RandomHuePerPart;
    else if (palette == "shared_hue")
        spec.palette = Palette::SharedHue;
    else
        throw ConfigError("sprite.palette must be random_hue_per_part or shared_hue, got " + palette);
    const std::string bg = cfg.get_str("sprite.background", "solid");
    if (bg == "solid")
        spec.background = Background::Solid;
    else if (bg == "noise")
        spec.background = Background::Noise;
    else
        throw ConfigError("sprite.background must be solid or noise, got " + bg);

    auto parse_list = [&](const std::string& key, double fallback) {
        std::vector<double> out;
        const std::string raw = cfg.get_str(key, "");
        if (raw.empty()) {
            out.assign(static_cast<std::size_t>(std::max<std::int64_t>(spec.num_parts, 1)), fallback);
            return out;
        }
        std::istringstream ss(raw);
        std::string tok;
        while (std::getline(ss, tok, ','))
            out.push_back(std::stod(tok));
        return out;
    };
    spec.part_lengths = parse_list("sprite.part_lengths", 0.22);
    spec.part_widths = parse_list("sprite.part_widths", 0.14);
    spec.validate();
    return spec;
}

torch::Tensor hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double c = v * s;
    const double hp = h * 6.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    return torch::tensor({static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)});
}

namespace {

struct Segment {
    double ar, ac;  // start point (row, col) in pixels
    double br, bc;  // end point
    double halfwidth;
};

// Point-in-rectangle test for the oriented rectangle around segment A-B.
bool covers(const Segment& s, double r, double c) {
    const double dr = s.br - s.ar;
    const double dc = s.bc - s.ac;
    const double len2 = dr * dr + dc * dc;
    if (len2 <= 0.0) return false;
    const double t = ((r - s.ar) * dr + (c - s.ac) * dc) / len2;
    if (t < 0.0 || t > 1.0) return false;
    const double cross = (r - s.ar) * dc - (c - s.ac) * dr;
    return std::fabs(cross) <= s.halfwidth * std::sqrt(len2);
}

struct Pose {
    std::vector<Segment> segments;
};

Pose sample_pose(const SpriteSpec& spec, std::uint64_t pose_seed) {
    auto rng = make_rng(pose_seed, 0x20u);
    std::uniform_real_distribution<double> uangle(-spec.angle_range / 2.0, spec.angle_range / 2.0);
    const double size = static_cast<double>(spec.image_size);
    // Translation jitter vanishes together with the angle range, so a zero-range
    // spec produces exactly one pose.
    const double jitter = 0.06 * (spec.angle_range / M_PI) * size;
    std::uniform_real_distribution<double> ujit(-jitter, jitter);

    double total_len = 0.0;
    for (double f : spec.part_lengths) total_len += f;
    // Chain grows upward from a root below the center.
    double r = size * (0.5 + 0.45 * total_len) + ujit(rng);
    double c = size * 0.5 + ujit(rng);
    double angle = -M_PI / 2.0 + uangle(rng);

    Pose pose;
    for (std::int64_t k = 0; k < spec.num_parts; ++k) {
        if (k > 0) angle += uangle(rng);
        const double len = spec.part_lengths[static_cast<std::size_t>(k)] * size;
        const double nr = r + std::sin(angle) * len;
        const double nc = c + std::cos(angle) * len;
        pose.segments.push_back({r, c, nr, nc, spec.part_widths[static_cast<std::size_t>(k)] * size / 2.0});
        r = nr;
        c = nc;
    }
    return pose;
}

std::vector<torch::Tensor> sample_palette(const SpriteSpec& spec, std::uint64_t hue_seed) {
    auto rng = make_rng(hue_seed, 0x21u);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<torch::Tensor> colors;
    const double base_hue = u01(rng);
    for (std::int64_t k = 0; k < spec.num_parts; ++k) {
        if (spec.palette == SpriteSpec::Palette::RandomHuePerPart) {
            // Spread hues around the wheel so parts of one instance stay distinct.
            const double hue = base_hue + static_cast<double>(k) / static_cast<double>(spec.num_parts) +
                               0.06 * (u01(rng) - 0.5);
            colors.push_back(hsv_to_rgb(hue, 0.85, 0.95));
        } else {
            const double value = 0.35 + 0.6 * static_cast<double>(k + 1) / static_cast<double>(spec.num_parts);
            colors.push_back(hsv_to_rgb(base_hue, 0.85, value));
        }
    }
    return colors;
}

// Part-id map (0 = background) sampled at pixel centers of a grid scaled by `scale`.
torch::Tensor id_map(const Pose& pose, std::int64_t size, std::int64_t scale) {
    const std::int64_t n = size * scale;
    auto ids = torch::zeros({n, n}, torch::kInt64);
    auto acc = ids.accessor<std::int64_t, 2>();
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t c = 0; c < n; ++c) {
            const double pr = (static_cast<double>(r) + 0.5) / static_cast<double>(scale) - 0.5;
            const double pc = (static_cast<double>(c) + 0.5) / static_cast<double>(scale) - 0.5;
            // later segments draw on top
            for (std::int64_t k = static_cast<std::int64_t>(pose.segments.size()) - 1; k >= 0; --k) {
                if (covers(pose.segments[static_cast<std::size_t>(k)], pr, pc)) {
                    acc[r][c] = k + 1;
                    break;
                }
            }
        }
    }
    return ids;
}

}  // namespace

Sample render_sprite(const SpriteSpec& spec, std::uint64_t hue_seed, std::uint64_t pose_seed,
                     std::int64_t instance_id) {
    spec.validate();
    const auto pose = sample_pose(spec, pose_seed);
    const auto colors = sample_palette(spec, hue_seed);
    const std::int64_t size = spec.image_size;

    // Ground truth comes from the hard 1x map; the image is rendered at 2x and
    // box-downsampled, which leaves soft one-pixel boundaries.
    const auto hard_ids = id_map(pose, size, 1);
    const auto fine_ids = id_map(pose, size, 2);

    torch::Tensor background;
    if (spec.background == SpriteSpec::Background::Solid) {
        background = torch::full({3, size * 2, size * 2}, 0.08f);
    } else {
        auto rng = make_rng(pose_seed, 0x22u);
        std::uniform_real_distribution<float> u(0.0f, 0.3f);
        auto noise = torch::empty({1, size * 2, size * 2});
        auto nacc = noise.accessor<float, 3>();
        for (std::int64_t r = 0; r < size * 2; ++r)
            for (std::int64_t c = 0; c < size * 2; ++c) nacc[0][r][c] = u(rng);
        background = noise.expand({3, size * 2, size * 2}).contiguous();
    }

    auto fine = background;
    for (std::int64_t k = 0; k < spec.num_parts; ++k) {
        const auto mask = (fine_ids == (k + 1)).to(torch::kFloat32).unsqueeze(0);
        fine = fine * (1.0f - mask) + colors[static_cast<std::size_t>(k)].view({3, 1, 1}) * mask;
    }
    const auto image = torch::avg_pool2d(fine.unsqueeze(0), 2).squeeze(0);

    Sample sample;
    sample.image = image.contiguous();
    sample.gt_masks = torch::zeros({spec.num_parts, size, size}, torch::kBool);
    for (std::int64_t k = 0; k < spec.num_parts; ++k) {
        const auto m = hard_ids == (k + 1);
        if (m.sum().item<std::int64_t>() == 0)
            throw ConfigError("degenerate sprite spec: part " + std::to_string(k + 1) +
                              " has zero area at image_size " + std::to_string(size));
        sample.gt_masks[k] = m;
        sample.gt_keypoints.push_back(eval::part_centroid(m.to(torch::kFloat32)));
    }
    sample.instance_id = instance_id;
    sample.pose_seed = static_cast<std::int64_t>(pose_seed);
    return sample;
}

torch::Tensor Sample::class_map() const {
    auto ids = torch::zeros({gt_masks.size(1), gt_masks.size(2)}, torch::kInt64);
    for (std::int64_t k = 0; k < gt_masks.size(0); ++k)
        ids = torch::where(gt_masks[k], torch::scalar_tensor(k + 1, torch::kInt64), ids);
    return ids;
}

std::pair<Sample, Sample> generate_sprite_pair(std::uint64_t seed, const SpriteSpec& spec) {
    const std::uint64_t hue_seed = mix_seed(seed, 0x30u);
    const auto instance_id = static_cast<std::int64_t>(seed);
    auto a = render_sprite(spec, hue_seed, mix_seed(seed, 0x31u), instance_id);
    auto b = render_sprite(spec, hue_seed, mix_seed(seed, 0x32u), instance_id);
    return {std::move(a), std::move(b)};
}

std::pair<Sample, Sample> generate_hue_pair(std::uint64_t seed, const SpriteSpec& spec) {
    const std::uint64_t pose_seed = mix_seed(seed, 0x33u);
    const auto instance_id = static_cast<std::int64_t>(seed);
    auto a = render_sprite(spec, mix_seed(seed, 0x34u), pose_seed, instance_id);
    auto b = render_sprite(spec, mix_seed(seed, 0x35u), pose_seed, instance_id);
    return {std::move(a), std::move(b)};
}

}  // namespace partseg::synth
