#include "partseg/dataset.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace partseg::data {

namespace fs = std::filesystem;

void save_image_png(const std::string& path, const torch::Tensor& image) {
    TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "expected [3, H, W] image");
    const auto img = (image.detach().clamp(0, 1) * 255.0f).round().to(torch::kUInt8);
    const auto h = static_cast<int>(img.size(1));
    const auto w = static_cast<int>(img.size(2));
    cv::Mat mat(h, w, CV_8UC3);
    const auto acc = img.accessor<std::uint8_t, 3>();
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            mat.at<cv::Vec3b>(r, c) = {acc[2][r][c], acc[1][r][c], acc[0][r][c]};  // BGR
    if (!cv::imwrite(path, mat)) throw ConfigError("failed to write image: " + path);
}

torch::Tensor load_image_png(const std::string& path) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_COLOR);
    if (mat.empty()) throw ConfigError("failed to read image: " + path);
    auto img = torch::empty({3, mat.rows, mat.cols}, torch::kFloat32);
    auto acc = img.accessor<float, 3>();
    for (int r = 0; r < mat.rows; ++r)
        for (int c = 0; c < mat.cols; ++c) {
            const auto px = mat.at<cv::Vec3b>(r, c);
            acc[0][r][c] = static_cast<float>(px[2]) / 255.0f;
            acc[1][r][c] = static_cast<float>(px[1]) / 255.0f;
            acc[2][r][c] = static_cast<float>(px[0]) / 255.0f;
        }
    return img;
}

void save_mask_png(const std::string& path, const torch::Tensor& class_map) {
    TORCH_CHECK(class_map.dim() == 2, "expected [H, W] class map");
    const auto ids = class_map.to(torch::kUInt8);
    cv::Mat mat(static_cast<int>(ids.size(0)), static_cast<int>(ids.size(1)), CV_8UC1);
    const auto acc = ids.accessor<std::uint8_t, 2>();
    for (int r = 0; r < mat.rows; ++r)
        for (int c = 0; c < mat.cols; ++c) mat.at<std::uint8_t>(r, c) = acc[r][c];
    if (!cv::imwrite(path, mat)) throw ConfigError("failed to write mask: " + path);
}

torch::Tensor load_mask_png(const std::string& path) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (mat.empty()) throw ConfigError("failed to read mask: " + path);
    auto ids = torch::empty({mat.rows, mat.cols}, torch::kInt64);
    auto acc = ids.accessor<std::int64_t, 2>();
    for (int r = 0; r < mat.rows; ++r)
        for (int c = 0; c < mat.cols; ++c) acc[r][c] = mat.at<std::uint8_t>(r, c);
    return ids;
}

void save_keypoints_csv(const std::string& path, const std::vector<eval::Keypoint>& kps) {
    std::ofstream out(path);
    if (!out) throw ConfigError("failed to write keypoints: " + path);
    for (std::size_t k = 0; k < kps.size(); ++k)
        if (kps[k]) out << (k + 1) << "," << kps[k]->first << "," << kps[k]->second << "\n";
}

std::vector<eval::Keypoint> load_keypoints_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("failed to read keypoints: " + path);
    std::vector<eval::Keypoint> kps;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cls, row, col;
        if (!std::getline(ss, cls, ',') || !std::getline(ss, row, ',') || !std::getline(ss, col, ','))
            throw ConfigError("malformed keypoint line in " + path + ": " + line);
        const auto id = static_cast<std::size_t>(std::stoll(cls));
        if (kps.size() < id) kps.resize(id, std::nullopt);
        kps[id - 1] = std::make_pair(std::stod(row), std::stod(col));
    }
    return kps;
}

void write_sample(const std::string& instance_dir, std::int64_t pose_id, const synth::Sample& sample) {
    fs::create_directories(instance_dir);
    const std::string stem = instance_dir + "/" + std::to_string(pose_id);
    save_image_png(stem + ".png", sample.image);
    save_mask_png(stem + ".mask.png", sample.class_map());
    save_keypoints_csv(stem + ".kps.csv", sample.gt_keypoints);
}

std::vector<Instance> load_split(const std::string& root, const std::string& split) {
    const fs::path dir = fs::path(root) / split;
    if (!fs::is_directory(dir)) throw ConfigError("missing dataset split directory: " + dir.string());
    std::vector<Instance> instances;
    std::vector<fs::path> inst_dirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) inst_dirs.push_back(e.path());
    std::sort(inst_dirs.begin(), inst_dirs.end());
    for (const auto& inst_dir : inst_dirs) {
        Instance inst;
        try {
            inst.id = std::stoll(inst_dir.filename().string());
        } catch (const std::exception&) {
            inst.id = static_cast<std::int64_t>(instances.size());
        }
        std::vector<fs::path> images;
        for (const auto& e : fs::directory_iterator(inst_dir)) {
            const auto name = e.path().filename().string();
            if (e.is_regular_file() && name.ends_with(".png") && !name.ends_with(".mask.png"))
                images.push_back(e.path());
        }
        std::sort(images.begin(), images.end());
        for (const auto& img_path : images) {
            synth::Sample sample;
            sample.image = load_image_png(img_path.string());
            sample.instance_id = inst.id;
            const std::string stem = img_path.string().substr(0, img_path.string().size() - 4);
            const std::string mask_path = stem + ".mask.png";
            if (fs::exists(mask_path)) {
                const auto ids = load_mask_png(mask_path);
                const auto num_classes = ids.max().item<std::int64_t>();
                sample.gt_masks = torch::zeros({std::max<std::int64_t>(num_classes, 1), ids.size(0), ids.size(1)},
                                               torch::kBool);
                for (std::int64_t k = 1; k <= num_classes; ++k) sample.gt_masks[k - 1] = ids == k;
            }
            const std::string kps_path = stem + ".kps.csv";
            if (fs::exists(kps_path)) sample.gt_keypoints = load_keypoints_csv(kps_path);
            inst.poses.push_back(std::move(sample));
        }
        if (!inst.poses.empty()) instances.push_back(std::move(inst));
    }
    if (instances.empty()) throw ConfigError("empty dataset split: " + dir.string());
    return instances;
}

std::vector<synth::Sample> flatten(const std::vector<Instance>& instances) {
    std::vector<synth::Sample> out;
    for (const auto& inst : instances)
        for (const auto& s : inst.poses) out.push_back(s);
    return out;
}

void PairLoader::push_pair(const torch::Tensor& a, const torch::Tensor& b) {
    const auto quantize = [](const torch::Tensor& t) {
        return (t.clamp(0, 1) * 255.0f).round().to(torch::kUInt8);
    };
    pairs_.emplace_back(quantize(a), quantize(b));
}

PairLoader::PairLoader(const std::string& root, const std::string& split, std::int64_t batch_size,
                       double flip_prob, std::uint64_t seed)
    : batch_size_(batch_size), flip_prob_(flip_prob), rng_(make_rng(seed, 0x50u)) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    const auto instances = load_split(root, split);
    for (const auto& inst : instances) {
        if (inst.poses.size() < 2) {
            // single pose: pair the image with itself
            push_pair(inst.poses[0].image, inst.poses[0].image);
            continue;
        }
        for (std::size_t a = 0; a < inst.poses.size(); ++a)
            for (std::size_t b = a + 1; b < inst.poses.size(); ++b)
                push_pair(inst.poses[a].image, inst.poses[b].image);
    }
    if (pairs_.empty()) throw ConfigError("dataset yielded no pairs: " + root + "/" + split);
}

PairLoader::PairLoader(const synth::SpriteSpec& spec, std::int64_t num_pairs, std::int64_t batch_size,
                       double flip_prob, std::uint64_t seed)
    : batch_size_(batch_size), flip_prob_(flip_prob), rng_(make_rng(seed, 0x50u)) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (num_pairs < 1) throw ConfigError("generator mode needs num_pairs >= 1");
    for (std::int64_t i = 0; i < num_pairs; ++i) {
        // per-sample seeds depend only on (seed, index), not on draw order
        const auto [a, b] = synth::generate_sprite_pair(mix_seed(seed, 0x1000u + static_cast<std::uint64_t>(i)), spec);
        push_pair(a.image, b.image);
    }
}

PairBatch PairLoader::next() {
    std::uniform_int_distribution<std::size_t> upair(0, pairs_.size() - 1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<torch::Tensor> x1s, x2s;
    for (std::int64_t i = 0; i < batch_size_; ++i) {
        const auto& [a, b] = pairs_[upair(rng_)];
        auto x1 = a.to(torch::kFloat32) / 255.0f;
        auto x2 = b.to(torch::kFloat32) / 255.0f;
        if (u01(rng_) < 0.5) std::swap(x1, x2);
        // draw unconditionally so the pair stream is invariant to flip_prob
        if (u01(rng_) < flip_prob_) {
            x1 = x1.flip(-1);
            x2 = x2.flip(-1);
        }
        x1s.push_back(x1);
        x2s.push_back(x2);
    }
    return {torch::stack(x1s), torch::stack(x2s)};
}

std::string PairLoader::rng_state() const {
    std::ostringstream ss;
    ss << rng_;
    return ss.str();
}

void PairLoader::set_rng_state(const std::string& state) {
    std::istringstream ss(state);
    ss >> rng_;
    if (!ss) throw ConfigError("invalid loader rng state");
}

}  // namespace partseg::data
