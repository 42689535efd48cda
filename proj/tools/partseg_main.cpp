#include <CLI11.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fnmatch.h>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "partseg/dataset.hpp"
#include "partseg/pipeline.hpp"
#include "partseg/report.hpp"
#include "partseg/sprites.hpp"
#include "partseg/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace partseg;

namespace {

constexpr const char* kVersion = "partseg 0.1.0";

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value, highest precedence
    std::int64_t seed_flag = -1;
};

KeyValueConfig resolve_config(const CommonOpts& opts) {
    KeyValueConfig cfg;
    if (!opts.config_path.empty()) cfg = KeyValueConfig::from_file(opts.config_path);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value, got " + kv);
        auto key = kv.substr(0, eq);
        auto value = kv.substr(eq + 1);
        auto strip = [](std::string& s) {
            while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
            while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
        };
        strip(key);
        strip(value);
        cfg.set(key, value);
    }
    return cfg;
}

// flag > config file > PARTSEG_SEED env > 0
std::uint64_t resolve_seed(const CommonOpts& opts, const KeyValueConfig& cfg) {
    if (opts.seed_flag >= 0) return static_cast<std::uint64_t>(opts.seed_flag);
    if (cfg.has("train.seed")) return static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
    if (const char* env = std::getenv("PARTSEG_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("PARTSEG_SEED is not an integer: ") + env);
        }
    }
    return 0;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const KeyValueConfig& cfg, std::uint64_t seed,
                    const std::map<std::string, std::string>& artifacts) {
    fs::create_directories(out_dir);
    json manifest;
    manifest["command"] = command;
    manifest["version"] = kVersion;
    manifest["seed"] = seed;
    manifest["config"] = cfg.to_string();
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    manifest["timestamp_unix"] = std::chrono::duration_cast<std::chrono::seconds>(now).count();
    manifest["artifacts"] = artifacts;
    std::ofstream out(out_dir + "/manifest.json");
    if (!out) throw ConfigError("cannot write manifest in " + out_dir);
    out << manifest.dump(2) << "\n";
}

std::vector<std::string> expand_glob(const std::string& pattern) {
    const fs::path pat(pattern);
    const fs::path dir = pat.parent_path().empty() ? "." : pat.parent_path();
    const std::string leaf = pat.filename().string();
    std::vector<std::string> matches;
    if (fs::is_directory(dir)) {
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            const auto name = entry.path().filename().string();
            if (fnmatch(leaf.c_str(), name.c_str(), 0) == 0) matches.push_back(entry.path().string());
        }
    }
    std::sort(matches.begin(), matches.end());
    if (matches.empty()) throw ConfigError("no files match pattern: " + pattern);
    return matches;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& common, const std::string& out_dir) {
    const auto cfg = resolve_config(common);
    const auto spec = synth::SpriteSpec::from_config(cfg);
    const auto seed = resolve_seed(common, cfg);
    struct Split {
        const char* name;
        std::int64_t instances;
        std::int64_t id_base;
        std::uint64_t salt;
    };
    const Split splits[] = {
        {"train", cfg.get_int("data.train_instances", 100), 0, 0x71u},
        {"val", cfg.get_int("data.val_instances", 25), 1000, 0x72u},
        {"test", cfg.get_int("data.test_instances", 25), 2000, 0x73u},
    };
    const auto poses = cfg.get_int("data.poses_per_instance", 4);
    if (poses < 1) throw ConfigError("data.poses_per_instance must be >= 1");

    write_manifest(out_dir, "gen-data", cfg, seed, {{"dataset", out_dir}});
    for (const auto& split : splits) {
        for (std::int64_t i = 0; i < split.instances; ++i) {
            const auto base = mix_seed(mix_seed(seed, split.salt), static_cast<std::uint64_t>(i));
            const auto dir = fs::path(out_dir) / split.name / std::to_string(split.id_base + i);
            fs::create_directories(dir);
            for (std::int64_t j = 0; j < poses; ++j) {
                const auto sample =
                    synth::render_sprite(spec, mix_seed(base, 0x20u),
                                         mix_seed(base, 0x100u + static_cast<std::uint64_t>(j)),
                                         split.id_base + i);
                data::write_sample(dir.string(), j, sample);
            }
        }
        std::cout << split.name << ": " << split.instances << " instances x " << poses
                  << " poses = " << split.instances * poses << " images\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

train::TrainConfig train_config_from(const KeyValueConfig& cfg, std::uint64_t seed,
                                     std::int64_t steps_flag) {
    auto patched = cfg;
    patched.set("train.seed", std::to_string(seed));
    if (steps_flag >= 0) patched.set("train.total_steps", std::to_string(steps_flag));
    return train::TrainConfig::from_config(patched);
}

std::unique_ptr<data::PairLoader> make_loader(const std::string& data_path,
                                              const train::TrainConfig& tc,
                                              const KeyValueConfig& cfg,
                                              std::vector<synth::Sample>* val_out) {
    if (fs::is_directory(data_path)) {
        if (!fs::is_directory(fs::path(data_path) / "train"))
            throw ConfigError("data dir has no train split: " + data_path);
        if (val_out && fs::is_directory(fs::path(data_path) / "val"))
            *val_out = data::flatten(data::load_split(data_path, "val"));
        return std::make_unique<data::PairLoader>(data_path, "train", tc.batch_size, tc.flip_prob,
                                                  mix_seed(tc.seed, 0x50u));
    }
    if (!fs::is_regular_file(data_path))
        throw ConfigError("data path does not exist: " + data_path);
    auto gen_cfg = KeyValueConfig::from_file(data_path);
    auto spec = synth::SpriteSpec::from_config(gen_cfg);
    spec.image_size = tc.net.image_size;
    const auto pairs = gen_cfg.get_int("data.train_pairs", cfg.get_int("data.train_pairs", 2000));
    if (val_out) {
        const auto n_val = gen_cfg.get_int("data.val_samples", 100);
        for (std::int64_t i = 0; i < n_val; ++i) {
            const auto base = mix_seed(mix_seed(tc.seed, 0x72u), static_cast<std::uint64_t>(i));
            val_out->push_back(
                synth::render_sprite(spec, mix_seed(base, 0x20u), mix_seed(base, 0x100u), i));
        }
    }
    return std::make_unique<data::PairLoader>(spec, pairs, tc.batch_size, tc.flip_prob,
                                              mix_seed(tc.seed, 0x50u));
}

int cmd_train(const CommonOpts& common, const std::string& data_path, const std::string& out_dir,
              const std::string& resume, std::int64_t steps_flag) {
    const auto cfg = resolve_config(common);
    const auto seed = resolve_seed(common, cfg);
    auto tc = train_config_from(cfg, seed, steps_flag);

    std::optional<train::TrainState> state;
    std::string loader_rng;
    if (!resume.empty()) {
        tc = train::checkpoint_config(resume);
        if (steps_flag >= 0) tc.total_steps = steps_flag;
        state = train::load_checkpoint(resume, std::nullopt, &loader_rng);
    }

    std::vector<synth::Sample> val_samples;
    auto loader = make_loader(data_path, tc, cfg, &val_samples);
    write_manifest(out_dir, "train", tc.to_config(), tc.seed,
                   {{"checkpoint", out_dir + "/latest.ckpt"},
                    {"metrics", out_dir + "/metrics.jsonl"},
                    {"data", data_path}});
    const auto result = train::fit(tc, *loader, val_samples, out_dir,
                                   state ? &*state : nullptr, loader_rng);
    std::cout << "trained to step " << tc.total_steps << "; checkpoint " << result.checkpoint_path;
    if (result.last_val_iou >= 0) std::cout << "; val IoU " << result.last_val_iou;
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct LoadedModel {
    train::TrainConfig cfg;
    train::TrainState state;
};

LoadedModel load_model(const std::string& checkpoint) {
    LoadedModel m{train::checkpoint_config(checkpoint),
                  train::load_checkpoint(checkpoint, std::nullopt)};
    m.state.model.train(false);
    return m;
}

std::vector<torch::Tensor> infer_argmax(nets::ModelSet& model,
                                        const std::vector<torch::Tensor>& images) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    constexpr std::int64_t kChunk = 32;
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        std::vector<torch::Tensor> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                         images.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                              images.size(), start + kChunk)));
        const auto seg = pipeline::infer_segmentation(model, torch::stack(chunk));
        const auto ids = seg.probs.argmax(1);
        for (std::int64_t b = 0; b < ids.size(0); ++b) out.push_back(ids[b]);
    }
    return out;
}

int cmd_infer(const std::string& checkpoint, const std::string& pattern, const std::string& out_dir,
              bool dump_probs) {
    auto model = load_model(checkpoint);
    const auto files = expand_glob(pattern);
    fs::create_directories(out_dir);
    torch::NoGradGuard no_grad;
    for (const auto& file : files) {
        const auto image = data::load_image_png(file);
        if (image.size(1) != model.cfg.net.image_size || image.size(2) != model.cfg.net.image_size)
            throw ConfigError("image " + file + " is " + std::to_string(image.size(1)) + "x" +
                              std::to_string(image.size(2)) + " but checkpoint expects " +
                              std::to_string(model.cfg.net.image_size));
        const auto seg = pipeline::infer_segmentation(model.state.model, image);
        const auto stem = fs::path(file).stem().string();
        data::save_mask_png((fs::path(out_dir) / (stem + ".mask.png")).string(),
                            seg.probs.argmax(0));
        if (dump_probs) {
            TensorArchive ar;
            ar.put("probs", seg.probs);
            ar.save((fs::path(out_dir) / (stem + ".probs")).string());
        }
    }
    std::cout << "segmented " << files.size() << " images into " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_transfer(const std::string& checkpoint, const std::string& pose_path,
                 const std::string& app_path, const std::string& parts_arg,
                 const std::string& out_dir) {
    auto model = load_model(checkpoint);
    const auto pose = data::load_image_png(pose_path);
    const auto app = data::load_image_png(app_path);
    std::vector<std::int64_t> parts;
    if (parts_arg == "all") {
        for (std::int64_t p = 1; p <= model.cfg.net.num_parts; ++p) parts.push_back(p);
    } else if (!parts_arg.empty()) {
        std::stringstream ss(parts_arg);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) parts.push_back(std::stoll(tok));
    }
    const auto out = pipeline::transfer_appearance(model.state.model, pose, app, parts).clamp(0, 1);
    fs::create_directories(out_dir);
    data::save_image_png(out_dir + "/transfer.png", out);
    data::save_image_png(out_dir + "/panel.png", torch::cat({pose, app, out}, 2));
    std::cout << "wrote " << out_dir << "/transfer.png\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out_dir,
             const std::string& mapping_path, const std::string& metrics_path, double alpha) {
    auto model = load_model(checkpoint);
    const auto test = data::flatten(data::load_split(data_dir, "test"));
    if (test.empty()) throw ConfigError("empty test split in " + data_dir);

    std::int64_t num_classes = 0;
    for (const auto& s : test) num_classes = std::max(num_classes, s.gt_masks.size(0));

    auto images_of = [](const std::vector<synth::Sample>& set) {
        std::vector<torch::Tensor> images;
        for (const auto& s : set) images.push_back(s.image);
        return images;
    };
    auto class_maps_of = [](const std::vector<synth::Sample>& set) {
        std::vector<torch::Tensor> maps;
        for (const auto& s : set) maps.push_back(s.class_map());
        return maps;
    };

    fs::create_directories(out_dir);
    eval::CalibrationMapping mapping;
    if (!mapping_path.empty()) {
        mapping = report::load_mapping_csv(mapping_path);
        if (mapping.num_parts() != model.cfg.net.num_parts)
            throw ConfigError("mapping covers " + std::to_string(mapping.num_parts()) +
                              " parts, checkpoint has " + std::to_string(model.cfg.net.num_parts));
    } else {
        const auto val = data::flatten(data::load_split(data_dir, "val"));
        if (val.empty()) throw ConfigError("empty val split in " + data_dir);
        mapping = eval::calibrate(infer_argmax(model.state.model, images_of(val)),
                                  class_maps_of(val), model.cfg.net.num_parts, num_classes);
        report::save_mapping_csv(mapping, out_dir + "/mapping.csv");
    }

    const auto pred = infer_argmax(model.state.model, images_of(test));
    const auto gt = class_maps_of(test);
    const auto iou_report = eval::evaluate_iou(pred, gt, mapping, num_classes);

    // PCK: centroids of calibrated part groups vs ground-truth part centroids
    torch::NoGradGuard no_grad;
    std::vector<eval::Keypoint> pred_kps, gt_kps;
    for (const auto& sample : test) {
        const auto seg = pipeline::infer_segmentation(model.state.model, sample.image);
        for (std::int64_t c = 1; c <= num_classes; ++c) {
            auto mass = torch::zeros_like(seg.probs[0]);
            for (std::int64_t p = 0; p < mapping.num_parts(); ++p)
                if (mapping.assign[static_cast<std::size_t>(p)] == c) mass += seg.probs[p];
            pred_kps.push_back(eval::part_centroid(mass));
            gt_kps.push_back(static_cast<std::size_t>(c - 1) < sample.gt_keypoints.size()
                                 ? sample.gt_keypoints[static_cast<std::size_t>(c - 1)]
                                 : eval::Keypoint{});
        }
    }
    const double diag = std::sqrt(2.0) * static_cast<double>(model.cfg.net.image_size);
    const double pck_value = eval::pck(pred_kps, gt_kps, alpha, diag);
    {
        std::ofstream pck_out(out_dir + "/pck.csv");
        pck_out << "alpha,pck\n" << alpha << "," << pck_value << "\n";
    }

    std::vector<report::QualitativeCase> cases;
    auto merged = [&](const torch::Tensor& part_ids) {
        auto lut = torch::zeros({mapping.num_parts()}, torch::kInt64);
        for (std::int64_t p = 0; p < mapping.num_parts(); ++p)
            lut[p] = mapping.assign[static_cast<std::size_t>(p)];
        return lut.index_select(0, part_ids.reshape(-1)).reshape(part_ids.sizes());
    };
    for (std::size_t i = 0; i < std::min<std::size_t>(test.size(), 8); ++i)
        cases.push_back({test[i].image, merged(pred[i]), gt[i]});
    report::emit_report(iou_report, metrics_path, cases, num_classes, out_dir);

    std::cout << "overall IoU " << iou_report.overall << ", PCK@" << alpha << " " << pck_value
              << "; report in " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_report(const std::string& metrics_path, const std::string& iou_csv,
               const std::string& out_dir) {
    fs::create_directories(out_dir);
    report::write_loss_curves(metrics_path, out_dir + "/loss_curves.png");
    if (!iou_csv.empty())
        report::write_iou_csv(report::read_iou_csv(iou_csv), out_dir + "/report.csv");
    std::cout << "report written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unsupervised part segmentation toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    CommonOpts common;
    std::string data_path, out_dir, checkpoint, pattern, resume, mapping_path, metrics_path;
    std::string pose_path, app_path, parts_arg, iou_csv;
    std::int64_t steps_flag = -1;
    bool dump_probs = false;
    double alpha = 0.1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "key = value config file");
        sub->add_option("--set", common.overrides, "config override key=value (repeatable)");
        sub->add_option("--seed", common.seed_flag, "random seed (overrides config)");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the sprite dataset");
    add_common(gen);
    gen->add_option("--out", out_dir, "output dataset root")->required();

    auto* tr = app.add_subcommand("train", "train a model");
    add_common(tr);
    tr->add_option("--data", data_path, "dataset dir or generator config file")->required();
    tr->add_option("--out", out_dir, "run output dir")->required();
    tr->add_option("--resume", resume, "checkpoint to resume from");
    tr->add_option("--steps", steps_flag, "override total_steps");

    auto* inf = app.add_subcommand("infer", "segment images");
    inf->add_option("--checkpoint", checkpoint)->required();
    inf->add_option("--images", pattern, "input glob, e.g. 'dir/*.png'")->required();
    inf->add_option("--out", out_dir)->required();
    inf->add_flag("--probs", dump_probs, "also dump probability maps");

    auto* tf = app.add_subcommand("transfer", "transfer part appearance between images");
    tf->add_option("--checkpoint", checkpoint)->required();
    tf->add_option("--pose", pose_path, "pose source image")->required();
    tf->add_option("--appearance", app_path, "appearance source image")->required();
    tf->add_option("--parts", parts_arg, "comma list of 1-based part ids, or 'all'");
    tf->add_option("--out", out_dir)->required();

    auto* ev = app.add_subcommand("eval", "calibrate on val, evaluate on test");
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--data", data_path, "dataset root")->required();
    ev->add_option("--out", out_dir)->required();
    ev->add_option("--mapping", mapping_path, "reuse a saved calibration mapping");
    ev->add_option("--metrics", metrics_path, "metrics log for loss curves");
    ev->add_option("--alpha", alpha, "PCK threshold as a fraction of the image diagonal");

    auto* rp = app.add_subcommand("report", "regenerate plots from run artifacts");
    rp->add_option("--metrics", metrics_path, "metrics log")->required();
    rp->add_option("--iou-csv", iou_csv, "existing IoU table to validate and copy");
    rp->add_option("--out", out_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common, out_dir);
        if (tr->parsed()) return cmd_train(common, data_path, out_dir, resume, steps_flag);
        if (inf->parsed()) return cmd_infer(checkpoint, pattern, out_dir, dump_probs);
        if (tf->parsed()) return cmd_transfer(checkpoint, pose_path, app_path, parts_arg, out_dir);
        if (ev->parsed())
            return cmd_eval(checkpoint, data_path, out_dir, mapping_path, metrics_path, alpha);
        if (rp->parsed()) return cmd_report(metrics_path, iou_csv, out_dir);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
