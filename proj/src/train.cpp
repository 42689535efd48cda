#include "partseg/train.hpp"

#include <nlohmann/json.hpp>

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "partseg/evalmetrics.hpp"

namespace partseg::train {

namespace fs = std::filesystem;
using json = nlohmann::json;

void TrainConfig::validate() const {
    net.validate();
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (lr <= 0.0) throw ConfigError("train config: lr must be positive");
    if (total_steps < 1) throw ConfigError("train config: total_steps must be >= 1");
    if (!(entropy_ramp_start < entropy_ramp_end))
        throw ConfigError("train config: entropy ramp start must precede end");
    if (lambda_gmrf < 0 || lambda_entropy_start < 0 || lambda_entropy_end < 0 ||
        lambda_variational < 0 || lambda_adversarial < 0)
        throw ConfigError("train config: loss weights must be nonnegative");
    if (!(ema_decay > 0.0 && ema_decay < 1.0))
        throw ConfigError("train config: ema_decay must lie in (0, 1)");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
    TrainConfig tc;
    tc.net = nets::NetConfig::from_config(cfg);
    tc.batch_size = cfg.get_int("train.batch_size", tc.batch_size);
    tc.total_steps = cfg.get_int("train.total_steps", tc.total_steps);
    tc.lr = cfg.get_double("train.lr", tc.lr);
    tc.lambda_gmrf = cfg.get_double("train.lambda_gmrf", tc.lambda_gmrf);
    tc.lambda_entropy_start = cfg.get_double("train.lambda_entropy_start", tc.lambda_entropy_start);
    tc.lambda_entropy_end = cfg.get_double("train.lambda_entropy_end", tc.lambda_entropy_end);
    tc.entropy_ramp_start = cfg.get_int("train.entropy_ramp_start", tc.entropy_ramp_start);
    tc.entropy_ramp_end = cfg.get_int("train.entropy_ramp_end", tc.entropy_ramp_end);
    tc.lambda_variational = cfg.get_double("train.lambda_variational", tc.lambda_variational);
    tc.lambda_adversarial = cfg.get_double("train.lambda_adversarial", tc.lambda_adversarial);
    tc.ema_decay = cfg.get_double("train.ema_decay", tc.ema_decay);
    tc.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", static_cast<std::int64_t>(tc.seed)));
    tc.flip_prob = cfg.get_double("train.flip_prob", tc.flip_prob);
    tc.log_every = cfg.get_int("train.log_every", tc.log_every);
    tc.eval_every = cfg.get_int("train.eval_every", tc.eval_every);
    tc.checkpoint_every = cfg.get_int("train.checkpoint_every", tc.checkpoint_every);

    const std::string adaptive = cfg.get_str("train.adaptive_adv", "ema_gate");
    if (adaptive == "ema_gate")
        tc.adaptive_adv = AdaptiveAdv::EmaGate;
    else if (adaptive == "off")
        tc.adaptive_adv = AdaptiveAdv::Off;
    else
        throw ConfigError("train.adaptive_adv must be off or ema_gate, got " + adaptive);

    const std::string recon = cfg.get_str("train.recon_mode", "pixel_l2");
    if (recon == "pixel_l2")
        tc.recon_mode = pipeline::ReconMode::PixelL2;
    else if (recon == "perceptual")
        tc.recon_mode = pipeline::ReconMode::Perceptual;
    else
        throw ConfigError("train.recon_mode must be pixel_l2 or perceptual, got " + recon);

    const std::string categorical = cfg.get_str("train.categorical_reg", "entropy");
    if (categorical == "cross_entropy")
        throw ConfigError("train.categorical_reg = cross_entropy is reserved and not implemented");
    if (categorical != "entropy")
        throw ConfigError("train.categorical_reg must be entropy, got " + categorical);

    tc.detach_s2 = cfg.get_bool("train.detach_s2", tc.detach_s2);
    tc.validate();
    return tc;
}

KeyValueConfig TrainConfig::to_config() const {
    KeyValueConfig cfg;
    net.to_config(cfg);
    auto set_num = [&](const std::string& key, double v) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v;
        cfg.set(key, ss.str());
    };
    cfg.set("train.batch_size", std::to_string(batch_size));
    cfg.set("train.total_steps", std::to_string(total_steps));
    set_num("train.lr", lr);
    set_num("train.lambda_gmrf", lambda_gmrf);
    set_num("train.lambda_entropy_start", lambda_entropy_start);
    set_num("train.lambda_entropy_end", lambda_entropy_end);
    cfg.set("train.entropy_ramp_start", std::to_string(entropy_ramp_start));
    cfg.set("train.entropy_ramp_end", std::to_string(entropy_ramp_end));
    set_num("train.lambda_variational", lambda_variational);
    set_num("train.lambda_adversarial", lambda_adversarial);
    set_num("train.ema_decay", ema_decay);
    cfg.set("train.seed", std::to_string(seed));
    set_num("train.flip_prob", flip_prob);
    cfg.set("train.log_every", std::to_string(log_every));
    cfg.set("train.eval_every", std::to_string(eval_every));
    cfg.set("train.checkpoint_every", std::to_string(checkpoint_every));
    cfg.set("train.adaptive_adv", adaptive_adv == AdaptiveAdv::EmaGate ? "ema_gate" : "off");
    cfg.set("train.recon_mode",
            recon_mode == pipeline::ReconMode::PixelL2 ? "pixel_l2" : "perceptual");
    cfg.set("train.categorical_reg", "entropy");
    cfg.set("train.detach_s2", detach_s2 ? "true" : "false");
    return cfg;
}

WeightMap weight_schedule(std::int64_t step, const TrainConfig& cfg) {
    WeightMap weights;
    weights.rec = 1.0;
    weights.variational = cfg.lambda_variational;
    weights.gmrf = cfg.lambda_gmrf;
    weights.adversarial = cfg.lambda_adversarial;
    if (step <= cfg.entropy_ramp_start) {
        weights.entropy = cfg.lambda_entropy_start;
    } else if (step >= cfg.entropy_ramp_end) {
        weights.entropy = cfg.lambda_entropy_end;
    } else {
        const double t = static_cast<double>(step - cfg.entropy_ramp_start) /
                         static_cast<double>(cfg.entropy_ramp_end - cfg.entropy_ramp_start);
        weights.entropy = cfg.lambda_entropy_start + t * (cfg.lambda_entropy_end - cfg.lambda_entropy_start);
    }
    return weights;
}

Adam::Adam(std::vector<torch::Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        exp_avg_.push_back(torch::zeros_like(p));
        exp_avg_sq_.push_back(torch::zeros_like(p));
    }
}

void Adam::step(const std::vector<torch::Tensor>& grads) {
    TORCH_CHECK(grads.size() == params_.size(), "Adam: gradient count mismatch");
    torch::NoGradGuard no_grad;
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!grads[i].defined()) continue;
        exp_avg_[i].mul_(beta1_).add_(grads[i], 1.0 - beta1_);
        exp_avg_sq_[i].mul_(beta2_).addcmul_(grads[i], grads[i], 1.0 - beta2_);
        const auto denom = (exp_avg_sq_[i] / bc2).sqrt_().add_(eps_);
        params_[i].addcdiv_(exp_avg_[i] / bc1, denom, -lr_);
    }
}

void Adam::save(TensorArchive& ar, const std::string& prefix) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ar.put(prefix + ".exp_avg." + std::to_string(i), exp_avg_[i]);
        ar.put(prefix + ".exp_avg_sq." + std::to_string(i), exp_avg_sq_[i]);
    }
    ar.put(prefix + ".step", torch::tensor(step_count_, torch::kInt64));
}

void Adam::load(const TensorArchive& ar, const std::string& prefix) {
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        exp_avg_[i].copy_(ar.get(prefix + ".exp_avg." + std::to_string(i)));
        exp_avg_sq_[i].copy_(ar.get(prefix + ".exp_avg_sq." + std::to_string(i)));
    }
    step_count_ = ar.get(prefix + ".step").item<std::int64_t>();
}

TrainState init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    TrainState state;
    state.model = nets::ModelSet::make(cfg.net, cfg.seed);
    state.opt_model = std::make_unique<Adam>(state.model.model_parameters(), cfg.lr);
    state.opt_adv = std::make_unique<Adam>(state.model.adversary_parameters(), cfg.lr);
    state.mi_ema.decay = cfg.ema_decay;
    state.noise_gen = at::detail::createCPUGenerator(mix_seed(cfg.seed, 0x60u));
    state.shuffle_rng = make_rng(cfg.seed, 0x61u);
    return state;
}

std::map<std::string, double> train_step(TrainState& state, const data::PairBatch& batch,
                                         const TrainConfig& cfg) {
    auto& model = state.model;
    const auto weights = weight_schedule(state.step, cfg);

    pipeline::ForwardOptions opts;
    opts.recon_mode = cfg.recon_mode;
    opts.detach_s2 = cfg.detach_s2;
    auto result = pipeline::forward_train(model, batch.x1, batch.x2, opts, state.noise_gen);

    std::map<std::string, double> out;
    for (const auto& [name, value] : result.losses) out[name] = value.item<double>();
    // only terms entering the applied objective can abort; zero-weighted losses
    // are reported but never gate the step
    std::map<std::string, double> term_weight = {{"rec", weights.rec},
                                                 {"kl_pi", weights.variational},
                                                 {"gmrf", weights.gmrf},
                                                 {"entropy", weights.entropy},
                                                 {"adv_penalty", weights.adversarial}};
    for (const auto& [name, value] : out) {
        const auto w = term_weight.find(name);
        if (w != term_weight.end() && w->second == 0.0) continue;
        if (!std::isfinite(value)) {
            std::ostringstream dump;
            dump << "non-finite loss at step " << state.step << ":";
            for (const auto& [n, v] : out) dump << " " << n << "=" << v;
            throw NumericError(dump.str());
        }
    }

    const double gate = cfg.adaptive_adv == AdaptiveAdv::EmaGate
                            ? 1.0 / (1.0 + std::exp(-state.mi_ema.value))
                            : 1.0;
    // zero-weighted terms are left out entirely (0 * inf would poison the sum)
    auto enc_loss = result.losses.at("rec");
    if (weights.variational != 0.0) enc_loss = enc_loss + weights.variational * result.losses.at("kl_pi");
    if (weights.adversarial != 0.0)
        enc_loss = enc_loss + weights.adversarial * gate * result.losses.at("adv_penalty");
    auto prior_loss = torch::zeros({}, enc_loss.options());
    if (weights.gmrf != 0.0) prior_loss = prior_loss + weights.gmrf * result.losses.at("gmrf");
    if (weights.entropy != 0.0)
        prior_loss = prior_loss + weights.entropy * result.losses.at("entropy");

    const auto model_params = model.model_parameters();
    const auto dm_params = model.mask_decoder_parameters();
    // gmrf/entropy gradients are restricted to the mask decoder; the shape
    // encoder upstream of the logits receives nothing from them
    const auto g_prior =
        prior_loss.requires_grad()
            ? torch::autograd::grad({prior_loss}, dm_params, {}, /*retain_graph=*/true,
                                    /*create_graph=*/false, /*allow_unused=*/true)
            : std::vector<torch::Tensor>(dm_params.size());
    auto g_model = torch::autograd::grad({enc_loss}, model_params, {}, /*retain_graph=*/false,
                                         /*create_graph=*/false, /*allow_unused=*/true);
    std::unordered_map<void*, std::size_t> slot;
    for (std::size_t i = 0; i < model_params.size(); ++i)
        slot[model_params[i].unsafeGetTensorImpl()] = i;
    for (std::size_t i = 0; i < dm_params.size(); ++i) {
        if (!g_prior[i].defined()) continue;
        auto& dst = g_model[slot.at(dm_params[i].unsafeGetTensorImpl())];
        dst = dst.defined() ? dst + g_prior[i] : g_prior[i];
    }

    // adversary update runs first, on detached codes, with all other nets frozen
    const auto pi_d = result.codes.pi_sample.detach();
    const auto alpha_d = result.codes.alpha_full.detach();
    const auto t_joint = model.adv->forward(pi_d, alpha_d);
    double t_obj_value = 0.0;
    if (batch.x1.size(0) >= 2) {
        std::uniform_int_distribution<std::uint64_t> useed;
        const auto alpha_shuffled = mi::shuffle_marginals(alpha_d, useed(state.shuffle_rng));
        const auto t_marginal = model.adv->forward(pi_d, alpha_shuffled);
        const auto t_obj = mi::adversary_objective(t_joint, t_marginal);
        t_obj_value = t_obj.item<double>();
        const auto g_adv = torch::autograd::grad({-t_obj}, model.adversary_parameters());
        state.opt_adv->step(g_adv);
    }
    state.mi_ema = mi::update_mi_ema(state.mi_ema, t_joint.mean().item<double>());

    state.opt_model->step(g_model);
    state.step += 1;

    out["t_obj"] = t_obj_value;
    out["adv_gate"] = gate;
    out["total"] = enc_loss.item<double>() + prior_loss.item<double>();
    return out;
}

namespace {

json rng_state_to_json(const torch::Generator& gen) {
    const auto state = gen.get_state().contiguous();
    const auto* bytes = state.data_ptr<std::uint8_t>();
    std::string hex;
    hex.reserve(static_cast<std::size_t>(state.numel()) * 2);
    const char* digits = "0123456789abcdef";
    for (std::int64_t i = 0; i < state.numel(); ++i) {
        hex.push_back(digits[bytes[i] >> 4]);
        hex.push_back(digits[bytes[i] & 0xf]);
    }
    return hex;
}

torch::Tensor rng_state_from_hex(const std::string& hex) {
    auto t = torch::empty({static_cast<std::int64_t>(hex.size() / 2)}, torch::kUInt8);
    auto* bytes = t.data_ptr<std::uint8_t>();
    for (std::size_t i = 0; i + 1 < hex.size(); i += 2)
        bytes[i / 2] = static_cast<std::uint8_t>(std::stoi(hex.substr(i, 2), nullptr, 16));
    return t;
}

}  // namespace

void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::string& path,
                     const std::string& loader_rng_state) {
    TensorArchive ar;
    for (const auto& [name, p] : state.model.named_parameters()) ar.put("param." + name, p);
    state.opt_model->save(ar, "opt.model");
    state.opt_adv->save(ar, "opt.adv");

    json meta;
    meta["format"] = "partseg-checkpoint";
    meta["step"] = state.step;
    meta["config"] = cfg.to_config().to_string();
    meta["mi_ema"] = {{"value", state.mi_ema.value}, {"decay", state.mi_ema.decay}, {"step", state.mi_ema.step}};
    meta["rng"]["noise"] = rng_state_to_json(state.noise_gen);
    {
        std::ostringstream ss;
        ss << state.shuffle_rng;
        meta["rng"]["shuffle"] = ss.str();
    }
    if (!loader_rng_state.empty()) meta["rng"]["loader"] = loader_rng_state;
    ar.metadata() = meta.dump();
    ar.save(path);
}

TrainConfig checkpoint_config(const std::string& path) {
    const auto ar = TensorArchive::load(path);
    const auto meta = json::parse(ar.metadata());
    return TrainConfig::from_config(KeyValueConfig::from_string(meta.at("config").get<std::string>()));
}

TrainState load_checkpoint(const std::string& path, const std::optional<TrainConfig>& expect,
                           std::string* loader_rng_state) {
    const auto ar = TensorArchive::load(path);
    const auto meta = json::parse(ar.metadata());
    const auto cfg =
        TrainConfig::from_config(KeyValueConfig::from_string(meta.at("config").get<std::string>()));
    if (expect && !(expect->net == cfg.net))
        throw ConfigError("checkpoint net config mismatch: stored config differs from requested one");

    auto state = init_train_state(cfg);
    {
        torch::NoGradGuard no_grad;
        for (const auto& [name, p] : state.model.named_parameters()) p.copy_(ar.get("param." + name));
    }
    state.opt_model->load(ar, "opt.model");
    state.opt_adv->load(ar, "opt.adv");
    state.step = meta.at("step").get<std::int64_t>();
    state.mi_ema.value = meta.at("mi_ema").at("value").get<double>();
    state.mi_ema.decay = meta.at("mi_ema").at("decay").get<double>();
    state.mi_ema.step = meta.at("mi_ema").at("step").get<std::int64_t>();
    state.noise_gen.set_state(rng_state_from_hex(meta.at("rng").at("noise").get<std::string>()));
    {
        std::istringstream ss(meta.at("rng").at("shuffle").get<std::string>());
        ss >> state.shuffle_rng;
    }
    if (loader_rng_state) {
        *loader_rng_state = meta.contains("rng") && meta.at("rng").contains("loader")
                                ? meta.at("rng").at("loader").get<std::string>()
                                : "";
    }
    return state;
}

namespace {

double validation_iou(nets::ModelSet& model, const std::vector<synth::Sample>& samples) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> pred, gt;
    std::int64_t num_classes = 0;
    constexpr std::int64_t kChunk = 32;
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
        std::vector<torch::Tensor> images;
        for (std::size_t i = start; i < std::min(samples.size(), start + kChunk); ++i)
            images.push_back(samples[i].image);
        const auto seg = pipeline::infer_segmentation(model, torch::stack(images));
        const auto argmax = seg.probs.argmax(1);
        for (std::int64_t b = 0; b < argmax.size(0); ++b) {
            const auto& sample = samples[start + static_cast<std::size_t>(b)];
            pred.push_back(argmax[b]);
            gt.push_back(sample.class_map());
            num_classes = std::max(num_classes, sample.gt_masks.size(0));
        }
    }
    const auto mapping = eval::calibrate(pred, gt, model.cfg.num_parts, num_classes);
    return eval::evaluate_iou(pred, gt, mapping, num_classes).overall;
}

}  // namespace

FitResult fit(const TrainConfig& cfg, data::PairLoader& loader,
              const std::vector<synth::Sample>& val_samples, const std::string& out_dir,
              TrainState* resume_state, const std::string& resume_loader_rng) {
    cfg.validate();
    fs::create_directories(out_dir);
    TrainState state = resume_state ? std::move(*resume_state) : init_train_state(cfg);
    if (!resume_loader_rng.empty()) loader.set_rng_state(resume_loader_rng);

    const std::string metrics_path = out_dir + "/metrics.jsonl";
    std::ofstream metrics(metrics_path, state.step > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) throw ConfigError("cannot write metrics stream: " + metrics_path);

    FitResult fit_result;
    fit_result.metrics_path = metrics_path;
    const std::string latest = out_dir + "/latest.ckpt";

    while (state.step < cfg.total_steps) {
        const auto batch = loader.next();
        const auto losses = train_step(state, batch, cfg);
        fit_result.last_losses = losses;

        const bool log_now = cfg.log_every > 0 &&
                             (state.step % cfg.log_every == 0 || state.step == cfg.total_steps);
        const bool eval_now = cfg.eval_every > 0 && !val_samples.empty() &&
                              (state.step % cfg.eval_every == 0 || state.step == cfg.total_steps);
        if (eval_now) fit_result.last_val_iou = validation_iou(state.model, val_samples);
        if (log_now || eval_now) {
            const auto weights = weight_schedule(state.step, cfg);
            json rec;
            rec["step"] = state.step;
            for (const auto& [name, value] : losses) rec[name] = value;
            rec["lambda_gmrf"] = weights.gmrf;
            rec["lambda_entropy"] = weights.entropy;
            rec["lambda_variational"] = weights.variational;
            rec["lambda_adversarial"] = weights.adversarial;
            rec["i_t_ema"] = state.mi_ema.value;
            if (eval_now) rec["val_iou"] = fit_result.last_val_iou;
            metrics << rec.dump() << "\n";
            metrics.flush();
        }
        if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0)
            save_checkpoint(state, cfg, latest, loader.rng_state());
    }
    save_checkpoint(state, cfg, latest, loader.rng_state());
    fit_result.checkpoint_path = latest;
    if (resume_state) *resume_state = std::move(state);
    return fit_result;
}

}  // namespace partseg::train
