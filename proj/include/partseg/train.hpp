#pragma once

#include <torch/torch.h>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "partseg/checkpoint.hpp"
#include "partseg/config.hpp"
#include "partseg/dataset.hpp"
#include "partseg/mi.hpp"
#include "partseg/nets.hpp"
#include "partseg/pipeline.hpp"

namespace partseg::train {

enum class AdaptiveAdv { Off, EmaGate };

struct TrainConfig {
    std::int64_t batch_size = 16;
    std::int64_t total_steps = 20000;
    double lr = 2e-4;
    double lambda_gmrf = 1e-3;
    double lambda_entropy_start = 6e-5;
    double lambda_entropy_end = 0.06;
    std::int64_t entropy_ramp_start = 4000;
    std::int64_t entropy_ramp_end = 8000;
    double lambda_variational = 1.0;
    double lambda_adversarial = 1.0;
    double ema_decay = 0.99;
    std::uint64_t seed = 0;
    AdaptiveAdv adaptive_adv = AdaptiveAdv::EmaGate;
    pipeline::ReconMode recon_mode = pipeline::ReconMode::PixelL2;
    bool detach_s2 = true;
    double flip_prob = 0.0;
    std::int64_t log_every = 50;
    std::int64_t eval_every = 2000;
    std::int64_t checkpoint_every = 5000;
    nets::NetConfig net;

    void validate() const;
    static TrainConfig from_config(const KeyValueConfig& cfg);
    KeyValueConfig to_config() const;
};

struct WeightMap {
    double rec = 1.0;
    double variational = 0.0;
    double gmrf = 0.0;
    double entropy = 0.0;
    double adversarial = 0.0;
};

// lambda_entropy linearly interpolated on the ramp, clamped outside; other
// weights constant.
WeightMap weight_schedule(std::int64_t step, const TrainConfig& cfg);

// Minimal Adam with externally supplied gradients, exactly restorable.
class Adam {
public:
    Adam(std::vector<torch::Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    // grads aligned with params; undefined entries are skipped.
    void step(const std::vector<torch::Tensor>& grads);

    void save(TensorArchive& ar, const std::string& prefix) const;
    void load(const TensorArchive& ar, const std::string& prefix);

private:
    std::vector<torch::Tensor> params_;
    std::vector<torch::Tensor> exp_avg_;
    std::vector<torch::Tensor> exp_avg_sq_;
    std::int64_t step_count_ = 0;
    double lr_, beta1_, beta2_, eps_;
};

struct TrainState {
    std::int64_t step = 0;
    nets::ModelSet model;
    std::unique_ptr<Adam> opt_model;  // all nets except the adversary
    std::unique_ptr<Adam> opt_adv;
    mi::MiEstimate mi_ema;
    torch::Generator noise_gen;       // reparameterization noise
    std::mt19937_64 shuffle_rng;      // marginal-shuffle seeds
};

TrainState init_train_state(const TrainConfig& cfg);

// One optimization step: adversary first, then the jointly updated nets with
// per-term gradient routing. Throws NumericError with a loss dump on non-finite
// losses.
std::map<std::string, double> train_step(TrainState& state, const data::PairBatch& batch,
                                         const TrainConfig& cfg);

void save_checkpoint(const TrainState& state, const TrainConfig& cfg, const std::string& path,
                     const std::string& loader_rng_state = "");
// Restores an exact training state; the stored config must match `expect` when given.
TrainState load_checkpoint(const std::string& path, const std::optional<TrainConfig>& expect,
                           std::string* loader_rng_state = nullptr);
TrainConfig checkpoint_config(const std::string& path);

struct FitResult {
    std::map<std::string, double> last_losses;
    double last_val_iou = -1.0;
    std::string metrics_path;
    std::string checkpoint_path;
};

// Full optimization loop with metrics stream, periodic checkpoints, and
// optional validation IoU probes.
FitResult fit(const TrainConfig& cfg, data::PairLoader& loader,
              const std::vector<synth::Sample>& val_samples, const std::string& out_dir,
              TrainState* resume_state = nullptr, const std::string& resume_loader_rng = "");

}  // namespace partseg::train
