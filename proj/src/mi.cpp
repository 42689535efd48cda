#include "partseg/mi.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace partseg::mi {

torch::Tensor shuffle_marginals(const torch::Tensor& alphas, std::uint64_t seed) {
    const auto batch = alphas.size(0);
    if (batch < 2) throw ConfigError("shuffle_marginals: batch size must be >= 2");
    auto rng = make_rng(seed, 0x5u);
    std::vector<std::int64_t> perm(static_cast<std::size_t>(batch));
    std::iota(perm.begin(), perm.end(), 0);
    const auto is_identity = [&] {
        for (std::int64_t i = 0; i < batch; ++i)
            if (perm[static_cast<std::size_t>(i)] != i) return false;
        return true;
    };
    do {
        std::shuffle(perm.begin(), perm.end(), rng);
    } while (is_identity());
    const auto idx = torch::from_blob(perm.data(), {batch}, torch::kInt64).clone();
    return alphas.index_select(0, idx);
}

torch::Tensor adversary_objective(const torch::Tensor& t_joint, const torch::Tensor& t_marginal) {
    return torch::log_sigmoid(t_joint).mean() + torch::log_sigmoid(-t_marginal).mean();
}

torch::Tensor mi_penalty(const torch::Tensor& t_joint) { return t_joint.mean(); }

MiEstimate update_mi_ema(MiEstimate est, double batch_value) {
    if (est.step == 0) {
        est.value = batch_value;
    } else {
        est.value = est.decay * est.value + (1.0 - est.decay) * batch_value;
    }
    est.step += 1;
    return est;
}

}  // namespace partseg::mi
