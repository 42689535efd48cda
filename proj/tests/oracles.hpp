#pragma once

#include <torch/torch.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracles {

// Central finite differences of a scalar-valued function w.r.t. one tensor,
// evaluated in double precision.
inline torch::Tensor finite_diff(const std::function<double(const torch::Tensor&)>& f,
                                 const torch::Tensor& x, double h = 1e-5) {
    auto grad = torch::zeros_like(x);
    auto flat = x.reshape(-1);
    auto gflat = grad.reshape(-1);
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
        auto xp = x.clone();
        auto xm = x.clone();
        xp.reshape(-1)[i] += h;
        xm.reshape(-1)[i] -= h;
        gflat[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return grad;
}

// Largest relative error between an analytic gradient and its finite-difference
// estimate, with an absolute floor so near-zero entries do not explode.
inline double rel_error(const torch::Tensor& analytic, const torch::Tensor& numeric,
                        double floor = 1e-6) {
    const auto diff = (analytic - numeric).abs();
    const auto scale = analytic.abs().maximum(numeric.abs()).clamp_min(floor);
    return (diff / scale).max().item<double>();
}

// Checks every parameter of `params` against central differences of `loss_fn`.
// floor_frac > 0 additionally floors the denominator at that fraction of the
// tensor's largest gradient entry, so components drowned in the differencing
// noise of a large loss value are compared in absolute terms.
// max_checks > 0 caps the finite-difference probes per tensor by striding
// through its entries; coverage stays spread across the whole tensor.
inline double max_grad_rel_error(const std::function<torch::Tensor()>& loss_fn,
                                 const std::vector<torch::Tensor>& params, double h = 1e-5,
                                 double floor = 1e-6, double floor_frac = 0.0,
                                 std::int64_t max_checks = 0) {
    auto loss = loss_fn();
    auto grads = torch::autograd::grad({loss}, params, {}, true, false, true);
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        torch::NoGradGuard no_grad;
        const auto analytic = grads[i].defined() ? grads[i] : torch::zeros_like(params[i]);
        const double tensor_floor =
            std::max(floor, floor_frac * analytic.abs().max().item<double>());
        auto flat = params[i].reshape(-1);
        const auto aflat = analytic.reshape(-1);
        const std::int64_t n = flat.numel();
        const std::int64_t stride =
            max_checks > 0 ? std::max<std::int64_t>(1, (n + max_checks - 1) / max_checks) : 1;
        for (std::int64_t j = 0; j < n; j += stride) {
            const double orig = flat[j].item<double>();
            flat[j] = orig + h;
            const double fp = loss_fn().item<double>();
            flat[j] = orig - h;
            const double fm = loss_fn().item<double>();
            flat[j] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = aflat[j].item<double>();
            const double scale = std::max({std::abs(a), std::abs(numeric), tensor_floor});
            worst = std::max(worst, std::abs(a - numeric) / scale);
        }
    }
    return worst;
}

// Dense GMRF oracle on a single-channel [H, W] map, torch-free in spirit: the
// forward-difference operator is materialized as a matrix D and the energy is
// 0.5 * f^T (D^T D) f. Carries the derivation's 1/2 factor.
inline double gmrf_dense_oracle(const std::vector<std::vector<double>>& f) {
    const std::size_t h = f.size();
    const std::size_t w = f[0].size();
    const std::size_t n = h * w;
    std::vector<std::vector<double>> rows;  // each row of D
    auto idx = [&](std::size_t r, std::size_t c) { return r * w + c; };
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c + 1 < w; ++c) {
            std::vector<double> row(n, 0.0);
            row[idx(r, c + 1)] = 1.0;
            row[idx(r, c)] = -1.0;
            rows.push_back(row);
        }
    for (std::size_t r = 0; r + 1 < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            std::vector<double> row(n, 0.0);
            row[idx(r + 1, c)] = 1.0;
            row[idx(r, c)] = -1.0;
            rows.push_back(row);
        }
    std::vector<double> flat(n);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) flat[idx(r, c)] = f[r][c];
    // Q = D^T D; energy = 0.5 f^T Q f computed through the dense products
    std::vector<std::vector<double>> q(n, std::vector<double>(n, 0.0));
    for (const auto& row : rows)
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) q[a][b] += row[a] * row[b];
    double energy = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        double qf = 0.0;
        for (std::size_t b = 0; b < n; ++b) qf += q[a][b] * flat[b];
        energy += flat[a] * qf;
    }
    return 0.5 * energy;
}

// Monte-Carlo estimate of KL(N(mu, sigma^2) || N(0,1)) for scalar parameters.
inline double gaussian_kl_mc(double mu, double sigma, std::int64_t samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    double acc = 0.0;
    for (std::int64_t i = 0; i < samples; ++i) {
        const double x = mu + sigma * dist(rng);
        const double logq = -0.5 * std::pow((x - mu) / sigma, 2) - std::log(sigma);
        const double logp = -0.5 * x * x;
        acc += logq - logp;
    }
    return acc / static_cast<double>(samples);
}

}  // namespace oracles
