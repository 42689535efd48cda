#include "partseg/evalmetrics.hpp"

#include <cmath>

namespace partseg::eval {

double iou(const torch::Tensor& a, const torch::Tensor& b) {
    TORCH_CHECK(a.sizes() == b.sizes(), "iou: shape mismatch ", a.sizes(), " vs ", b.sizes());
    const auto ab = a.to(torch::kBool);
    const auto bb = b.to(torch::kBool);
    const auto inter = (ab & bb).sum().item<std::int64_t>();
    const auto uni = (ab | bb).sum().item<std::int64_t>();
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

// Dataset-aggregated intersection/union counts between every predicted part
// and every gt class (class 0 = background).
void accumulate_counts(const std::vector<torch::Tensor>& pred_segs,
                       const std::vector<torch::Tensor>& gt_segs,
                       std::int64_t num_parts, std::int64_t num_classes,
                       std::vector<std::vector<std::int64_t>>& inter,
                       std::vector<std::vector<std::int64_t>>& uni) {
    TORCH_CHECK(pred_segs.size() == gt_segs.size(), "pred/gt set size mismatch");
    for (std::size_t s = 0; s < pred_segs.size(); ++s) {
        const auto pred = pred_segs[s].to(torch::kInt64);
        const auto gt = gt_segs[s].to(torch::kInt64);
        TORCH_CHECK(pred.sizes() == gt.sizes(), "pred/gt shape mismatch at sample ", s);
        for (std::int64_t i = 0; i < num_parts; ++i) {
            const auto pm = pred == i;
            const auto pcount = pm.sum().item<std::int64_t>();
            for (std::int64_t c = 0; c <= num_classes; ++c) {
                const auto gm = gt == c;
                const auto both = (pm & gm).sum().item<std::int64_t>();
                inter[i][c] += both;
                uni[i][c] += pcount + gm.sum().item<std::int64_t>() - both;
            }
        }
    }
}

}  // namespace

CalibrationMapping calibrate(const std::vector<torch::Tensor>& pred_segs,
                             const std::vector<torch::Tensor>& gt_segs,
                             std::int64_t num_parts, std::int64_t num_classes) {
    if (pred_segs.empty()) throw ConfigError("calibrate: empty validation set");
    std::vector<std::vector<std::int64_t>> inter(num_parts, std::vector<std::int64_t>(num_classes + 1, 0));
    std::vector<std::vector<std::int64_t>> uni(num_parts, std::vector<std::int64_t>(num_classes + 1, 0));
    accumulate_counts(pred_segs, gt_segs, num_parts, num_classes, inter, uni);
    CalibrationMapping mapping;
    mapping.assign.resize(static_cast<std::size_t>(num_parts));
    for (std::int64_t i = 0; i < num_parts; ++i) {
        std::int64_t best_c = 0;
        double best = -1.0;
        // c = 0 first so ties prefer background, then the lower class id
        for (std::int64_t c = 0; c <= num_classes; ++c) {
            const double score = uni[i][c] == 0 ? 1.0
                                                : static_cast<double>(inter[i][c]) / static_cast<double>(uni[i][c]);
            if (score > best) {
                best = score;
                best_c = c;
            }
        }
        mapping.assign[static_cast<std::size_t>(i)] = best_c;
    }
    return mapping;
}

IouReport evaluate_iou(const std::vector<torch::Tensor>& pred_segs,
                       const std::vector<torch::Tensor>& gt_segs,
                       const CalibrationMapping& mapping, std::int64_t num_classes) {
    TORCH_CHECK(pred_segs.size() == gt_segs.size(), "pred/gt set size mismatch");
    std::vector<std::int64_t> inter(static_cast<std::size_t>(num_classes), 0);
    std::vector<std::int64_t> uni(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t s = 0; s < pred_segs.size(); ++s) {
        const auto pred = pred_segs[s].to(torch::kInt64);
        const auto gt = gt_segs[s].to(torch::kInt64);
        // merge parts into class masks through the mapping
        auto merged = torch::zeros_like(pred);
        for (std::int64_t i = 0; i < mapping.num_parts(); ++i)
            merged = torch::where(pred == i, torch::scalar_tensor(mapping.assign[static_cast<std::size_t>(i)],
                                                                  torch::kInt64),
                                  merged);
        for (std::int64_t c = 1; c <= num_classes; ++c) {
            const auto pm = merged == c;
            const auto gm = gt == c;
            inter[static_cast<std::size_t>(c - 1)] += (pm & gm).sum().item<std::int64_t>();
            uni[static_cast<std::size_t>(c - 1)] += (pm | gm).sum().item<std::int64_t>();
        }
    }
    IouReport report;
    report.per_class.resize(static_cast<std::size_t>(num_classes));
    double sum = 0.0;
    for (std::int64_t c = 0; c < num_classes; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        report.per_class[ci] = uni[ci] == 0 ? 1.0 : static_cast<double>(inter[ci]) / static_cast<double>(uni[ci]);
        sum += report.per_class[ci];
    }
    report.overall = num_classes > 0 ? sum / static_cast<double>(num_classes) : 0.0;
    return report;
}

Keypoint part_centroid(const torch::Tensor& prob_map) {
    TORCH_CHECK(prob_map.dim() == 2, "part_centroid expects [H, W]");
    const auto p = prob_map.to(torch::kFloat64);
    const double mass = p.sum().item<double>();
    if (mass <= 0.0) return std::nullopt;
    const auto rows = torch::arange(p.size(0), torch::kFloat64).unsqueeze(1);
    const auto cols = torch::arange(p.size(1), torch::kFloat64).unsqueeze(0);
    const double r = (p * rows).sum().item<double>() / mass;
    const double c = (p * cols).sum().item<double>() / mass;
    return std::make_pair(r, c);
}

double pck(const std::vector<Keypoint>& pred_kps, const std::vector<Keypoint>& gt_kps,
           double alpha, double diag) {
    if (pred_kps.size() != gt_kps.size()) throw ConfigError("pck: keypoint list length mismatch");
    std::int64_t total = 0;
    std::int64_t correct = 0;
    for (std::size_t k = 0; k < gt_kps.size(); ++k) {
        if (!gt_kps[k]) continue;
        ++total;
        if (!pred_kps[k]) continue;
        const double dr = pred_kps[k]->first - gt_kps[k]->first;
        const double dc = pred_kps[k]->second - gt_kps[k]->second;
        if (std::hypot(dr, dc) <= alpha * diag) ++correct;
    }
    if (total == 0) return 1.0;
    return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace partseg::eval
