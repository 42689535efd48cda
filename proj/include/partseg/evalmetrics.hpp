#pragma once

#include <torch/torch.h>

#include <optional>
#include <utility>
#include <vector>

#include "partseg/common.hpp"

namespace partseg::eval {

// Total many-to-one map from predicted part id {0..N-1} to ground-truth class
// id {0..K}, where class 0 is background.
struct CalibrationMapping {
    std::vector<std::int64_t> assign;

    std::int64_t num_parts() const { return static_cast<std::int64_t>(assign.size()); }
};

struct IouReport {
    std::vector<double> per_class;  // foreground classes 1..K
    double overall = 0.0;           // arithmetic mean of per_class
};

using Keypoint = std::optional<std::pair<double, double>>;  // (row, col); nullopt = absent

// Intersection-over-union of two binary masks. Both empty -> 1, exactly one empty -> 0.
double iou(const torch::Tensor& a, const torch::Tensor& b);

// Per-part argmax of dataset-aggregated IoU against each class (background included).
// pred: argmax part-id maps [H, W] int64 in {0..N-1}; gt: class-id maps in {0..K}.
// Ties break toward background, then the lower class id.
CalibrationMapping calibrate(const std::vector<torch::Tensor>& pred_segs,
                             const std::vector<torch::Tensor>& gt_segs,
                             std::int64_t num_parts, std::int64_t num_classes);

// Merge predicted parts through the mapping and micro-average IoU per class:
// intersections and unions are summed over the set before the ratio.
IouReport evaluate_iou(const std::vector<torch::Tensor>& pred_segs,
                       const std::vector<torch::Tensor>& gt_segs,
                       const CalibrationMapping& mapping, std::int64_t num_classes);

// Probability-weighted mean coordinate of one part map [H, W]. Absent if mass is zero.
Keypoint part_centroid(const torch::Tensor& prob_map);

// Fraction of keypoints with error <= alpha * diag. Absent predictions count as misses;
// keypoints with absent ground truth are excluded.
double pck(const std::vector<Keypoint>& pred_kps, const std::vector<Keypoint>& gt_kps,
           double alpha, double diag);

}  // namespace partseg::eval
