#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "partseg/evalmetrics.hpp"

namespace partseg::report {

struct QualitativeCase {
    torch::Tensor image;  // [3, H, W] float32
    torch::Tensor pred;   // [H, W] int64 class ids (after calibration merge)
    torch::Tensor gt;     // [H, W] int64 class ids
};

void write_iou_csv(const eval::IouReport& report, const std::string& path);
eval::IouReport read_iou_csv(const std::string& path);

void save_mapping_csv(const eval::CalibrationMapping& mapping, const std::string& path);
eval::CalibrationMapping load_mapping_csv(const std::string& path);

// Distinct color per foreground class; class 0 stays black. [3] float32.
torch::Tensor class_color(std::int64_t cls, std::int64_t num_classes);

// 50/50 blend of the image with per-class colors on foreground pixels.
torch::Tensor overlay(const torch::Tensor& image, const torch::Tensor& class_map,
                      std::int64_t num_classes);

// One row per case: input | prediction overlay | ground-truth overlay.
void write_qualitative_grid(const std::vector<QualitativeCase>& cases, std::int64_t num_classes,
                            const std::string& path);

// Line plot of the loss components found in a line-delimited metrics log.
// An empty or missing log yields a "no data" placeholder image.
void write_loss_curves(const std::string& metrics_path, const std::string& png_path);

// CSV table, loss curves, and qualitative grid under one directory.
void emit_report(const eval::IouReport& report, const std::string& metrics_path,
                 const std::vector<QualitativeCase>& cases, std::int64_t num_classes,
                 const std::string& out_dir);

}  // namespace partseg::report
