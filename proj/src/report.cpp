#include "partseg/report.hpp"

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "partseg/dataset.hpp"
#include "partseg/sprites.hpp"

namespace partseg::report {

namespace fs = std::filesystem;
using json = nlohmann::json;

void write_iou_csv(const eval::IouReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write report CSV: " + path);
    out << "class,iou\n";
    out.precision(6);
    out << std::fixed;
    for (std::size_t c = 0; c < report.per_class.size(); ++c)
        out << (c + 1) << "," << report.per_class[c] << "\n";
    out << "overall," << report.overall << "\n";
}

eval::IouReport read_iou_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read report CSV: " + path);
    eval::IouReport report;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ConfigError("malformed report CSV row: " + line);
        const auto key = line.substr(0, comma);
        const double value = std::stod(line.substr(comma + 1));
        if (key == "overall")
            report.overall = value;
        else
            report.per_class.push_back(value);
    }
    return report;
}

void save_mapping_csv(const eval::CalibrationMapping& mapping, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write mapping: " + path);
    out << "part,class\n";
    for (std::size_t i = 0; i < mapping.assign.size(); ++i)
        out << (i + 1) << "," << mapping.assign[i] << "\n";
}

eval::CalibrationMapping load_mapping_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read mapping: " + path);
    eval::CalibrationMapping mapping;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ConfigError("malformed mapping row: " + line);
        mapping.assign.push_back(std::stoll(line.substr(comma + 1)));
    }
    if (mapping.assign.empty()) throw ConfigError("empty mapping file: " + path);
    return mapping;
}

torch::Tensor class_color(std::int64_t cls, std::int64_t num_classes) {
    if (cls <= 0) return torch::zeros({3});
    const double hue = static_cast<double>(cls - 1) / static_cast<double>(std::max<std::int64_t>(num_classes, 1));
    return synth::hsv_to_rgb(hue, 0.9, 1.0);
}

torch::Tensor overlay(const torch::Tensor& image, const torch::Tensor& class_map,
                      std::int64_t num_classes) {
    TORCH_CHECK(image.dim() == 3 && image.size(0) == 3, "expected [3, H, W] image");
    TORCH_CHECK(class_map.sizes() == image.sizes().slice(1), "image/class-map shape mismatch");
    auto out = image.clone();
    auto colors = torch::zeros({num_classes + 1, 3});
    for (std::int64_t c = 1; c <= num_classes; ++c) colors[c] = class_color(c, num_classes);
    const auto color_map = colors.index_select(0, class_map.reshape(-1))
                               .t()
                               .reshape({3, image.size(1), image.size(2)});
    const auto fg = (class_map > 0).unsqueeze(0).to(torch::kFloat32);
    return out * (1.0 - 0.5 * fg) + color_map * (0.5 * fg);
}

void write_qualitative_grid(const std::vector<QualitativeCase>& cases, std::int64_t num_classes,
                            const std::string& path) {
    if (cases.empty()) throw ConfigError("qualitative grid needs at least one case");
    std::vector<torch::Tensor> rows;
    for (const auto& c : cases) {
        const auto gt_panel = overlay(c.image, c.gt, num_classes);
        const auto pred_panel = overlay(c.image, c.pred, num_classes);
        rows.push_back(torch::cat({c.image, pred_panel, gt_panel}, 2));
    }
    data::save_image_png(path, torch::cat(rows, 1));
}

namespace {

void draw_placeholder(cv::Mat& canvas, const std::string& text) {
    cv::putText(canvas, text, {40, canvas.rows / 2}, cv::FONT_HERSHEY_SIMPLEX, 1.0,
                {40, 40, 40}, 2, cv::LINE_AA);
}

}  // namespace

void write_loss_curves(const std::string& metrics_path, const std::string& png_path) {
    std::map<std::string, std::vector<std::pair<double, double>>> series;  // name -> (step, value)
    std::ifstream in(metrics_path);
    std::string line;
    while (in && std::getline(in, line)) {
        if (line.empty()) continue;
        const auto rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("step")) continue;
        const double step = rec.at("step").get<double>();
        for (const auto& key : {"rec", "kl_pi", "gmrf", "entropy", "adv_penalty", "total", "val_iou"})
            if (rec.contains(key)) series[key].push_back({step, rec.at(key).get<double>()});
    }

    const int width = 960, height = 600, margin = 60;
    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    if (series.empty()) {
        draw_placeholder(canvas, "no data");
        if (!cv::imwrite(png_path, canvas)) throw ConfigError("failed to write plot: " + png_path);
        return;
    }

    double max_step = 1.0, max_val = 1e-12;
    for (const auto& [name, pts] : series)
        for (const auto& [s, v] : pts) {
            max_step = std::max(max_step, s);
            if (std::isfinite(v)) max_val = std::max(max_val, std::abs(v));
        }
    // log-scale magnitude axis so terms spanning orders of magnitude stay visible
    const double log_floor = -6.0;
    auto to_px = [&](double s, double v) {
        const double x = margin + (width - 2 * margin) * (s / max_step);
        const double mag = std::log10(std::max(std::abs(v) / max_val, std::pow(10.0, log_floor)));
        const double y = height - margin - (height - 2 * margin) * ((mag - log_floor) / -log_floor);
        return cv::Point(static_cast<int>(x), static_cast<int>(y));
    };

    cv::line(canvas, {margin, height - margin}, {width - margin, height - margin}, {0, 0, 0}, 1);
    cv::line(canvas, {margin, margin}, {margin, height - margin}, {0, 0, 0}, 1);

    const std::vector<cv::Scalar> palette = {{180, 30, 30}, {30, 140, 30},  {30, 30, 200},
                                             {160, 30, 160}, {30, 160, 200}, {0, 120, 200},
                                             {120, 120, 0}};
    int idx = 0, label_y = margin;
    for (const auto& [name, pts] : series) {
        const auto color = palette[static_cast<std::size_t>(idx) % palette.size()];
        for (std::size_t i = 1; i < pts.size(); ++i)
            cv::line(canvas, to_px(pts[i - 1].first, pts[i - 1].second),
                     to_px(pts[i].first, pts[i].second), color, 1, cv::LINE_AA);
        cv::putText(canvas, name, {width - margin + 4, label_y}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                    color, 1, cv::LINE_AA);
        label_y += 18;
        ++idx;
    }
    if (!cv::imwrite(png_path, canvas)) throw ConfigError("failed to write plot: " + png_path);
}

void emit_report(const eval::IouReport& report, const std::string& metrics_path,
                 const std::vector<QualitativeCase>& cases, std::int64_t num_classes,
                 const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw ConfigError("cannot create report dir: " + out_dir);
    write_iou_csv(report, out_dir + "/report.csv");
    write_loss_curves(metrics_path, out_dir + "/loss_curves.png");
    if (!cases.empty()) write_qualitative_grid(cases, num_classes, out_dir + "/qualitative.png");
}

}  // namespace partseg::report
