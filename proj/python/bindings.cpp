// Python bindings for the core operations. Arrays cross the boundary as
// contiguous float32/int64 numpy buffers copied into torch tensors.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <torch/torch.h>

#include "partseg/dataset.hpp"
#include "partseg/evalmetrics.hpp"
#include "partseg/mi.hpp"
#include "partseg/pipeline.hpp"
#include "partseg/priors.hpp"
#include "partseg/sprites.hpp"
#include "partseg/train.hpp"

namespace py = pybind11;
using namespace partseg;

namespace {

torch::Tensor to_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
    auto t = torch::empty(shape, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), a.data(), sizeof(float) * static_cast<std::size_t>(a.size()));
    return t;
}

torch::Tensor to_tensor_i64(
    const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::int64_t> shape(a.shape(), a.shape() + a.ndim());
    auto t = torch::empty(shape, torch::kInt64);
    std::memcpy(t.data_ptr<std::int64_t>(), a.data(),
                sizeof(std::int64_t) * static_cast<std::size_t>(a.size()));
    return t;
}

py::array from_tensor(const torch::Tensor& t) {
    const auto c = t.contiguous();
    if (c.scalar_type() == torch::kInt64) {
        py::array_t<std::int64_t> out(c.sizes().vec());
        std::memcpy(out.mutable_data(), c.data_ptr<std::int64_t>(),
                    sizeof(std::int64_t) * static_cast<std::size_t>(c.numel()));
        return out;
    }
    const auto f = c.to(torch::kFloat32);
    py::array_t<float> out(f.sizes().vec());
    std::memcpy(out.mutable_data(), f.data_ptr<float>(),
                sizeof(float) * static_cast<std::size_t>(f.numel()));
    return out;
}

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

synth::SpriteSpec make_spec(std::int64_t num_parts, std::int64_t image_size,
                            double part_length = 0.22, double part_width = 0.14) {
    synth::SpriteSpec spec;
    spec.num_parts = num_parts;
    spec.part_lengths.assign(static_cast<std::size_t>(num_parts), part_length);
    spec.part_widths.assign(static_cast<std::size_t>(num_parts), part_width);
    spec.image_size = image_size;
    spec.validate();
    return spec;
}

py::tuple sample_tuple(const synth::Sample& s) {
    return py::make_tuple(from_tensor(s.image), from_tensor(s.class_map()));
}

// Checkpointed model handle exposing inference and transfer.
struct Model {
    train::TrainConfig cfg;
    train::TrainState state;

    explicit Model(const std::string& path)
        : cfg(train::checkpoint_config(path)), state(train::load_checkpoint(path, cfg)) {
        state.model.train(false);
    }

    py::array infer(const FloatArray& image) {
        torch::NoGradGuard no_grad;
        return from_tensor(pipeline::infer_segmentation(state.model, to_tensor(image)).probs);
    }

    py::array transfer(const FloatArray& pose, const FloatArray& app,
                       const std::vector<std::int64_t>& parts) {
        torch::NoGradGuard no_grad;
        return from_tensor(
            pipeline::transfer_appearance(state.model, to_tensor(pose), to_tensor(app), parts));
    }
};

// Minimal training driver over the sprite generator.
struct Trainer {
    train::TrainConfig cfg;
    train::TrainState state;
    data::PairLoader loader;

    Trainer(const std::string& config_text, std::int64_t num_pairs)
        : cfg(train::TrainConfig::from_config(KeyValueConfig::from_string(config_text))),
          state(train::init_train_state(cfg)),
          loader(make_spec(3, cfg.net.image_size), num_pairs, cfg.batch_size, cfg.flip_prob,
                 mix_seed(cfg.seed, 0x50)) {}

    std::map<std::string, double> step() { return train::train_step(state, loader.next(), cfg); }

    void save(const std::string& path) {
        train::save_checkpoint(state, cfg, path, loader.rng_state());
    }
};

}  // namespace

PYBIND11_MODULE(_partseg, m) {
    m.doc() = "Unsupervised part segmentation toolkit (core bindings)";

    m.def("normalize_segmentation",
          [](const FloatArray& logits) {
              return from_tensor(priors::normalize_segmentation(to_tensor(logits)));
          },
          py::arg("logits"));
    m.def("gmrf_kl",
          [](const FloatArray& logits) {
              return priors::gmrf_kl(to_tensor(logits)).item<double>();
          },
          py::arg("logits"));
    m.def("entropy_reg",
          [](const FloatArray& probs) {
              return priors::entropy_reg(to_tensor(probs)).item<double>();
          },
          py::arg("probs"));
    m.def("gaussian_kl",
          [](const FloatArray& mean, const FloatArray& logvar) {
              return priors::gaussian_kl({to_tensor(mean), to_tensor(logvar)}).item<double>();
          },
          py::arg("mean"), py::arg("logvar"));

    m.def("shuffle_marginals",
          [](const FloatArray& alphas, std::uint64_t seed) {
              return from_tensor(mi::shuffle_marginals(to_tensor(alphas), seed));
          },
          py::arg("alphas"), py::arg("seed"));
    m.def("adversary_objective",
          [](const FloatArray& t_joint, const FloatArray& t_marginal) {
              return mi::adversary_objective(to_tensor(t_joint), to_tensor(t_marginal))
                  .item<double>();
          },
          py::arg("t_joint"), py::arg("t_marginal"));

    m.def("render_sprite",
          [](std::int64_t num_parts, std::int64_t image_size, std::uint64_t hue_seed,
             std::uint64_t pose_seed, double part_length, double part_width) {
              const auto s = synth::render_sprite(
                  make_spec(num_parts, image_size, part_length, part_width), hue_seed, pose_seed,
                  0);
              return sample_tuple(s);
          },
          py::arg("num_parts"), py::arg("image_size"), py::arg("hue_seed"), py::arg("pose_seed"),
          py::arg("part_length") = 0.22, py::arg("part_width") = 0.14);
    m.def("generate_sprite_pair",
          [](std::uint64_t seed, std::int64_t num_parts, std::int64_t image_size,
             double part_length, double part_width) {
              const auto [a, b] = synth::generate_sprite_pair(
                  seed, make_spec(num_parts, image_size, part_length, part_width));
              return py::make_tuple(sample_tuple(a), sample_tuple(b));
          },
          py::arg("seed"), py::arg("num_parts"), py::arg("image_size"),
          py::arg("part_length") = 0.22, py::arg("part_width") = 0.14);
    m.def("generate_hue_pair",
          [](std::uint64_t seed, std::int64_t num_parts, std::int64_t image_size,
             double part_length, double part_width) {
              const auto [a, b] = synth::generate_hue_pair(
                  seed, make_spec(num_parts, image_size, part_length, part_width));
              return py::make_tuple(sample_tuple(a), sample_tuple(b));
          },
          py::arg("seed"), py::arg("num_parts"), py::arg("image_size"),
          py::arg("part_length") = 0.22, py::arg("part_width") = 0.14);
    m.def("mix_seed", [](std::uint64_t seed, std::uint64_t salt) { return mix_seed(seed, salt); },
          py::arg("seed"), py::arg("salt"));

    m.def("calibrate",
          [](const std::vector<IntArray>& preds, const std::vector<IntArray>& gts,
             std::int64_t num_parts, std::int64_t num_classes) {
              std::vector<torch::Tensor> p, g;
              for (const auto& a : preds) p.push_back(to_tensor_i64(a));
              for (const auto& a : gts) g.push_back(to_tensor_i64(a));
              return eval::calibrate(p, g, num_parts, num_classes).assign;
          },
          py::arg("pred_segs"), py::arg("gt_segs"), py::arg("num_parts"), py::arg("num_classes"));
    m.def("evaluate_iou",
          [](const std::vector<IntArray>& preds, const std::vector<IntArray>& gts,
             const std::vector<std::int64_t>& mapping, std::int64_t num_classes) {
              std::vector<torch::Tensor> p, g;
              for (const auto& a : preds) p.push_back(to_tensor_i64(a));
              for (const auto& a : gts) g.push_back(to_tensor_i64(a));
              const auto r = eval::evaluate_iou(p, g, {mapping}, num_classes);
              return py::make_tuple(r.per_class, r.overall);
          },
          py::arg("pred_segs"), py::arg("gt_segs"), py::arg("mapping"), py::arg("num_classes"));

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
        .def_property_readonly("num_parts", [](const Model& s) { return s.cfg.net.num_parts; })
        .def_property_readonly("image_size", [](const Model& s) { return s.cfg.net.image_size; })
        .def("infer", &Model::infer, py::arg("image"))
        .def("transfer", &Model::transfer, py::arg("pose"), py::arg("appearance"),
             py::arg("parts"));

    py::class_<Trainer>(m, "Trainer")
        .def(py::init<const std::string&, std::int64_t>(), py::arg("config_text"),
             py::arg("num_pairs") = 2000)
        .def("step", &Trainer::step, py::call_guard<py::gil_scoped_release>())
        .def("save", &Trainer::save, py::arg("path"))
        .def_property_readonly("step_count", [](const Trainer& t) { return t.state.step; });

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<NumericError>(m, "NumericError");
}
