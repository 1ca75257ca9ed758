#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "camid/augment.hpp"
#include "camid/config.hpp"
#include "camid/error.hpp"
#include "camid/eval.hpp"
#include "camid/infer.hpp"
#include "camid/io.hpp"
#include "camid/jpeg.hpp"
#include "camid/nn/checkpoint.hpp"
#include "camid/nn/gradcheck.hpp"
#include "camid/synth.hpp"
#include "camid/train.hpp"
#include "cli.hpp"

namespace py = pybind11;
using namespace camid;

namespace {

using Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

ImageU8 to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("expected an HxWx3 uint8 array");
  const auto h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  return ImageU8(h, w, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

Array to_array(const ImageU8& img) {
  Array out({img.height(), img.width(), 3});
  std::memcpy(out.mutable_data(), img.data().data(), img.size());
  return out;
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return {reinterpret_cast<const char*>(v.data()), v.size()};
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
  const std::string s = b;
  return {s.begin(), s.end()};
}

RunConfig config_from(const std::string& json_text) {
  return run_config_from_json(json_text.empty() ? nlohmann::json::object()
                                                : nlohmann::json::parse(json_text));
}

// Float32 network with its inference settings.
struct PyModel {
  nn::Model<float> model;

  std::vector<double> predict(const Array& a, int crop, bool tta, const std::string& averaging) const {
    const auto img = to_image(a);
    TtaOptions opt;
    opt.five_crops = opt.dihedral = tta;
    opt.averaging = averaging == "logit" ? Averaging::Logit : Averaging::Probability;
    if (averaging != "logit" && averaging != "probability")
      throw py::value_error("averaging must be 'probability' or 'logit'");
    return tta_predict(model, img, crop, opt).probabilities;
  }
};

}  // namespace

PYBIND11_MODULE(_camid, m) {
  m.doc() = "Camera-model identification: codec, augmentation, network, training and scoring";

  py::register_exception<Error>(m, "CamidError", PyExc_RuntimeError);

  m.def("read_image", [](const std::filesystem::path& p) { return to_array(read_image(p)); },
        py::arg("path"));
  m.def("write_png", [](const std::filesystem::path& p, const Array& a) { write_png(p, to_image(a)); },
        py::arg("path"), py::arg("image"));

  m.def("d4_apply", [](const Array& a, const std::string& g) { return to_array(d4_apply(to_image(a), parse_d4(g))); },
        py::arg("image"), py::arg("element"));
  m.def("d4_compose", [](const std::string& a, const std::string& b) {
    return std::string(to_string(d4_compose(parse_d4(a), parse_d4(b))));
  });
  m.def("d4_elements", [] {
    std::vector<std::string> out;
    for (D4 g : kAllD4) out.emplace_back(to_string(g));
    return out;
  });
  m.def("center_crop", [](const Array& a, int size) { return to_array(center_crop(to_image(a), size)); });
  m.def("apply_op", [](const Array& a, const std::string& op) { return to_array(apply_op(to_image(a), parse_op(op))); },
        py::arg("image"), py::arg("op"), "Applies an operation written like 'gamma:0.8' or 'jpeg:70'.");

  m.def("jpeg_encode",
        [](const Array& a, int quality, std::optional<std::string> software) {
          jpeg::EncodeOptions o;
          o.quality = quality;
          o.exif_software = std::move(software);
          return to_bytes(jpeg::encode(to_image(a), o));
        },
        py::arg("image"), py::arg("quality") = 90, py::arg("software") = py::none());
  m.def("jpeg_decode", [](const py::bytes& b) { return to_array(jpeg::decode(from_bytes(b))); });
  m.def("jpeg_quality", [](const py::bytes& b) { return jpeg::estimate_quality(from_bytes(b)); });

  m.def("weighted_accuracy",
        [](const std::vector<int>& preds, const std::vector<int>& labels,
           const std::vector<bool>& altered, double unaltered_weight, double altered_weight) {
          return weighted_accuracy(preds, labels, altered, {unaltered_weight, altered_weight});
        },
        py::arg("preds"), py::arg("labels"), py::arg("altered"), py::arg("unaltered_weight") = 0.7,
        py::arg("altered_weight") = 0.3);
  m.def("cross_entropy", [](const std::vector<double>& probs, int label) {
    return prediction_loss(probs, label);
  }, py::arg("probabilities"), py::arg("label"), "Per-class binary cross-entropy of one prediction.");

  m.def("gradient_suite", [](std::uint64_t seed, double h) {
    std::vector<std::tuple<std::string, double, double>> out;
    for (const auto& e : nn::gradient_suite(seed, h)) out.emplace_back(e.name, e.max_rel_error, e.tolerance);
    return out;
  }, py::arg("seed"), py::arg("h") = 1e-5, "Returns (name, max relative error, tolerance) per check.");

  m.def("default_config", [] { return to_json(RunConfig{}).dump(); },
        "Default run configuration as JSON text.");

  m.def("make_synthetic_dataset",
        [](const std::filesystem::path& out_dir, const std::string& config_json) {
          const auto cfg = config_from(config_json);
          return make_synthetic_dataset(cfg.synth, out_dir, cfg.workers).size();
        },
        py::arg("out_dir"), py::arg("config_json") = "",
        "Writes the synthetic corpus and its manifest; returns the record count.");

  py::class_<PyModel>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return PyModel{nn::load_checkpoint<float>(p)}; })
      .def("save", [](const PyModel& self, const std::filesystem::path& p) { nn::save_checkpoint(self.model, p); })
      .def_property_readonly("num_classes", [](const PyModel& self) { return self.model.config().num_classes; })
      .def_property_readonly("parameter_count", [](const PyModel& self) { return self.model.config().parameter_count(); })
      .def("predict", &PyModel::predict, py::arg("image"), py::arg("crop"), py::arg("tta") = true,
           py::arg("averaging") = "probability",
           "Class probabilities averaged over the 40 test-time views (or the center view).");

  m.def("train",
        [](const std::filesystem::path& manifest, const std::string& config_json) {
          auto cfg = config_from(config_json);
          const auto records = read_manifest(manifest);
          cfg.train.model.num_classes = class_count(records);
          cfg.train.seed = cfg.seed;
          cfg.train.workers = cfg.workers;
          TrainResult<float> result = [&] {
            py::gil_scoped_release release;
            return train<float>(records, cfg.train);
          }();
          return py::make_tuple(PyModel{std::move(result.model)}, result.curve.points);
        },
        py::arg("manifest"), py::arg("config_json") = "",
        "Trains on the manifest's Train split; returns (model, [(iteration, loss)]).");

  m.def("evaluate",
        [](const PyModel& model, const std::filesystem::path& manifest, int crop) {
          const auto val = load_images(filter_split(read_manifest(manifest), Split::Val));
          py::gil_scoped_release release;
          const auto ev = evaluate_images(model.model, val.images, crop);
          return std::make_tuple(ev.accuracy, ev.loss, ev.n_images);
        },
        py::arg("model"), py::arg("manifest"), py::arg("crop"),
        "TTA accuracy, mean loss and image count on the Val split.");

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "camid");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return std::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs the command-line tool in-process; returns (exit code, stdout, stderr).");
}
