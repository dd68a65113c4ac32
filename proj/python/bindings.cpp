#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mmfusion/aggregation.hpp"
#include "mmfusion/checkpoint.hpp"
#include "mmfusion/cli.hpp"
#include "mmfusion/error.hpp"
#include "mmfusion/fusion.hpp"
#include "mmfusion/gradcheck.hpp"
#include "mmfusion/metrics.hpp"
#include "mmfusion/training.hpp"

namespace py = pybind11;
using namespace mmfusion;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() == 1) {
    Matrix m(1, static_cast<std::size_t>(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), m.data());
    return m;
  }
  if (a.ndim() != 2) throw ShapeError("expected a 1-D or 2-D array, got " + std::to_string(a.ndim()) + "-D");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data());
  return m;
}

Array to_array(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data(), m.data() + m.size(), out.mutable_data());
  return out;
}

MfbParams mfb_params(const Array& U, const Array& V, std::size_t k, std::size_t o) {
  MfbParams p{to_matrix(U), to_matrix(V), k, o};
  p.validate();
  return p;
}

py::dict record_dict(const VideoRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["visual"] = to_array(r.visual);
  d["audio"] = to_array(r.audio);
  d["labels"] = r.labels;
  return d;
}

py::dict dataset_dict(const Dataset& ds) {
  py::dict d;
  d["visual_dim"] = ds.header.visual_dim;
  d["audio_dim"] = ds.header.audio_dim;
  d["classes"] = ds.header.classes;
  py::list records;
  for (const auto& r : ds.records) records.append(record_dict(r));
  d["records"] = records;
  return d;
}

KeyValueConfig config_from_dict(const std::map<std::string, std::string>& values) {
  KeyValueConfig cfg;
  for (const auto& [k, v] : values) cfg.set(k, v);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multimodal factorized bilinear fusion for video classification";

  // Translators run newest first, so the base class goes in before its subclasses.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "mfb_core",
      [](const Array& l, const Array& a, const Array& U, const Array& V, std::size_t k, std::size_t o) {
        return to_array(mfb_core(to_matrix(l), to_matrix(a), mfb_params(U, V, k, o)));
      },
      py::arg("l"), py::arg("a"), py::arg("U"), py::arg("V"), py::arg("k"), py::arg("o"));

  m.def(
      "mfb_forward",
      [](const Array& l, const Array& a, const Array& U, const Array& V, std::size_t k,
         std::size_t o, double dropout, bool train, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(
            mfb_forward(to_matrix(l), to_matrix(a), mfb_params(U, V, k, o), dropout, rng, train));
      },
      py::arg("l"), py::arg("a"), py::arg("U"), py::arg("V"), py::arg("k"), py::arg("o"),
      py::arg("dropout") = 0.0, py::arg("train") = false, py::arg("seed") = 0);

  m.def(
      "bilinear_full",
      [](const Array& l, const Array& a, const std::vector<Array>& W) {
        std::vector<Matrix> ws;
        for (const auto& w : W) ws.push_back(to_matrix(w));
        return to_array(bilinear_full(to_matrix(l), to_matrix(a), ws));
      },
      py::arg("l"), py::arg("a"), py::arg("W"));

  m.def(
      "avgpool", [](const Array& frames) { return to_array(avgpool(to_matrix(frames))); },
      py::arg("frames"));

  m.def(
      "netvlad",
      [](const Array& frames, const Array& W_assign, const Array& b_assign, const Array& centers) {
        NetVladParams p{to_matrix(W_assign), to_matrix(b_assign), to_matrix(centers)};
        p.validate();
        return to_array(netvlad_forward(to_matrix(frames), p));
      },
      py::arg("frames"), py::arg("W_assign"), py::arg("b_assign"), py::arg("centers"));

  m.def(
      "netvlad_assign",
      [](const Array& frames, const Array& W_assign, const Array& b_assign) {
        NetVladParams p;
        p.W_assign = to_matrix(W_assign);
        p.b_assign = to_matrix(b_assign);
        p.centers = Matrix(p.W_assign.cols(), p.W_assign.rows());
        p.validate();
        return to_array(netvlad_assign(to_matrix(frames), p));
      },
      py::arg("frames"), py::arg("W_assign"), py::arg("b_assign"));

  m.def(
      "moe_forward",
      [](const Array& f, const Array& W_gate, const Array& W_expert, std::size_t mixtures) {
        MoeParams p;
        p.W_gate = to_matrix(W_gate);
        p.W_expert = to_matrix(W_expert);
        p.mixtures = mixtures;
        p.classes = mixtures == 0 ? 0 : p.W_gate.cols() / mixtures;
        p.validate();
        return to_array(moe_forward(to_matrix(f), p));
      },
      py::arg("f"), py::arg("W_gate"), py::arg("W_expert"), py::arg("mixtures"));

  m.def(
      "bce_loss",
      [](const Array& d, const Array& y) {
        const auto r = bce_loss(to_matrix(d), to_matrix(y));
        return py::make_tuple(r.loss, to_array(r.grad));
      },
      py::arg("predictions"), py::arg("labels"));

  m.def(
      "gap_at_k",
      [](const Array& p, const std::vector<std::vector<std::uint32_t>>& labels, std::size_t k) {
        return gap_at_k(to_matrix(p), labels, k);
      },
      py::arg("predictions"), py::arg("labels"), py::arg("k") = 20);

  m.def(
      "generate_synthetic",
      [](const std::map<std::string, std::string>& spec) {
        return dataset_dict(generate_synthetic(synthetic_spec_from_config(config_from_dict(spec))));
      },
      py::arg("spec") = std::map<std::string, std::string>{},
      "Synthetic dataset from synth.* keys (string values, as in spec files).");

  m.def(
      "write_synthetic",
      [](const std::string& path, const std::map<std::string, std::string>& spec) {
        write_dataset(path, generate_synthetic(synthetic_spec_from_config(config_from_dict(spec))));
      },
      py::arg("path"), py::arg("spec") = std::map<std::string, std::string>{});

  m.def(
      "read_dataset", [](const std::string& path) { return dataset_dict(read_dataset(path)); },
      py::arg("path"));

  m.def(
      "evaluate_checkpoint",
      [](const std::string& ckpt, const std::string& data) {
        const VideoModel model = load_checkpoint(ckpt);
        const auto r = evaluate(model, read_dataset(data).records);
        return py::make_tuple(r.gap, r.loss);
      },
      py::arg("checkpoint"), py::arg("data"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed, std::size_t seeds) {
        GradcheckOptions o;
        o.seed = seed;
        o.seeds = seeds;
        py::list out;
        for (const auto& r : run_gradcheck_suite(o)) {
          py::dict d;
          d["op"] = r.op;
          d["max_rel_error"] = r.max_rel_error;
          d["seeds"] = r.seeds;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("seeds") = 5);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (code, stdout, stderr).");
}
