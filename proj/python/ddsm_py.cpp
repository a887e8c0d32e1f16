#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ddsm/block.hpp"
#include "ddsm/boundary.hpp"
#include "ddsm/commands.hpp"
#include "ddsm/cost.hpp"
#include "ddsm/oracle.hpp"
#include "ddsm/sampler.hpp"
#include "ddsm/spatial.hpp"

namespace py = pybind11;
using namespace ddsm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<int, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

LabelMap to_labels(const Labels& a) {
  if (a.ndim() != 2) throw ShapeError("label map: expected a 2-D array");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
          std::vector<int>(a.data(), a.data() + a.size())};
}

py::dict params_to_dict(const ParamList& list) {
  py::dict d;
  for (const auto& nt : list) d[py::str(nt.name)] = to_array(*nt.tensor);
  return d;
}

// A DDSM block with its parameters and the context of the last forward pass.
class Block {
 public:
  Block(const DdsmConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    params_ = init_ddsm(rng, cfg);
  }

  Array forward(const Array& x_l, const Array& x_h) { return to_array(ddsm_forward(to_tensor(x_l), to_tensor(x_h), params_, &ctx_)); }

  py::dict backward(const Array& upstream) {
    DdsmGrads g = ddsm_backward(to_tensor(upstream), ctx_, params_);
    py::dict d = params_to_dict(param_list(g.params));
    d["x_l"] = to_array(g.x_l);
    d["x_h"] = to_array(g.x_h);
    return d;
  }

  py::dict get_params() { return params_to_dict(param_list(params_)); }

  void set_param(const std::string& name, const Array& value) {
    for (auto& nt : param_list(params_)) {
      if (nt.name != name) continue;
      Tensor t = to_tensor(value);
      expect_shape(t, nt.tensor->shape(), name.c_str());
      *nt.tensor = std::move(t);
      ctx_ = DdsmContext{};
      return;
    }
    throw py::key_error(name);
  }

 private:
  DdsmParams params_;
  DdsmContext ctx_;
};

}  // namespace

PYBIND11_MODULE(_ddsm, m) {
  m.doc() = "Dynamic dual sampling module: sampler, attention, block, cost model and boundary F-score";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("reduced_width", &reduced_width, py::arg("low_channels"), py::arg("high_channels"));

  m.def(
      "grid", [](std::size_t k) {
        const GridSpec g(k);
        std::vector<std::pair<long, long>> out;
        for (std::size_t n = 0; n < g.size(); ++n) out.emplace_back(g[n].dy, g[n].dx);
        return out;
      },
      py::arg("k"), "Regular k x k displacements (dy, dx) in sample order.");

  m.def(
      "sample", [](const Array& input, const Array& offsets, const Array& modulations, std::size_t k) {
        return to_array(sample_forward(to_tensor(input), to_tensor(offsets), to_tensor(modulations), GridSpec(k)));
      },
      py::arg("input"), py::arg("offsets"), py::arg("modulations"), py::arg("k"),
      "Modulated bilinear sampling: (C,H,W) -> (C,H,W,N).");

  m.def(
      "spatial_attention",
      [](const Array& q, const Array& key_src, const Array& val_src, const Array& offsets, const Array& modulations,
         std::size_t k) {
        return to_array(spatial_attention(to_tensor(q), to_tensor(key_src), to_tensor(val_src), to_tensor(offsets),
                                          to_tensor(modulations), GridSpec(k)));
      },
      py::arg("q"), py::arg("key_src"), py::arg("val_src"), py::arg("offsets"), py::arg("modulations"), py::arg("k"));

  m.def(
      "dense_nonlocal",
      [](const Array& q, const Array& k, const Array& v) {
        return to_array(oracle::dense_nonlocal(to_tensor(q), to_tensor(k), to_tensor(v)));
      },
      py::arg("q"), py::arg("k"), py::arg("v"), "Reference attention over every position.");

  py::class_<DdsmConfig>(m, "BlockConfig")
      .def(py::init<>())
      .def_readwrite("low_channels", &DdsmConfig::low_channels)
      .def_readwrite("high_channels", &DdsmConfig::high_channels)
      .def_readwrite("width", &DdsmConfig::width)
      .def_readwrite("height", &DdsmConfig::height)
      .def_readwrite("cols", &DdsmConfig::cols)
      .def_readwrite("high_height", &DdsmConfig::high_height)
      .def_readwrite("high_cols", &DdsmConfig::high_cols)
      .def_readwrite("k", &DdsmConfig::k)
      .def_readwrite("k_c", &DdsmConfig::k_c)
      .def_readwrite("a", &DdsmConfig::a)
      .def_readwrite("d", &DdsmConfig::d);

  py::class_<Block>(m, "Block")
      .def(py::init<const DdsmConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed") = 7)
      .def("forward", &Block::forward, py::arg("x_l"), py::arg("x_h"))
      .def("backward", &Block::backward, py::arg("upstream"),
           "Gradients of <upstream, output> for the last forward pass, keyed by parameter name plus x_l and x_h.")
      .def("params", &Block::get_params)
      .def("set_param", &Block::set_param, py::arg("name"), py::arg("value"));

  m.def(
      "boundary_f_score",
      [](const Labels& pred, const Labels& gt, std::vector<double> thresholds) {
        const BoundaryEvalResult r = evaluate_boundaries(to_labels(pred), to_labels(gt), thresholds);
        std::vector<py::dict> out;
        for (const auto& s : r.per_threshold) {
          py::dict d;
          d["threshold"] = s.threshold_px;
          d["precision"] = s.precision;
          d["recall"] = s.recall;
          d["f_score"] = s.f_score;
          out.push_back(d);
        }
        return out;
      },
      py::arg("pred"), py::arg("gt"), py::arg("thresholds") = std::vector<double>{3, 5, 9, 12});

  m.def(
      "affinity_ratio",
      [](std::uint64_t samples, std::uint64_t height, std::uint64_t width) {
        CostConfig c;
        c.samples = samples;
        c.height = height;
        c.cols = width;
        const Ratio r = affinity_ratio(c);
        return std::make_pair(r.num, r.den);
      },
      py::arg("samples"), py::arg("height"), py::arg("width"), "Reduced fraction N / (H W).");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "ddsm");
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run a command-line invocation in process; returns (exit_code, stdout, stderr).");
}
