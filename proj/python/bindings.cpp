#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "meunet/cascade.hpp"
#include "meunet/checkpoint.hpp"
#include "meunet/ledger.hpp"
#include "meunet/loss.hpp"
#include "meunet/phantom.hpp"
#include "meunet/pipeline.hpp"

namespace py = pybind11;
using namespace meunet;
using json = nlohmann::json;

namespace {

template <class T>
using CArray = py::array_t<T, py::array::c_style | py::array::forcecast>;

Shape shape_of(const py::array& a) { return Shape(a.shape(), a.shape() + a.ndim()); }

template <class T, class Src>
py::array_t<T> to_numpy(const Shape& shape, const Src& values) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<T> out(dims);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

Tensor to_tensor(const CArray<double>& a, bool requires_grad = false) {
  return Tensor(shape_of(a), std::vector<double>(a.data(), a.data() + a.size()), requires_grad);
}

LabelTensor to_labels(const CArray<std::uint8_t>& a) {
  return LabelTensor(shape_of(a), std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

template <class T>
Grid<T> to_grid(const CArray<T>& a) {
  if (a.ndim() != 3 && a.ndim() != 4) throw ShapeError("volume arrays are [D,H,W] or [C,D,H,W]");
  const std::size_t off = a.ndim() == 4 ? 1 : 0;
  Grid<T> g({static_cast<std::size_t>(a.shape(off)), static_cast<std::size_t>(a.shape(off + 1)),
             static_cast<std::size_t>(a.shape(off + 2))},
            off ? static_cast<std::size_t>(a.shape(0)) : 1);
  std::copy(a.data(), a.data() + a.size(), g.values.begin());
  return g;
}

template <class T>
py::array_t<T> from_grid(const Grid<T>& g) {
  Shape s{g.dims[0], g.dims[1], g.dims[2]};
  if (g.channels != 1) s.insert(s.begin(), g.channels);
  return to_numpy<T>(s, g.values);
}

UNetConfig net_config(const std::string& spec) {
  if (spec == "desk") return UNetConfig::desk();
  if (spec == "desk_meunet") return UNetConfig::desk_meunet();
  if (spec == "paper") return UNetConfig::paper();
  if (spec == "paper_meunet") return UNetConfig::paper_meunet();
  try {
    return config_from_json(json::parse(spec));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
}

struct PyNet {
  UNet net;

  py::array_t<double> forward(const CArray<double>& x, bool train) {
    net.set_mode(train ? Mode::train : Mode::eval);
    NoGradGuard off;
    const Tensor y = net.forward_standard(to_tensor(x));
    return to_numpy<double>(y.shape(), y.values());
  }

  py::tuple forward_dual(const CArray<double>& standard, const CArray<double>& expanded) {
    net.set_mode(Mode::train);
    NoGradGuard off;
    const auto d = net.forward_meunet_dual(to_tensor(standard), to_tensor(expanded));
    return py::make_tuple(to_numpy<double>(d.standard.shape(), d.standard.values()),
                          to_numpy<double>(d.expanded.shape(), d.expanded.values()));
  }

  py::tuple predict(const CArray<float>& volume, std::size_t P, std::size_t stride) {
    const auto fused = fuse_predict(standard_predictor(net), to_grid(volume), P, stride);
    return py::make_tuple(from_grid(fused.probs), from_grid(fused.labels));
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "meU-net cascade toolkit";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def(
      "phantom",
      [](std::uint64_t seed, std::array<std::size_t, 3> dims, double noise) {
        PhantomSpec spec;
        spec.seed = seed;
        spec.dims = dims;
        spec.noise = noise;
        const auto p = phantom_generate(spec);
        return py::make_tuple(from_grid(p.image), from_grid(p.labels));
      },
      py::arg("seed") = 42, py::arg("dims") = std::array<std::size_t, 3>{64, 64, 64}, py::arg("noise") = 0.25);

  m.def("class_weights", [](const std::vector<std::uint64_t>& counts) { return class_weights(counts).values; });

  m.def(
      "combined_loss",
      [](const CArray<double>& logits, const CArray<std::uint8_t>& labels, const std::vector<double>& weights,
         double epsilon) {
        const Tensor x = to_tensor(logits, true);
        const Tensor loss = combined_loss(x, to_labels(labels), ClassWeights{weights}, epsilon);
        loss.backward();
        return py::make_tuple(loss.item(), to_numpy<double>(x.shape(), x.grad()));
      },
      py::arg("logits"), py::arg("labels"), py::arg("weights"), py::arg("epsilon") = kDiceEpsilon,
      "Loss value and its gradient with respect to the logits.");

  m.def(
      "soft_dice_loss",
      [](const CArray<double>& probs, const CArray<double>& one_hot, double epsilon) {
        return soft_dice_loss(to_tensor(probs), to_tensor(one_hot), epsilon).item();
      },
      py::arg("probs"), py::arg("one_hot"), py::arg("epsilon") = kDiceEpsilon);

  m.def("weighted_cross_entropy", [](const CArray<double>& probs, const CArray<std::uint8_t>& labels,
                                     const std::vector<double>& weights) {
    return weighted_cross_entropy(to_tensor(probs), to_labels(labels), ClassWeights{weights}).item();
  });

  m.def("expanded_edge", &expanded_edge, py::arg("P"), py::arg("k"), py::arg("levels"));
  m.def("split_cases", [](std::size_t n, std::uint64_t seed) {
    const auto s = split_cases(n, seed);
    return py::make_tuple(s.train, s.val, s.test);
  });

  m.def("ensemble", [](const CArray<double>& a, const CArray<double>& b) {
    return from_grid(ensemble(to_grid(a), to_grid(b)));
  });
  m.def("dice", [](const CArray<std::uint8_t>& pred, const CArray<std::uint8_t>& truth, std::uint8_t c) {
    return dice_metric(to_grid(pred), to_grid(truth), c);
  });

  m.def("read_volume", [](const std::filesystem::path& p) -> py::object {
    if (volume_dtype(p) == "u8") return from_grid(read_labels(p));
    return from_grid(read_volume(p));
  });
  m.def("write_volume", [](const std::filesystem::path& p, const py::array& a) {
    if (a.dtype().is(py::dtype::of<std::uint8_t>()))
      write_volume(p, to_grid<std::uint8_t>(a.cast<CArray<std::uint8_t>>()));
    else
      write_volume(p, to_grid<float>(a.cast<CArray<float>>()));
  });

  m.def("ledger_estimate", [](const std::string& config) {
    return estimate(LedgerConfig::from_json(json::parse(config))).to_json().dump();
  });
  m.def("ledger_compare", [](const std::string& a, const std::string& b) {
    return compare(estimate(LedgerConfig::from_json(json::parse(a))), estimate(LedgerConfig::from_json(json::parse(b))))
        .to_json()
        .dump();
  });

  m.def("run_cascade", [](const std::string& config, const std::filesystem::path& out) {
    const RunConfig cfg = RunConfig::from_json(json::parse(config));
    const auto cases = load_cases(cfg);
    py::gil_scoped_release release;
    const auto s = run_cascade(cfg, cases, out);
    return json{{"metrics_csv", s.metrics_csv}, {"mean_dice", s.mean_dice}, {"artifacts", s.artifacts}}.dump();
  });

  py::class_<PyNet>(m, "Net")
      .def(py::init([](const std::string& config, std::uint64_t seed) { return PyNet{UNet::build(net_config(config), seed)}; }),
           py::arg("config") = "desk", py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& dir) { return PyNet{load_checkpoint(dir)}; })
      .def("save", [](PyNet& self, const std::filesystem::path& dir) { save_checkpoint(dir, self.net); })
      .def_property_readonly("config", [](const PyNet& self) { return config_to_json(self.net.config()).dump(); })
      .def_property_readonly("parameter_count", [](const PyNet& self) { return self.net.parameter_count(); })
      .def("forward", &PyNet::forward, py::arg("x"), py::arg("train") = false)
      .def("forward_dual", &PyNet::forward_dual)
      .def("predict", &PyNet::predict, py::arg("volume"), py::arg("P"), py::arg("stride"));
}
