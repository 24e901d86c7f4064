#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hvae/evaluate.hpp"
#include "hvae/image_io.hpp"
#include "hvae/matexp.hpp"
#include "hvae/metrics.hpp"
#include "hvae/symplectic.hpp"
#include "hvae/synthworld.hpp"
#include "hvae/trainer.hpp"

namespace py = pybind11;
using namespace hvae;
using nn::Tensor;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> to_tensor(const FloatArray& a) {
  nn::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<float>(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

KvDoc to_doc(const std::map<std::string, std::string>& kv) {
  KvDoc doc;
  for (const auto& [k, v] : kv) doc.set(k, v);
  return doc;
}

std::map<std::string, std::string> from_doc(const KvDoc& doc) { return doc.entries(); }

py::dict residual_dict(const symplectic::OperatorResiduals& r) {
  py::dict d;
  d["algebra"] = r.algebra;
  d["trace"] = r.trace;
  d["group"] = r.group;
  d["volume"] = r.volume;
  d["reversibility"] = r.reversibility;
  return d;
}

py::dict scores_dict(const metrics::SequenceScores& s) {
  py::dict d;
  d["mse"] = s.mean.mse;
  d["psnr"] = s.mean.psnr;
  d["ssim"] = s.mean.ssim;
  py::list per;
  for (const auto& f : s.per_time) {
    py::dict x;
    x["mse"] = f.mse;
    x["psnr"] = f.psnr;
    x["ssim"] = f.ssim;
    per.append(x);
  }
  d["per_frame"] = per;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hvae, m) {
  m.doc() = "Hamiltonian sequence VAE: operators, synthetic data, model and metrics";

  // translators run newest first, so the base class goes in first
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_ValueError);

  // operators
  m.def("expm", [](const Eigen::MatrixXd& a) { return matexp::expm(a); }, py::arg("a"));
  m.def("expm_frechet", [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& e) { return matexp::expm_frechet(a, e); },
        py::arg("a"), py::arg("e"));
  m.def("symplectic_form", [](int d) { return symplectic::symplectic_form(d); }, py::arg("d"));
  m.def(
      "assemble_hamiltonian",
      [](const std::vector<double>& raw, int d, const std::string& flavor) {
        const symplectic::HamiltonianSpec spec(d, symplectic::flavor_from_string(flavor));
        return Eigen::MatrixXd(symplectic::assemble_hamiltonian({spec, raw}).values());
      },
      py::arg("raw"), py::arg("d"), py::arg("flavor") = "full");
  m.def(
      "parameter_count",
      [](int d, const std::string& flavor) {
        return symplectic::HamiltonianSpec(d, symplectic::flavor_from_string(flavor)).parameter_count();
      },
      py::arg("d"), py::arg("flavor") = "full");
  m.def(
      "operator_residuals",
      [](const Eigen::MatrixXd& h, double t) {
        if (h.rows() != h.cols() || h.rows() % 2) throw ShapeError("operator_residuals: expected a 2d x 2d matrix");
        const symplectic::HamiltonianMatrix hm(h, {static_cast<int>(h.rows() / 2)});
        return residual_dict(symplectic::residuals(hm, t));
      },
      py::arg("h"), py::arg("t") = 1.0);

  // synthetic world and SEQD files
  py::class_<synth::Dataset>(m, "Dataset")
      .def_property_readonly("images", [](const synth::Dataset& d) { return to_array(d.all().images); })
      .def_property_readonly("labels", [](const synth::Dataset& d) { return d.all().labels; })
      .def_property_readonly("identities", [](const synth::Dataset& d) { return d.all().identities; })
      .def_property_readonly("phases", [](const synth::Dataset& d) { return d.all().phases; })
      .def_readonly("T", &synth::Dataset::T)
      .def_readonly("K", &synth::Dataset::K)
      .def("__len__", &synth::Dataset::size)
      .def("save", [](const synth::Dataset& d, const std::string& path) { synth::save_dataset(path, d); })
      .def("to_bytes", [](const synth::Dataset& d) { return py::bytes(synth::encode_dataset(d)); })
      .def("__eq__", [](const synth::Dataset& a, const synth::Dataset& b) { return a == b; });
  m.def("load_dataset", &synth::load_dataset, py::arg("path"));
  m.def(
      "dataset_from_bytes", [](const py::bytes& b) { return synth::decode_dataset(std::string(b)); }, py::arg("data"));
  m.def(
      "make_datasets",
      [](int n_train, int n_eval, std::uint64_t seed, int T, int K, int res) {
        auto pair = synth::make_datasets(n_train, n_eval, seed, {T, K, res});
        return py::make_tuple(std::move(pair.train), std::move(pair.eval));
      },
      py::arg("n_train") = 360, py::arg("n_eval") = 72, py::arg("seed") = 0, py::arg("T") = 8, py::arg("K") = 3,
      py::arg("res") = 16);
  m.def(
      "render_sequence",
      [](int identity, int action, int offset, int length, int T, int res) {
        return to_array(synth::render_sequence(synth::ContentFactors::from_identity(identity),
                                               static_cast<synth::ActionKind>(action), offset, length, {T, 3, res}));
      },
      py::arg("identity"), py::arg("action"), py::arg("offset") = 0, py::arg("length") = 8, py::arg("T") = 8,
      py::arg("res") = 16);

  // model
  py::class_<vae::Model>(m, "Model")
      .def_static(
          "init",
          [](const std::map<std::string, std::string>& cfg, std::uint64_t seed) {
            return vae::Model::init(ModelConfig::read(to_doc(cfg)), seed);
          },
          py::arg("config") = std::map<std::string, std::string>{}, py::arg("seed") = 0)
      .def_static("load", &train::load_model, py::arg("path"))
      .def("save", [](const vae::Model& md, const std::string& path) { train::save_model(path, md); })
      .def_property_readonly("config",
                             [](const vae::Model& md) {
                               KvDoc doc;
                               md.config().write(doc);
                               return from_doc(doc);
                             })
      .def("hamiltonian", [](const vae::Model& md, int k) { return Eigen::MatrixXd(md.hamiltonian(k).values()); })
      .def(
          "reconstruct",
          [](const vae::Model& md, const FloatArray& x, const std::vector<int>& actions, int t_ref) {
            return to_array(md.reconstruct(to_tensor(x), actions, t_ref));
          },
          py::arg("images"), py::arg("actions"), py::arg("t_ref") = 4)
      .def(
          "extrapolate",
          [](const vae::Model& md, const FloatArray& x, const std::vector<int>& actions, int t_ref, int length) {
            return to_array(md.extrapolate(to_tensor(x), actions, t_ref, length));
          },
          py::arg("images"), py::arg("actions"), py::arg("t_ref") = 1, py::arg("length") = 16)
      .def(
          "generate",
          [](const vae::Model& md, int k, int n, int length, std::uint64_t seed) {
            return to_array(md.generate(k, n, length, seed));
          },
          py::arg("action"), py::arg("n") = 1, py::arg("length") = 8, py::arg("seed") = 0)
      .def(
          "image_to_sequence",
          [](const vae::Model& md, const FloatArray& frames, int k, int length) {
            return to_array(md.image_to_sequence(to_tensor(frames), k, length));
          },
          py::arg("frames"), py::arg("action"), py::arg("length") = 16)
      .def(
          "motion_swap",
          [](const vae::Model& md, const FloatArray& x1, const std::vector<int>& u1, const FloatArray& x2,
             const std::vector<int>& u2, int t_ref) {
            auto s = md.motion_swap(to_tensor(x1), u1, to_tensor(x2), u2, t_ref);
            return py::make_tuple(to_array(s.first_to_second), to_array(s.second_to_first));
          },
          py::arg("x1"), py::arg("u1"), py::arg("x2"), py::arg("u2"), py::arg("t_ref") = 4)
      .def("content_means", [](const vae::Model& md, const FloatArray& x) { return to_array(md.content_means(to_tensor(x))); });

  // training and evaluation
  m.def(
      "train",
      [](const std::string& data, const std::string& out_dir, const std::map<std::string, std::string>& cfg,
         const std::string& resume) {
        train::TrainJob job;
        job.config = TrainConfig::read(to_doc(cfg));
        job.data_path = data;
        job.out_dir = out_dir;
        job.resume_path = resume;
        py::gil_scoped_release nogil;
        return train::run_job(job).step;
      },
      py::arg("data"), py::arg("out_dir"), py::arg("config") = std::map<std::string, std::string>{},
      py::arg("resume") = "");
  m.def(
      "reconstruction_scores",
      [](const vae::Model& md, const synth::Dataset& ds) { return scores_dict(eval::reconstruction_scores(md, ds)); },
      py::arg("model"), py::arg("dataset"));
  m.def(
      "rollout_scores",
      [](const vae::Model& md, const synth::Dataset& ds, int length) {
        return scores_dict(eval::rollout_scores(md, ds, length));
      },
      py::arg("model"), py::arg("dataset"), py::arg("length") = 16);
  m.def(
      "swap_fidelity",
      [](const vae::Model& md, const synth::Dataset& ds, int n_pairs, std::uint64_t seed) {
        const auto r = eval::eval_swap_fidelity(md, ds, n_pairs, seed);
        py::dict d;
        d["mean"] = r.mean;
        d["p50"] = r.p50;
        d["p90"] = r.p90;
        d["max"] = r.max;
        d["reconstruction_mse"] = r.reconstruction_mse;
        d["n_pairs"] = r.pairs.size();
        return d;
      },
      py::arg("model"), py::arg("dataset"), py::arg("n_pairs") = 100, py::arg("seed") = 0);

  // metrics and images
  m.def("mse", [](const FloatArray& a, const FloatArray& b) { return metrics::mse(to_tensor(a), to_tensor(b)); });
  m.def("psnr", [](const FloatArray& a, const FloatArray& b) { return metrics::psnr(to_tensor(a), to_tensor(b)); });
  m.def("ssim", [](const FloatArray& a, const FloatArray& b) { return metrics::ssim(to_tensor(a), to_tensor(b)); });
  m.def("quantize", &io::quantize);
  m.def(
      "export_grid", [](const FloatArray& seqs, const std::string& path) { io::export_grid(to_tensor(seqs), path); },
      py::arg("sequences"), py::arg("path"));
  m.def(
      "read_ppm",
      [](const std::string& path) {
        const auto img = io::read_ppm(path);
        py::array_t<std::uint8_t> out({img.height, img.width, 3});
        std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
        return out;
      },
      py::arg("path"));
}
