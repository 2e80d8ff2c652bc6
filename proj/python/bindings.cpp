#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rtgformer/config.hpp"
#include "rtgformer/envdata/catch.hpp"
#include "rtgformer/envdata/dataset.hpp"
#include "rtgformer/eval.hpp"
#include "rtgformer/io/digest.hpp"
#include "rtgformer/train.hpp"
#include "rtgformer/trajectory.hpp"
#include "rtgformer/verify.hpp"

namespace py = pybind11;
using namespace rtgf;

namespace {

// JSON crosses the boundary as text and is parsed with the json module.
py::object from_json(const nlohmann::ordered_json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::array_t<std::uint8_t> image_array(const envdata::StateImage& img) {
  py::array_t<std::uint8_t> out({img.height, img.width});
  std::copy(img.cells.begin(), img.cells.end(), out.mutable_data());
  return out;
}

class PyCatch {
 public:
  PyCatch(int width, int height) : cfg_{width, height} { cfg_.validate(); }

  py::array_t<std::uint8_t> reset(std::uint64_t seed) {
    state_ = envdata::reset(cfg_, seed);
    started_ = true;
    return image_array(state_.image());
  }

  py::tuple step(int action) {
    if (!started_) throw std::runtime_error("Catch.step called before reset");
    const auto r = envdata::step(state_, action);
    return py::make_tuple(image_array(r.image), r.reward, r.done);
  }

  int expert_action() const { return envdata::expert_policy(state_); }
  bool done() const { return state_.done; }

 private:
  envdata::CatchConfig cfg_;
  envdata::CatchState state_{};
  bool started_ = false;
};

py::dict train_run(const std::string& config_text, const std::string& data_path, const std::string& checkpoint_path) {
  auto cfg = config::parse_run_config(config_text);
  auto data = envdata::read_dataset(data_path);
  cfg.train.dataset_path = data_path;
  cfg.train.checkpoint_path = checkpoint_path;
  auto info = train::describe_dataset(data, data_path, io::sha256_file(data_path));
  train::Trainer tr(cfg.train, std::move(data), std::move(info));
  {
    py::gil_scoped_release release;
    tr.run();
  }
  train::save_checkpoint(tr.checkpoint(), checkpoint_path);
  std::vector<double> loss;
  for (const auto& r : tr.metrics()) loss.push_back(r.loss);
  py::dict out;
  out["loss"] = loss;
  out["steps"] = tr.steps_done();
  out["encoder_sha256"] = io::sha256_hex(encoder::serialize_encoder(tr.encoder().params()));
  return out;
}

py::object evaluate(const std::string& checkpoint_path, int episodes, std::uint64_t seed, bool oracle,
                    const std::string& first_step) {
  const auto ckpt = train::load_checkpoint(checkpoint_path);
  eval::RolloutConfig rc;
  rc.n_episodes = episodes;
  rc.seed = seed;
  rc.first_step = eval::parse_first_step(first_step);
  rc.variant = ckpt.config.variant;
  eval::EvalReport rep;
  if (oracle) {
    const encoder::Encoder enc(ckpt.encoder);
    eval::OraclePredictor p(enc, rc.variant);
    rep = eval::rollout(p, enc, ckpt.dataset.env, rc, ckpt.dataset.random_return, ckpt.dataset.expert_return);
  } else {
    py::gil_scoped_release release;
    rep = eval::rollout(ckpt, ckpt.dataset.env, rc);
  }
  return from_json(eval::to_json(rep));
}

py::dict gradcheck(std::uint64_t seed) {
  verify::GradcheckReport rep;
  {
    py::gil_scoped_release release;
    rep = verify::run_gradcheck_suite(seed);
  }
  py::dict worst;
  for (const auto& c : rep.components) worst[py::str(c.name)] = c.worst;
  py::dict out;
  out["passed"] = rep.passed();
  out["threshold"] = rep.threshold;
  out["worst"] = worst;
  return out;
}

}  // namespace

PYBIND11_MODULE(_rtgformer, m) {
  m.doc() = "Return-conditioned transformer with a key/value memory, trained offline on Catch.";

  py::class_<PyCatch>(m, "Catch")
      .def(py::init<int, int>(), py::arg("width") = 7, py::arg("height") = 7)
      .def("reset", &PyCatch::reset, py::arg("seed"), "Start an episode; returns the grid as a uint8 array.")
      .def("step", &PyCatch::step, py::arg("action"), "Returns (grid, reward, done).")
      .def("expert_action", &PyCatch::expert_action)
      .def_property_readonly("done", &PyCatch::done);

  m.def(
      "returns_to_go",
      [](const std::vector<double>& rewards) { return trajectory::compute_rtg(rewards); }, py::arg("rewards"));
  m.def("normalized_score", &eval::normalized_score, py::arg("mean_return"), py::arg("random_return"),
        py::arg("expert_return"));

  m.def(
      "generate_dataset",
      [](const std::string& policy, std::size_t episodes, std::uint64_t seed, const std::string& path, int width,
         int height) {
        const envdata::CatchConfig env{width, height};
        const auto ds = envdata::generate_dataset(env, envdata::parse_policy(policy), episodes, seed);
        envdata::write_dataset(ds, path);
        py::dict out;
        out["mean_return"] = ds.mean_return;
        out["expert_return"] = ds.expert_return;
        out["random_return"] = ds.random_return;
        out["episodes"] = ds.episodes.size();
        return out;
      },
      py::arg("policy"), py::arg("episodes"), py::arg("seed"), py::arg("path"), py::arg("width") = 7,
      py::arg("height") = 7);

  m.def(
      "default_config", [] { return config::dump_run_config(config::RunConfig{}); },
      "The default run configuration as JSON text.");
  m.def("train", &train_run, py::arg("config"), py::arg("data"), py::arg("checkpoint"),
        "Train from a JSON run config; writes the checkpoint and returns the loss curve.");
  m.def("evaluate", &evaluate, py::arg("checkpoint"), py::arg("episodes") = 10, py::arg("seed") = 0,
        py::arg("oracle") = false, py::arg("first_step") = "consistency");
  m.def("gradcheck", &gradcheck, py::arg("seed") = 0);
}
