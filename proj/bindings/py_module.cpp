#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "multivae/data_io.hpp"
#include "multivae/evalharness.hpp"
#include "multivae/objectives.hpp"
#include "multivae/trainer.hpp"

namespace py = pybind11;
using namespace multivae;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  std::vector<Index> shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<Index>(a.shape(i)));
  Tensor t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (Index d : t.shape()) shape.push_back(static_cast<py::ssize_t>(d));
  py::array_t<double> a(shape);
  std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
  return a;
}

Trajectory trajectory_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& steps) {
  if (steps.ndim() != 2 || steps.shape(1) != 4)
    throw ShapeError("trajectory: expected a [T,4] array");
  Trajectory t;
  t.steps = tensor_from_array(steps);
  t.mask.assign(static_cast<std::size_t>(steps.shape(0)), true);
  return t;
}

scene::SceneSpec scene_from_json(const std::string& text) {
  // scenes cross the boundary as JSON to keep the binding surface small
  auto j = nlohmann::json::parse(text);
  scene::SceneSpec s;
  for (const auto& o : j.at("objects")) {
    scene::SceneObject obj;
    obj.kind = scene::object_kind_from_string(o.at("kind").get<std::string>());
    obj.x = o.at("x").get<double>();
    obj.y = o.at("y").get<double>();
    s.objects.push_back(obj);
  }
  s.target_index = j.at("target_index");
  s.robot_base_y = j.at("robot_base_y");
  s.task = scene::task_from_string(j.at("task"));
  s.variability = scene::variability_from_string(j.at("variability"));
  if (j.contains("drawer") && !j.at("drawer").is_null()) {
    scene::DrawerSpec d;
    d.x = j.at("drawer").at("x");
    d.y = j.at("drawer").at("y");
    d.open = j.at("drawer").at("open");
    s.drawer = d;
  }
  return s;
}

std::string scene_to_json(const scene::SceneSpec& s) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects)
    objs.push_back({{"kind", scene::to_string(o.kind)}, {"x", o.x}, {"y", o.y}});
  nlohmann::json j{{"objects", objs},
                   {"target_index", s.target_index},
                   {"robot_base_y", s.robot_base_y},
                   {"task", scene::to_string(s.task)},
                   {"variability", scene::to_string(s.variability)}};
  if (s.drawer)
    j["drawer"] = {{"x", s.drawer->x}, {"y", s.drawer->y}, {"open", s.drawer->open}};
  else
    j["drawer"] = nullptr;
  return j.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "multimodal VAE lab core: fusion math, synthetic tabletop data, training, evaluation";

  // ---- distributions ----
  m.def(
      "kl_to_standard_normal",
      [](const std::vector<double>& mean, const std::vector<double>& log_var) {
        return dist::kl_value(mean, log_var);
      },
      py::arg("mean"), py::arg("log_var"));
  m.def("reparam_sample", &dist::reparam_value, py::arg("mean"), py::arg("log_var"),
        py::arg("noise"));
  m.def("log_prob", &dist::log_prob_value, py::arg("mean"), py::arg("log_var"), py::arg("z"));

  // ---- fusion ----
  m.def(
      "product_of_experts",
      [](const std::vector<std::vector<double>>& means,
         const std::vector<std::vector<double>>& log_vars, bool include_prior) {
        ad::Graph g;
        std::vector<dist::Gaussian> experts;
        for (std::size_t i = 0; i < means.size(); ++i)
          experts.push_back(dist::make_constant_gaussian(g, means[i], log_vars[i]));
        dist::Gaussian p = fusion::product_of_experts(
            g, std::span<const dist::Gaussian>(experts), include_prior);
        auto vec = [](const Tensor& t) {
          return std::vector<double>(t.data(), t.data() + t.numel());
        };
        return py::make_tuple(vec(p.mean.value()), vec(p.log_var.value()));
      },
      py::arg("means"), py::arg("log_vars"), py::arg("include_prior") = false);
  m.def(
      "mopoe_component_count",
      [](int n_experts, bool include_empty) {
        return include_empty ? (1 << n_experts) : (1 << n_experts) - 1;
      },
      py::arg("n_experts"), py::arg("include_empty") = true);

  // ---- objectives ----
  m.def(
      "mse_recon",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& mu) {
        return objectives::mse_recon_value(tensor_from_array(x), tensor_from_array(mu));
      },
      py::arg("x"), py::arg("mu"));
  m.def(
      "sigma_vae_recon",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& mu,
         double sigma_min_sq) {
        return objectives::sigma_vae_recon_value(tensor_from_array(x), tensor_from_array(mu),
                                                 sigma_min_sq);
      },
      py::arg("x"), py::arg("mu"), py::arg("sigma_min_sq") = 1e-6);
  m.def("positional_encoding", [](Index length, Index width) {
    return array_from_tensor(codecs::positional_encoding(length, width));
  });

  // ---- scenegen ----
  m.def(
      "sample_scene",
      [](const std::string& config_json, std::uint64_t seed) {
        scene::DatasetConfig cfg = scene::DatasetConfig::from_json(config_json);
        Rng rng(seed);
        return scene_to_json(scene::sample_scene(cfg, rng));
      },
      py::arg("config_json"), py::arg("seed"));
  m.def("render_topview", [](const std::string& scene_json) {
    return array_from_tensor(scene::render_topview(scene_from_json(scene_json)).pixels);
  });
  m.def(
      "synthesize_trajectory",
      [](const std::string& scene_json, std::uint64_t seed) {
        Rng rng(seed);
        return array_from_tensor(
            scene::synthesize_trajectory(scene_from_json(scene_json), rng).steps);
      },
      py::arg("scene_json"), py::arg("seed"));
  m.def("make_instruction", [](const std::string& scene_json) {
    const Vocabulary vocab = default_vocabulary();
    return scene::make_instruction(scene_from_json(scene_json), vocab)
        .to_string(vocab);
  });
  m.def(
      "check_success",
      [](const std::string& scene_json,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& steps) {
        scene::SuccessReport r = scene::check_success(scene_from_json(scene_json),
                                                      trajectory_from_array(steps));
        py::dict d;
        d["success"] = r.success;
        d["final_distance_m"] = r.final_distance_m;
        d["displacement_m"] = py::make_tuple(r.displacement_m[0], r.displacement_m[1],
                                             r.displacement_m[2]);
        return d;
      },
      py::arg("scene_json"), py::arg("trajectory"));
  m.def(
      "generate_dataset",
      [](const std::string& config_json, Index n, std::uint64_t seed, const std::string& out) {
        scene::DatasetConfig cfg = scene::DatasetConfig::from_json(config_json);
        data::Manifest mf = data::generate_dataset(cfg, n, seed, out);
        return mf.to_json();
      },
      py::arg("config_json"), py::arg("n"), py::arg("seed"), py::arg("out_dir"));
  m.def("default_vocabulary", []() { return default_vocabulary().words; });

  // ---- training / evaluation ----
  m.def(
      "train",
      [](const std::string& model_kind, const std::string& recon, const std::string& data_dir,
         Index epochs, Index batch_size, double step_size, Index d_z, std::uint64_t seed,
         const std::string& out_dir) {
        data::Dataset ds = data::load_dataset(data_dir);
        model::ModelConfig cfg;
        cfg.model_kind = model::model_kind_from_string(model_kind);
        const model::ReconKind rk = model::recon_kind_from_string(recon);
        cfg.recon_image = rk;
        cfg.recon_traj = rk;
        cfg.codec.d_z = d_z;
        cfg.codec.t_max = ds.manifest.t_max;
        cfg.codec.l_max = ds.manifest.l_max;
        cfg.vocabulary = ds.manifest.vocabulary;
        model::MultimodalVAE m(cfg, derive_seed(seed, "model-init"));
        trainer::AdamOptimizer adam(step_size);
        trainer::TrainOptions opt;
        opt.epochs = epochs;
        opt.batch_size = batch_size;
        opt.step_size = step_size;
        opt.seed = seed;
        opt.out_dir = out_dir;
        trainer::TrainResult r = trainer::train(m, adam, ds, opt);
        py::list history;
        for (const auto& e : r.history) history.append(py::module_::import("json").attr("loads")(
            e.to_json_line()));
        return py::make_tuple(r.checkpoint_path.string(), history);
      },
      py::arg("model"), py::arg("recon"), py::arg("data_dir"), py::arg("epochs") = 200,
      py::arg("batch_size") = 32, py::arg("step_size") = 1e-3, py::arg("d_z") = 12,
      py::arg("seed") = 0, py::arg("out_dir") = "run");
  m.def(
      "infer_trajectory",
      [](const std::string& ckpt_path,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& image,
         const std::vector<std::string>& instruction_words, Index length) {
        trainer::LoadedCheckpoint lc = trainer::load_checkpoint(ckpt_path);
        ImageTensor img{tensor_from_array(image)};
        const Vocabulary vocab = lc.config.vocab();
        TokenSequence seq;
        for (const auto& w : instruction_words) seq.tokens.push_back(vocab.id(w));
        while (static_cast<Index>(seq.tokens.size()) < lc.config.codec.l_max)
          seq.tokens.push_back(vocab.pad_id());
        return array_from_tensor(
            eval::infer_trajectory(*lc.model, img, seq, length).steps);
      },
      py::arg("checkpoint"), py::arg("image"), py::arg("instruction"), py::arg("length"));
  m.def(
      "evaluate_success",
      [](const std::string& ckpt_path, const std::string& config_json, Index trials,
         std::uint64_t seed) {
        trainer::LoadedCheckpoint lc = trainer::load_checkpoint(ckpt_path);
        scene::DatasetConfig cfg = scene::DatasetConfig::from_json(config_json);
        eval::EvalResult r =
            eval::evaluate_success(eval::model_policy(*lc.model), cfg, trials, seed);
        return r.accuracy;
      },
      py::arg("checkpoint"), py::arg("config_json"), py::arg("trials"), py::arg("seed"));

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<VocabularyError>(m, "VocabularyError", PyExc_ValueError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);
}
