// Python bindings for the cstalab core: configs, the backbone model, the
// synthetic corpus, and the experiment harness. Clips cross the boundary as
// [frames, height, width] float64 arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "csta/analyzer.hpp"
#include "csta/checkpoint.hpp"
#include "csta/config.hpp"
#include "csta/datagen.hpp"
#include "csta/harness.hpp"
#include "csta/model.hpp"
#include "csta/tensor.hpp"

namespace py = pybind11;
using namespace csta;

namespace {

using ClipArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

VideoClip clip_from_array(const ClipArray& arr) {
  if (arr.ndim() != 3) throw std::invalid_argument("clip must be [frames, height, width]");
  VideoClip clip;
  clip.frames = arr.shape(0);
  clip.height = arr.shape(1);
  clip.width = arr.shape(2);
  clip.pixels.assign(arr.data(), arr.data() + arr.size());
  return clip;
}

py::array_t<double> clip_to_array(const VideoClip& clip) {
  py::array_t<double> out({clip.frames, clip.height, clip.width});
  std::copy(clip.pixels.begin(), clip.pixels.end(), out.mutable_data());
  return out;
}

std::vector<double> forward_logits(const Model& m, const ClipArray& arr) {
  NoGradGuard ng;
  return m.forward(clip_from_array(arr)).all_logits.values();
}

std::vector<double> forward_feature(const Model& m, const ClipArray& arr) {
  NoGradGuard ng;
  return m.forward(clip_from_array(arr)).feat.values();
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "spatial-temporal adapter laboratory core";

  py::class_<ModelConfig>(mod, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("blocks", &ModelConfig::blocks)
      .def_readwrite("frames", &ModelConfig::frames)
      .def_readwrite("frame_size", &ModelConfig::frame_size)
      .def_readwrite("patch_size", &ModelConfig::patch_size)
      .def_readwrite("mlp_ratio", &ModelConfig::mlp_ratio)
      .def_readwrite("bottleneck", &ModelConfig::bottleneck)
      .def_readwrite("concat_axis", &ModelConfig::concat_axis)
      .def_readwrite("mlp_adapter", &ModelConfig::mlp_adapter)
      .def("tokens", &ModelConfig::tokens)
      .def("validate", &ModelConfig::validate);

  py::class_<CorpusConfig>(mod, "CorpusConfig")
      .def(py::init<>())
      .def_readwrite("frames", &CorpusConfig::frames)
      .def_readwrite("frame_size", &CorpusConfig::frame_size)
      .def_readwrite("classes", &CorpusConfig::classes)
      .def_readwrite("train_per_class", &CorpusConfig::train_per_class)
      .def_readwrite("test_per_class", &CorpusConfig::test_per_class)
      .def_readwrite("seed", &CorpusConfig::seed);

  py::class_<TrainConfig>(mod, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("finetune_epochs", &TrainConfig::finetune_epochs)
      .def_readwrite("exemplars_per_class", &TrainConfig::exemplars_per_class)
      .def_readwrite("lr_task0", &TrainConfig::lr_task0)
      .def_readwrite("lr_adapters", &TrainConfig::lr_adapters)
      .def_readwrite("lr_finetune", &TrainConfig::lr_finetune)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lambda1", &TrainConfig::lambda1)
      .def_readwrite("lambda2", &TrainConfig::lambda2)
      .def_readwrite("mu1", &TrainConfig::mu1)
      .def_readwrite("mu2", &TrainConfig::mu2)
      .def_readwrite("mu3", &TrainConfig::mu3)
      .def_readwrite("k", &TrainConfig::k)
      .def_readwrite("k1", &TrainConfig::k1)
      .def_readwrite("cache_capacity", &TrainConfig::cache_capacity)
      .def_readwrite("probe_batch", &TrainConfig::probe_batch)
      .def_readwrite("probe_cadence", &TrainConfig::probe_cadence)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("sep_ada", &TrainConfig::sep_ada)
      .def_readwrite("relation_recovery", &TrainConfig::relation_recovery)
      .def_readwrite("compensation", &TrainConfig::compensation)
      .def_readwrite("mlp_adapter", &TrainConfig::mlp_adapter)
      .def_readwrite("finetune", &TrainConfig::finetune)
      .def_readwrite("normalize_sims", &TrainConfig::normalize_sims)
      .def_readwrite("kl_reversed", &TrainConfig::kl_reversed)
      .def("validate", &TrainConfig::validate);

  py::class_<ExperimentConfig>(mod, "ExperimentConfig")
      .def(py::init<>())
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_readwrite("out_dir", &ExperimentConfig::out_dir)
      .def_readwrite("model", &ExperimentConfig::model)
      .def_readwrite("corpus", &ExperimentConfig::corpus)
      .def_readwrite("corpus_dir", &ExperimentConfig::corpus_dir)
      .def_readwrite("tasks", &ExperimentConfig::tasks)
      .def_readwrite("split", &ExperimentConfig::split)
      .def_readwrite("train", &ExperimentConfig::train)
      .def("validate", &ExperimentConfig::validate);

  py::class_<Model>(mod, "Model")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config"), py::arg("seed"))
      .def("tasks", &Model::tasks)
      .def("expansions", &Model::expansions)
      .def("classes_total", &Model::classes_total)
      .def("count_all", &Model::count_all)
      .def("count_trainable", &Model::count_trainable)
      .def("param_names", &Model::param_names)
      .def("trainable_names", &Model::trainable_names)
      .def("param_values",
           [](const Model& m, const std::string& name) { return m.param(name).values(); })
      .def("add_task_head", &Model::add_task_head)
      .def("set_task0_trainable", &Model::set_task0_trainable)
      .def("set_baseline_trainable", &Model::set_baseline_trainable)
      .def("set_heads_only_trainable", &Model::set_heads_only_trainable)
      .def("expand_for_task", &Model::expand_for_task)
      .def("complete_task", &Model::complete_task)
      .def("expansion_param_names", &Model::expansion_param_names)
      .def("forward_logits", &forward_logits, py::arg("clip"),
           "concatenated head logits of one clip, inference mode")
      .def("forward_feature", &forward_feature, py::arg("clip"),
           "pooled classification feature of one clip, inference mode");

  py::class_<Corpus>(mod, "Corpus")
      .def_property_readonly("config", [](const Corpus& c) { return c.config; })
      .def_property_readonly("size", [](const Corpus& c) { return c.samples.size(); })
      .def("class_of",
           [](const Corpus& c, std::size_t pos) { return c.samples.at(pos).class_id; })
      .def("is_test", [](const Corpus& c, std::size_t pos) { return c.samples.at(pos).test; })
      .def("train_indices", &Corpus::train_indices)
      .def("test_indices", &Corpus::test_indices)
      .def("clip", [](const Corpus& c, std::size_t pos) {
        return clip_to_array(c.render(c.samples.at(pos)));
      });

  py::class_<TaskStream>(mod, "TaskStream")
      .def_property_readonly("style", [](const TaskStream& s) { return s.style; })
      .def_property_readonly("tasks", [](const TaskStream& s) {
        std::vector<std::vector<int>> out;
        for (const Task& t : s.tasks) out.push_back(t.class_ids);
        return out;
      });

  py::class_<AccuracyMatrix>(mod, "AccuracyMatrix")
      .def(py::init<>())
      .def_readwrite("acc", &AccuracyMatrix::acc)
      .def_readwrite("pooled", &AccuracyMatrix::pooled)
      .def("tasks", &AccuracyMatrix::tasks);

  py::class_<TaskBudget>(mod, "TaskBudget")
      .def_readonly("task", &TaskBudget::task)
      .def_readonly("trainable", &TaskBudget::trainable)
      .def_readonly("total", &TaskBudget::total)
      .def_readonly("expansion_bytes", &TaskBudget::expansion_bytes);

  py::class_<BudgetReport>(mod, "BudgetReport")
      .def_readonly("per_task", &BudgetReport::per_task)
      .def_readonly("exemplar_clips", &BudgetReport::exemplar_clips)
      .def_readonly("exemplar_bytes", &BudgetReport::exemplar_bytes)
      .def_readonly("ratio", &BudgetReport::ratio);

  py::class_<RunResult>(mod, "RunResult")
      .def_readonly("matrix", &RunResult::matrix)
      .def_readonly("budget", &RunResult::budget)
      .def_readonly("run_dir", &RunResult::run_dir);

  mod.def("make_corpus", &make_corpus, py::arg("config"));
  mod.def("save_corpus", &save_corpus, py::arg("corpus"), py::arg("dir"));
  mod.def("load_corpus", &load_corpus, py::arg("dir"));
  mod.def("make_task_stream", &make_task_stream, py::arg("classes"), py::arg("n_tasks"),
          py::arg("style"), py::arg("seed"));

  mod.def("bwf", &bwf, py::arg("matrix"));
  mod.def("avg_acc", &avg_acc, py::arg("matrix"), py::arg("paper_formula") = false);
  mod.def("account", &account, py::arg("model"), py::arg("exemplar_clips"));

  mod.def("run_experiment", &run_experiment, py::arg("config"),
          py::call_guard<py::gil_scoped_release>(),
          "full class-incremental protocol; writes artifacts under config.out_dir");

  mod.def("default_experiment_config", &default_experiment_config);
  mod.def("parse_experiment_config", &parse_experiment_config, py::arg("text"));
  mod.def("load_experiment_config", &load_experiment_config, py::arg("path"));
  mod.def("experiment_config_json", &experiment_config_json, py::arg("config"));

  mod.def("save_checkpoint", &save_checkpoint, py::arg("model"), py::arg("path"));
  mod.def("load_checkpoint", &load_checkpoint, py::arg("model"), py::arg("path"));
}
