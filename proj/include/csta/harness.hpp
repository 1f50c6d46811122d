#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "csta/analyzer.hpp"
#include "csta/causal.hpp"
#include "csta/datagen.hpp"
#include "csta/model.hpp"

namespace csta {

struct TrainConfig {
  int epochs = 5;
  int finetune_epochs = 1;
  int exemplars_per_class = 5;
  double lr_task0 = 0.01;     // full-backbone stage
  double lr_adapters = 0.005;  // expansion stages (and the MLP baseline)
  double lr_finetune = 0.005;
  double momentum = 0.9;
  double clip_norm = 1.0;  // global gradient-norm cap; 0 disables
  int batch_size = 4;
  double lambda1 = 0.2, lambda2 = 0.2;
  double mu1 = 0.15, mu2 = 0.15, mu3 = 0.15;  // decay linearly to half over a task
  int k = 5, k1 = 5;
  int cache_capacity = 32;  // relation cache entries per class
  int probe_batch = 64;     // held-out probe clips, fixed at task start
  int probe_cadence = 1;    // epochs between relation-curve points
  std::uint64_t seed = 42;
  // mechanism switches; all off = plain sequential MLP+head fine-tuning
  bool sep_ada = true;
  bool relation_recovery = true;
  bool compensation = true;
  bool mlp_adapter = false;  // ablation: one adapter on the MLP output
  bool finetune = true;      // balanced classifier fine-tune after every task
  bool normalize_sims = false;
  bool kl_reversed = false;

  void validate() const;  // positive rates, counts >= 1
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "runs/default";
  ModelConfig model;
  CorpusConfig corpus;
  std::string corpus_dir;  // load a saved corpus instead of generating
  int tasks = 5;
  std::string split = "balanced";  // balanced | head_heavy
  TrainConfig train;

  void validate() const;  // also checks corpus/model clip geometry agreement
};

struct EpochLog {
  int task = 0, epoch = 0;
  double total = 0, ce = 0, distill = 0, rec_t = 0, rec_s = 0;
  double alpha_t = 0, alpha_s = 0;
};

struct AccuracyMatrix {
  std::vector<std::vector<double>> acc;  // acc[i][j]: task-j accuracy after task i
  std::vector<double> pooled;            // Acc_{i+1}: all seen test data after task i
  int tasks() const { return static_cast<int>(pooled.size()); }
};

// BWF = (1/(N-1)) * sum_{i=1..N-1} (Acc_i - Acc_N); needs N >= 2.
double bwf(const AccuracyMatrix& m);
// Default: mean of Acc_1..Acc_N. The paper-formula variant averages only
// Acc_1..Acc_{N-1} (and so also needs N >= 2).
double avg_acc(const AccuracyMatrix& m, bool paper_formula = false);

struct TaskBudget {
  int task = 0;
  std::int64_t trainable = 0;        // parameters opened for this task
  std::int64_t total = 0;            // cumulative parameter count at task end
  std::int64_t expansion_bytes = 0;  // serialized adapter + cross-task attention
};

struct BudgetReport {
  std::vector<TaskBudget> per_task;
  std::int64_t exemplar_clips = 0;
  std::int64_t exemplar_bytes = 0;  // f32 storage of the fine-tuning set
  double ratio = 0.0;               // task-1 trainable / task-0 trainable
};

// Reconstructs per-task counts from the model's expansion manifests.
BudgetReport account(const Model& model, std::int64_t exemplar_clips);

// global label of every class: concatenated-head order over the stream
std::unordered_map<int, std::int64_t> stream_labels(const TaskStream& stream);

// train-sample positions (into corpus.samples) of one task, canonical order
std::vector<std::int64_t> task_train_samples(const Corpus& corpus, const TaskStream& stream,
                                             int task);

// (sample position, global label) pairs: exemplars_per_class per seen class
std::vector<std::pair<std::int64_t, std::int64_t>> draw_exemplars(const Corpus& corpus,
                                                                  const TaskStream& stream,
                                                                  int upto_task,
                                                                  const TrainConfig& cfg);

// frozen pre-expansion pass over the task's first samples per class
RelationCache populate_cache(const Model& model, const Corpus& corpus, const TaskStream& stream,
                             int task, const TrainConfig& cfg);

// One task's training epochs. The model must already be in the right regime
// (task-0 / baseline / expanded); tasks >= 1 with a causal flag on require a
// populated cache. Probes and the relation tracker run only on expanded
// models.
std::vector<EpochLog> run_task(Model& model, const Corpus& corpus, const TaskStream& stream,
                               int task, const TrainConfig& cfg,
                               const RelationCache* cache = nullptr,
                               RelationTracker* tracker = nullptr);

// classifier-only pass over a balanced exemplar set; feature extractor frozen
void finetune_classifier(Model& model, const Corpus& corpus, const TaskStream& stream,
                         int upto_task, const TrainConfig& cfg);

struct EvalResult {
  std::vector<double> per_task;
  double pooled = 0.0;
};

// Task-agnostic top-1 over concatenated heads on every seen test set. Pure
// inference: no causal terms, no training hyperparameters.
EvalResult evaluate(const Model& model, const Corpus& corpus, const TaskStream& stream,
                    int upto_task);

struct RunResult {
  AccuracyMatrix matrix;
  BudgetReport budget;
  std::vector<EpochLog> logs;
  std::string run_dir;
};

// Full protocol: per task expand -> populate cache -> train -> fine-tune ->
// evaluate; writes config.json, metrics.csv, accuracy_matrix.csv, budget.json,
// relation_curves/*.csv and checkpoints/*.ckpt under out_dir.
RunResult run_experiment(const ExperimentConfig& config);

// CSV plumbing shared by the harness and the report command.
void write_accuracy_csv(const AccuracyMatrix& m, const std::string& path);
AccuracyMatrix read_accuracy_csv(const std::string& path);
void write_metrics_csv(const std::vector<EpochLog>& logs, const std::string& path);
void write_budget_json(const BudgetReport& b, const std::string& path);
BudgetReport read_budget_json(const std::string& path);

}  // namespace csta
