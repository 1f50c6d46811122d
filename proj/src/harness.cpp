#include "csta/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "../vendor/json.hpp"
#include "csta/checkpoint.hpp"
#include "csta/config.hpp"
#include "csta/ops.hpp"
#include "csta/rng.hpp"

namespace csta {

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

template <typename T>
void shuffle_vec(std::vector<T>& v, SplitMix64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i)))]);
  }
}

// SGD with momentum over the named parameters; missing grads decay velocity.
// Gradients are rescaled to a global norm cap before entering the velocity —
// without it the attention landscape leaves no workable step size (plateau at
// 0.01, divergence by 0.05).
struct SgdState {
  double lr = 0.01;
  double momentum = 0.9;
  double clip_norm = 1.0;  // 0 disables
  std::unordered_map<std::string, std::vector<double>> vel;

  void step(Model& m, const std::vector<std::string>& names) {
    double sq = 0;
    if (clip_norm > 0) {
      for (const std::string& n : names) {
        Tensor& p = m.param(n);
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
      }
    }
    const double norm = std::sqrt(sq);
    const double scale = (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    for (const std::string& n : names) {
      Tensor& p = m.param(n);
      std::vector<double>& v = vel[n];
      v.resize(p.values().size(), 0.0);
      const bool hg = p.has_grad();
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = momentum * v[i] + (hg ? scale * p.grad()[i] : 0.0);
        p.values()[i] -= lr * v[i];
      }
    }
  }
};

std::vector<std::string> head_names(int task) {
  const std::string h = "head" + std::to_string(task) + ".";
  return {h + "W", h + "b"};
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (finetune_epochs < 0) throw std::invalid_argument("config: finetune_epochs must be >= 0");
  if (exemplars_per_class < 1)
    throw std::invalid_argument("config: exemplars_per_class must be >= 1");
  for (double r : {lr_task0, lr_adapters, lr_finetune}) {
    if (!(r > 0)) throw std::invalid_argument("config: learning rates must be positive");
  }
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("config: momentum must be in [0,1)");
  if (clip_norm < 0) throw std::invalid_argument("config: clip_norm must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  for (double v : {lambda1, lambda2, mu1, mu2, mu3}) {
    if (v < 0) throw std::invalid_argument("config: lambda/mu factors must be nonnegative");
  }
  if (k < 1 || k1 < 1) throw std::invalid_argument("config: k and k1 must be >= 1");
  if (cache_capacity < 1) throw std::invalid_argument("config: cache_capacity must be >= 1");
  if (probe_batch < 1) throw std::invalid_argument("config: probe_batch must be >= 1");
  if (probe_cadence < 1) throw std::invalid_argument("config: probe_cadence must be >= 1");
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  if (tasks < 1) throw std::invalid_argument("config: tasks must be >= 1");
  if (split != "balanced" && split != "head_heavy") {
    throw std::invalid_argument("config: unknown split \"" + split + "\"");
  }
  if (out_dir.empty()) throw std::invalid_argument("config: out_dir must not be empty");
  if (corpus_dir.empty() &&
      (corpus.frames != model.frames || corpus.frame_size != model.frame_size)) {
    throw std::invalid_argument("config: corpus clip geometry does not match the model input");
  }
}

double bwf(const AccuracyMatrix& m) {
  const int n = m.tasks();
  if (n < 2) throw std::invalid_argument("bwf: need at least 2 tasks, got " + std::to_string(n));
  double sum = 0;
  for (int i = 0; i + 1 < n; ++i) sum += m.pooled[static_cast<std::size_t>(i)] - m.pooled.back();
  return sum / (n - 1);
}

double avg_acc(const AccuracyMatrix& m, bool paper_formula) {
  const int n = m.tasks();
  if (n < 1) throw std::invalid_argument("avg_acc: empty matrix");
  if (paper_formula) {
    if (n < 2) throw std::invalid_argument("avg_acc: paper formula needs at least 2 tasks");
    double sum = 0;
    for (int i = 0; i + 1 < n; ++i) sum += m.pooled[static_cast<std::size_t>(i)];
    return sum / (n - 1);
  }
  double sum = 0;
  for (double v : m.pooled) sum += v;
  return sum / n;
}

BudgetReport account(const Model& model, std::int64_t exemplar_clips) {
  const int n_tasks = model.tasks();
  if (n_tasks < 1) throw std::invalid_argument("account: model has no task head");
  std::vector<std::vector<std::string>> added(static_cast<std::size_t>(n_tasks));
  for (int t = 1; t < n_tasks; ++t) {
    if (t <= model.expansions()) added[static_cast<std::size_t>(t)] = model.expansion_param_names(t);
  }
  // parameters that were present at the end of task 0
  std::int64_t base_total = model.count_all();
  for (int t = 1; t < n_tasks; ++t) {
    base_total -= model.count(added[static_cast<std::size_t>(t)]) + model.count(head_names(t));
  }

  BudgetReport report;
  std::int64_t running_total = base_total;
  for (int t = 0; t < n_tasks; ++t) {
    TaskBudget tb;
    tb.task = t;
    const auto& add = added[static_cast<std::size_t>(t)];
    if (t == 0) {
      tb.trainable = base_total;  // full backbone + first head
    } else if (!add.empty()) {
      std::vector<std::string> open = add;  // adapters (+ attention introduced now)
      for (const char* c : {"cta.Wq", "cta.Wk", "cta.Wv", "cta.gate"}) {
        if (model.has_param(c) && std::find(open.begin(), open.end(), c) == open.end()) {
          open.emplace_back(c);  // shared attention is retrained every task
        }
      }
      for (const std::string& h : head_names(t)) open.push_back(h);
      tb.trainable = model.count(open);
    } else {
      // baseline regime: block MLPs plus the new head
      std::vector<std::string> open = head_names(t);
      for (std::int64_t l = 0; l < model.config().blocks; ++l) {
        const std::string b = "block" + std::to_string(l) + ".mlp.";
        for (const char* wn : {"W1", "b1", "W2", "b2"}) open.push_back(b + wn);
      }
      tb.trainable = model.count(open);
    }
    if (t > 0) running_total += model.count(add) + model.count(head_names(t));
    tb.total = running_total;
    tb.expansion_bytes =
        add.empty() ? 0 : static_cast<std::int64_t>(checkpoint_bytes(model, add).size());
    report.per_task.push_back(tb);
  }
  report.exemplar_clips = exemplar_clips;
  report.exemplar_bytes =
      exemplar_clips * model.config().frames * model.config().frame_size *
      model.config().frame_size * 4;  // clips are stored as little-endian f32
  report.ratio = n_tasks >= 2 ? static_cast<double>(report.per_task[1].trainable) /
                                    static_cast<double>(report.per_task[0].trainable)
                              : 0.0;
  return report;
}

std::unordered_map<int, std::int64_t> stream_labels(const TaskStream& stream) {
  std::unordered_map<int, std::int64_t> labels;
  std::int64_t next = 0;
  for (const Task& t : stream.tasks)
    for (int c : t.class_ids) labels[c] = next++;
  return labels;
}

std::vector<std::int64_t> task_train_samples(const Corpus& corpus, const TaskStream& stream,
                                             int task) {
  if (task < 0 || task >= static_cast<int>(stream.tasks.size())) {
    throw std::invalid_argument("task " + std::to_string(task) + " outside the stream");
  }
  std::vector<std::int64_t> out;
  for (int c : stream.tasks[static_cast<std::size_t>(task)].class_ids) {
    const auto idx = corpus.train_indices(c);
    out.insert(out.end(), idx.begin(), idx.end());
  }
  return out;
}

std::vector<std::pair<std::int64_t, std::int64_t>> draw_exemplars(const Corpus& corpus,
                                                                  const TaskStream& stream,
                                                                  int upto_task,
                                                                  const TrainConfig& cfg) {
  const auto labels = stream_labels(stream);
  std::vector<std::pair<std::int64_t, std::int64_t>> out;
  for (int t = 0; t <= upto_task; ++t) {
    for (int c : stream.tasks[static_cast<std::size_t>(t)].class_ids) {
      std::vector<std::int64_t> idx = corpus.train_indices(c);
      if (static_cast<int>(idx.size()) < cfg.exemplars_per_class) {
        throw std::invalid_argument("finetune: class " + std::to_string(c) + " has " +
                                    std::to_string(idx.size()) + " train samples, need " +
                                    std::to_string(cfg.exemplars_per_class));
      }
      SplitMix64 rng(derive_seed(cfg.seed, 0xE8E00000ull + static_cast<std::uint64_t>(c)));
      shuffle_vec(idx, rng);
      for (int i = 0; i < cfg.exemplars_per_class; ++i) out.emplace_back(idx[static_cast<std::size_t>(i)], labels.at(c));
    }
  }
  return out;
}

RelationCache populate_cache(const Model& model, const Corpus& corpus, const TaskStream& stream,
                             int task, const TrainConfig& cfg) {
  if (task < 1) throw std::invalid_argument("populate_cache: task 0 has no previous model");
  RelationCache cache;
  cache.capacity_per_class = cfg.cache_capacity;
  for (int c : stream.tasks[static_cast<std::size_t>(task)].class_ids) {
    for (std::int64_t pos : corpus.train_indices(c)) {
      const SampleRef& ref = corpus.samples[static_cast<std::size_t>(pos)];
      if (!cache_add_sample(cache, model, ref.sample_id, c, corpus.render(ref))) break;
    }
  }
  return cache;
}

std::vector<EpochLog> run_task(Model& model, const Corpus& corpus, const TaskStream& stream,
                               int task, const TrainConfig& cfg, const RelationCache* cache,
                               RelationTracker* tracker) {
  cfg.validate();
  if (task < 0 || task >= static_cast<int>(stream.tasks.size())) {
    throw std::invalid_argument("run_task: task " + std::to_string(task) + " outside the stream");
  }
  if (model.tasks() != task + 1) {
    throw std::invalid_argument("run_task: model holds " + std::to_string(model.tasks()) +
                                " heads, expected " + std::to_string(task + 1));
  }
  const bool causal = task >= 1 && (cfg.relation_recovery || cfg.compensation);
  if (causal && (cache == nullptr || cache->entries.empty())) {
    throw std::invalid_argument("run_task: relation cache missing for task " +
                                std::to_string(task));
  }
  if (causal && cache->head_task != task - 1) {
    throw std::invalid_argument("run_task: cache built under head " +
                                std::to_string(cache->head_task) + ", expected " +
                                std::to_string(task - 1));
  }

  const auto labels = stream_labels(stream);
  const auto sample_pos = task_train_samples(corpus, stream, task);
  std::vector<VideoClip> clips;
  std::vector<std::int64_t> clip_labels;
  clips.reserve(sample_pos.size());
  for (std::int64_t pos : sample_pos) {
    const SampleRef& ref = corpus.samples[static_cast<std::size_t>(pos)];
    clips.push_back(corpus.render(ref));
    clip_labels.push_back(labels.at(ref.class_id));
  }
  if (clips.empty()) throw std::invalid_argument("run_task: task has no training samples");

  // probes only exist once this task introduced an adapter set
  const bool probing = cfg.sep_ada && task >= 1 && model.expansions() == task;
  std::vector<VideoClip> probe_clips;
  if (probing) {
    const std::size_t n = std::min(clips.size(), static_cast<std::size_t>(cfg.probe_batch));
    probe_clips.assign(clips.begin(), clips.begin() + static_cast<std::ptrdiff_t>(n));
  }

  ForwardOptions prev_opts;
  prev_opts.adapters_limit = task - 1;
  prev_opts.cta_tasks = task - 1;
  const int prev_head = task - 1;
  const int head_n = model.tasks() - 1;
  const bool distilling = cfg.sep_ada && task >= 1 && model.expansions() == task;

  SgdState opt{task == 0 ? cfg.lr_task0 : cfg.lr_adapters, cfg.momentum, cfg.clip_norm, {}};
  const std::vector<std::string> names = model.trainable_names();
  if (names.empty()) throw std::logic_error("run_task: nothing is trainable");

  std::vector<EpochLog> logs;
  double alpha_t = 0, alpha_s = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    if (probing) {
      auto snaps = run_probes(model, probe_clips, e, cfg.kl_reversed);
      if (tracker && e % cfg.probe_cadence == 0) tracker->record(pairwise_cosines(snaps));
      if (cfg.compensation) {
        alpha_t = mapping_influence_factor(snaps[0].grad, snaps[1].grad);
        alpha_s = mapping_influence_factor(snaps[1].grad, snaps[0].grad);
      }
    }
    // factors fade to half strength across the task
    const double decay = cfg.epochs > 1 ? 1.0 - 0.5 * e / (cfg.epochs - 1.0) : 1.0;
    const double mu1 = cfg.mu1 * decay, mu2 = cfg.mu2 * decay, mu3 = cfg.mu3 * decay;

    std::vector<std::size_t> order(clips.size());
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 shuffle_rng(derive_seed(cfg.seed, 0x7A5C0000ull +
                                                     static_cast<std::uint64_t>(task) * 1024 +
                                                     static_cast<std::uint64_t>(e)));
    shuffle_vec(order, shuffle_rng);

    EpochLog log;
    log.task = task;
    log.epoch = e;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      tape().clear();
      model.zero_grads();
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor> ces, lds, lts, lss;
      std::vector<VideoClip> batch_clips;
      for (std::size_t i = b; i < end; ++i) {
        const VideoClip& clip = clips[order[i]];
        const std::int64_t label = clip_labels[order[i]];
        batch_clips.push_back(clip);

        FeatureBundle fb = model.forward(clip);
        Tensor y = fb.all_logits;

        std::vector<double> pS, pT, pF;  // previous-model branch logits
        if (causal) {
          NoGradGuard ng;
          FeatureBundle pf = model.forward(clip, prev_opts);
          pS = model.classify_branch(pf.spatial, prev_head).values();
          pT = model.classify_branch(pf.temporal, prev_head).values();
          pF = model.classify_branch(pf.feat, prev_head).values();
        }
        if (cfg.compensation && task >= 1) {
          std::vector<double> qbT(pF.size()), qbS(pF.size());
          for (std::size_t c = 0; c < pF.size(); ++c) {
            qbT[c] = pF[c] - pT[c];
            qbS[c] = pF[c] - pS[c];
          }
          Compensation eT =
              compensation_effect(*cache, model, qbT, 'T', alpha_t, cfg.k1, cfg.normalize_sims);
          Compensation eS =
              compensation_effect(*cache, model, qbS, 'S', alpha_s, cfg.k1, cfg.normalize_sims);
          y = combined_prediction(y, eS.effect, eT.effect, cfg.lambda1, cfg.lambda2);
        }
        ces.push_back(cross_entropy(y, label));

        if (cfg.relation_recovery && task >= 1) {
          RelationPair query =
              compute_relation(Tensor::from_values({static_cast<std::int64_t>(pS.size())}, pS),
                               Tensor::from_values({static_cast<std::int64_t>(pT.size())}, pT),
                               Tensor::from_values({static_cast<std::int64_t>(pF.size())}, pF));
          TopkResult tS = topk_select(*cache, query.R_S.values(), cfg.k, 'S');
          TopkResult tT = topk_select(*cache, query.R_T.values(), cfg.k, 'T');
          if (cfg.normalize_sims) {
            tS.sims = softmax_weights(tS.sims);
            tT.sims = softmax_weights(tT.sims);
          }
          Tensor SK = mix_branch_logits(*cache, tS, 'S');
          Tensor TK = mix_branch_logits(*cache, tT, 'T');
          Tensor Fc = model.classify_branch(fb.feat, prev_head);
          Tensor Sc = model.classify_branch(fb.spatial, prev_head);
          Tensor Tc = model.classify_branch(fb.temporal, prev_head);
          HybridLoss h =
              hybrid_recovery_loss(compute_relation(SK, TK, Fc), compute_relation(Sc, Tc, Fc));
          lts.push_back(h.L_T);
          lss.push_back(h.L_S);
        }
        if (distilling) {
          Tensor teacher;
          {
            NoGradGuard ng;
            ForwardOptions topt;
            topt.adapters_limit = model.expansions() - 1;
            teacher = model.forward(clip, topt).head_logits[static_cast<std::size_t>(head_n)];
          }
          lds.push_back(
              kl_divergence(fb.head_logits[static_cast<std::size_t>(head_n)], teacher.detach()));
        }
      }
      Tensor l_ce = mean_scalars(ces);
      Tensor l_d = lds.empty() ? Tensor::scalar(0.0) : mean_scalars(lds);
      Tensor l_t = lts.empty() ? Tensor::scalar(0.0) : mean_scalars(lts);
      Tensor l_s = lss.empty() ? Tensor::scalar(0.0) : mean_scalars(lss);
      Tensor loss = total_loss(l_ce, l_d, l_t, l_s, mu1, mu2, mu3);
      backward(loss);
      opt.step(model, names);

      log.total += loss.item();
      log.ce += l_ce.item();
      log.distill += l_d.item();
      log.rec_t += l_t.item();
      log.rec_s += l_s.item();
      ++steps;
      tape().clear();
      model.zero_grads();
    }
    log.total /= steps;
    log.ce /= steps;
    log.distill /= steps;
    log.rec_t /= steps;
    log.rec_s /= steps;
    log.alpha_t = alpha_t;
    log.alpha_s = alpha_s;
    logs.push_back(log);
  }
  if (probing) {
    auto snaps = run_probes(model, probe_clips, cfg.epochs, cfg.kl_reversed);
    if (tracker && cfg.epochs % cfg.probe_cadence == 0) tracker->record(pairwise_cosines(snaps));
  }
  tape().clear();
  model.zero_grads();
  return logs;
}

void finetune_classifier(Model& model, const Corpus& corpus, const TaskStream& stream,
                         int upto_task, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.finetune_epochs == 0) return;
  const auto exemplars = draw_exemplars(corpus, stream, upto_task, cfg);
  std::vector<VideoClip> clips;
  std::vector<std::int64_t> clip_labels;
  for (const auto& [pos, label] : exemplars) {
    clips.push_back(corpus.render(corpus.samples[static_cast<std::size_t>(pos)]));
    clip_labels.push_back(label);
  }
  model.set_heads_only_trainable();
  const std::vector<std::string> names = model.trainable_names();
  SgdState opt{cfg.lr_finetune, cfg.momentum, cfg.clip_norm, {}};
  for (int e = 0; e < cfg.finetune_epochs; ++e) {
    std::vector<std::size_t> order(clips.size());
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(derive_seed(cfg.seed, 0xF1E70000ull +
                                             static_cast<std::uint64_t>(upto_task) * 131 +
                                             static_cast<std::uint64_t>(e)));
    shuffle_vec(order, rng);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      tape().clear();
      model.zero_grads();
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor> ces;
      for (std::size_t i = b; i < end; ++i) {
        FeatureBundle fb = model.forward(clips[order[i]]);
        ces.push_back(cross_entropy(fb.all_logits, clip_labels[order[i]]));
      }
      Tensor loss = mean_scalars(ces);
      backward(loss);
      opt.step(model, names);
      tape().clear();
      model.zero_grads();
    }
  }
  tape().clear();
  model.zero_grads();
}

EvalResult evaluate(const Model& model, const Corpus& corpus, const TaskStream& stream,
                    int upto_task) {
  if (upto_task < 0 || upto_task >= static_cast<int>(stream.tasks.size())) {
    throw std::invalid_argument("evaluate: task " + std::to_string(upto_task) +
                                " outside the stream");
  }
  const auto labels = stream_labels(stream);
  NoGradGuard ng;
  EvalResult out;
  std::int64_t pooled_correct = 0, pooled_total = 0;
  for (int t = 0; t <= upto_task; ++t) {
    std::int64_t correct = 0, total = 0;
    for (int c : stream.tasks[static_cast<std::size_t>(t)].class_ids) {
      for (std::int64_t pos : corpus.test_indices(c)) {
        const SampleRef& ref = corpus.samples[static_cast<std::size_t>(pos)];
        FeatureBundle fb = model.forward(corpus.render(ref));
        const std::vector<double>& v = fb.all_logits.values();
        std::size_t arg = 0;
        for (std::size_t i = 1; i < v.size(); ++i) {
          if (v[i] > v[arg]) arg = i;
        }
        correct += static_cast<std::int64_t>(arg) == labels.at(c) ? 1 : 0;
        ++total;
      }
    }
    out.per_task.push_back(static_cast<double>(correct) / static_cast<double>(total));
    pooled_correct += correct;
    pooled_total += total;
  }
  out.pooled = static_cast<double>(pooled_correct) / static_cast<double>(pooled_total);
  return out;
}

void write_accuracy_csv(const AccuracyMatrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# schema: accuracy-matrix/1\n";
  out << "task";
  for (int j = 0; j < m.tasks(); ++j) out << ",acc_task_" << j;
  out << ",pooled\n";
  for (int i = 0; i < m.tasks(); ++i) {
    out << i;
    for (int j = 0; j < m.tasks(); ++j) {
      out << ",";
      if (j < static_cast<int>(m.acc[static_cast<std::size_t>(i)].size())) {
        out << fmt9(m.acc[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
      }
    }
    out << "," << fmt9(m.pooled[static_cast<std::size_t>(i)]) << "\n";
  }
}

AccuracyMatrix read_accuracy_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  AccuracyMatrix m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("task", 0) == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2) throw std::runtime_error("bad accuracy row in " + path);
    std::vector<double> row;
    for (std::size_t i = 1; i + 1 < cells.size(); ++i) {
      if (!cells[i].empty()) row.push_back(std::stod(cells[i]));
    }
    m.acc.push_back(std::move(row));
    m.pooled.push_back(std::stod(cells.back()));
  }
  return m;
}

void write_metrics_csv(const std::vector<EpochLog>& logs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# schema: metrics/1\n";
  out << "task,epoch,loss_total,loss_ce,loss_distill,loss_rec_t,loss_rec_s,alpha_t,alpha_s\n";
  for (const EpochLog& l : logs) {
    out << l.task << "," << l.epoch << "," << fmt9(l.total) << "," << fmt9(l.ce) << ","
        << fmt9(l.distill) << "," << fmt9(l.rec_t) << "," << fmt9(l.rec_s) << ","
        << fmt9(l.alpha_t) << "," << fmt9(l.alpha_s) << "\n";
  }
}

void write_budget_json(const BudgetReport& b, const std::string& path) {
  nlohmann::ordered_json j;
  j["schema"] = "csta-budget/1";
  j["per_task"] = nlohmann::ordered_json::array();
  for (const TaskBudget& t : b.per_task) {
    j["per_task"].push_back({{"task", t.task},
                             {"trainable", t.trainable},
                             {"total", t.total},
                             {"expansion_bytes", t.expansion_bytes}});
  }
  j["exemplar_clips"] = b.exemplar_clips;
  j["exemplar_bytes"] = b.exemplar_bytes;
  j["ratio"] = b.ratio;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

BudgetReport read_budget_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  if (j.value("schema", "") != "csta-budget/1") {
    throw std::runtime_error("unsupported budget schema in " + path);
  }
  BudgetReport b;
  for (const auto& t : j.at("per_task")) {
    b.per_task.push_back(TaskBudget{t.at("task").get<int>(), t.at("trainable").get<std::int64_t>(),
                                    t.at("total").get<std::int64_t>(),
                                    t.at("expansion_bytes").get<std::int64_t>()});
  }
  b.exemplar_clips = j.at("exemplar_clips").get<std::int64_t>();
  b.exemplar_bytes = j.at("exemplar_bytes").get<std::int64_t>();
  b.ratio = j.at("ratio").get<double>();
  return b;
}

RunResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  Corpus corpus = config.corpus_dir.empty() ? make_corpus(config.corpus)
                                            : load_corpus(config.corpus_dir);
  if (corpus.config.frames != config.model.frames ||
      corpus.config.frame_size != config.model.frame_size) {
    throw std::invalid_argument("run_experiment: corpus clips do not match the model input");
  }
  TaskStream stream =
      make_task_stream(corpus.config.classes, config.tasks, config.split, config.seed);

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(config.out_dir) / "relation_curves");
  fs::create_directories(fs::path(config.out_dir) / "checkpoints");
  {
    std::ofstream snap(fs::path(config.out_dir) / "config.json");
    if (!snap) throw std::runtime_error("cannot write config snapshot under " + config.out_dir);
    snap << experiment_config_json(config) << "\n";
  }

  ModelConfig mc = config.model;
  if (config.train.mlp_adapter) mc.mlp_adapter = true;
  Model model(mc, config.seed);
  const TrainConfig& tcfg = config.train;

  RunResult out;
  out.run_dir = config.out_dir;
  std::vector<std::int64_t> live_trainables;
  std::int64_t exemplar_total = 0;
  std::int64_t seen_classes = 0;
  for (int n = 0; n < static_cast<int>(stream.tasks.size()); ++n) {
    const std::int64_t new_classes =
        static_cast<std::int64_t>(stream.tasks[static_cast<std::size_t>(n)].class_ids.size());
    seen_classes += new_classes;
    std::string stage = "expand";
    try {
      RelationCache cache;
      bool have_cache = false;
      if (n == 0) {
        model.add_task_head(new_classes);
        model.set_task0_trainable();
      } else {
        if (tcfg.relation_recovery || tcfg.compensation) {
          stage = "populate_cache";
          cache = populate_cache(model, corpus, stream, n, tcfg);
          have_cache = true;
        }
        stage = "expand";
        if (tcfg.sep_ada) {
          model.expand_for_task(new_classes);
        } else {
          model.add_task_head(new_classes);
          model.set_baseline_trainable();
        }
      }
      live_trainables.push_back(model.count_trainable());

      stage = "run_task";
      RelationTracker tracker;
      auto logs =
          run_task(model, corpus, stream, n, tcfg, have_cache ? &cache : nullptr, &tracker);
      out.logs.insert(out.logs.end(), logs.begin(), logs.end());
      model.complete_task();
      if (!tracker.points().empty()) {
        tracker.write_csv((fs::path(config.out_dir) / "relation_curves" /
                           ("task" + std::to_string(n) + ".csv"))
                              .string());
      }

      stage = "finetune";
      if (tcfg.finetune && tcfg.finetune_epochs > 0) {
        finetune_classifier(model, corpus, stream, n, tcfg);
        exemplar_total = seen_classes * tcfg.exemplars_per_class;
      }

      stage = "evaluate";
      EvalResult ev = evaluate(model, corpus, stream, n);
      out.matrix.acc.push_back(ev.per_task);
      out.matrix.pooled.push_back(ev.pooled);

      stage = "checkpoint";
      save_checkpoint(model, (fs::path(config.out_dir) / "checkpoints" /
                              ("task" + std::to_string(n) + ".ckpt"))
                                 .string());
    } catch (const std::logic_error&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error("run_experiment: stage " + stage + " failed at task " +
                               std::to_string(n) + ": " + e.what());
    }
  }

  out.budget = account(model, exemplar_total);
  for (std::size_t n = 0; n < live_trainables.size(); ++n) {
    if (out.budget.per_task[n].trainable != live_trainables[n]) {
      throw std::logic_error("run_experiment: budget reconstruction disagrees with the live "
                             "trainable count at task " +
                             std::to_string(n));
    }
  }

  write_metrics_csv(out.logs, (fs::path(config.out_dir) / "metrics.csv").string());
  write_accuracy_csv(out.matrix, (fs::path(config.out_dir) / "accuracy_matrix.csv").string());
  write_budget_json(out.budget, (fs::path(config.out_dir) / "budget.json").string());
  return out;
}

}  // namespace csta
