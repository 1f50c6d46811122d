// csta — generate corpora, train class-incremental runs, probe gradient
// geometry, and summarize run directories.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "../vendor/CLI11.hpp"
#include "../vendor/json.hpp"
#include "csta/analyzer.hpp"
#include "csta/config.hpp"
#include "csta/datagen.hpp"
#include "csta/harness.hpp"

namespace fs = std::filesystem;
using namespace csta;

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

void apply_ablation(ExperimentConfig& cfg, const std::string& mode) {
  TrainConfig& t = cfg.train;
  if (mode.empty() || mode == "full") return;
  if (mode == "baseline") {
    t.sep_ada = t.relation_recovery = t.compensation = false;
  } else if (mode == "sepada-only") {
    t.relation_recovery = t.compensation = false;
  } else if (mode == "no-rr") {
    t.relation_recovery = false;
  } else if (mode == "no-cc") {
    t.compensation = false;
  } else if (mode == "no-sepada") {
    t.sep_ada = false;
  } else if (mode == "mlp-adapter") {
    t.mlp_adapter = true;
  } else {
    throw std::invalid_argument("unknown ablation \"" + mode + "\"");
  }
}

std::string flag_label(const ExperimentConfig& cfg) {
  const TrainConfig& t = cfg.train;
  if (!t.sep_ada && !t.relation_recovery && !t.compensation) return "baseline";
  std::string s;
  auto add = [&s](const char* part) {
    if (!s.empty()) s += "+";
    s += part;
  };
  if (t.sep_ada) add(t.mlp_adapter ? "mlpada" : "sepada");
  if (t.relation_recovery) add("rr");
  if (t.compensation) add("cc");
  return s;
}

void print_run_summary(const RunResult& run) {
  const AccuracyMatrix& m = run.matrix;
  std::cout << "run directory: " << run.run_dir << "\n";
  std::cout << "task  acc_pooled  acc_newest  trainable\n";
  for (int i = 0; i < m.tasks(); ++i) {
    std::cout << i << "     " << fmt4(m.pooled[static_cast<std::size_t>(i)]) << "      "
              << fmt4(m.acc[static_cast<std::size_t>(i)].back()) << "      "
              << run.budget.per_task[static_cast<std::size_t>(i)].trainable << "\n";
  }
  std::cout << "Acc_N: " << fmt4(m.pooled.back()) << "\n";
  if (m.tasks() >= 2) {
    std::cout << "BWF: " << fmt4(bwf(m)) << "\n";
    std::cout << "avg-Acc: " << fmt4(avg_acc(m))
              << "   avg-Acc (previous-tasks form): " << fmt4(avg_acc(m, true)) << "\n";
    std::cout << "trainable ratio task1/task0: " << fmt4(run.budget.ratio) << "\n";
  } else {
    std::cout << "BWF: n/a (single task)\n";
  }
}

struct RunSummary {
  std::string dir;
  std::string label;
  AccuracyMatrix matrix;
  BudgetReport budget;
};

RunSummary load_run(const std::string& dir) {
  std::vector<std::string> missing;
  for (const char* name : {"config.json", "metrics.csv", "accuracy_matrix.csv", "budget.json"}) {
    if (!fs::exists(fs::path(dir) / name)) missing.push_back(name);
  }
  if (!missing.empty()) {
    std::string list;
    for (const std::string& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw std::invalid_argument("run directory " + dir + " is missing: " + list);
  }
  RunSummary s;
  s.dir = dir;
  s.label = flag_label(load_experiment_config((fs::path(dir) / "config.json").string()));
  s.matrix = read_accuracy_csv((fs::path(dir) / "accuracy_matrix.csv").string());
  s.budget = read_budget_json((fs::path(dir) / "budget.json").string());
  if (s.matrix.tasks() == 0) throw std::invalid_argument("empty accuracy matrix in " + dir);
  return s;
}

int cmd_datagen(const CorpusConfig& cfg, const std::string& out) {
  Corpus corpus = make_corpus(cfg);
  fs::create_directories(out);
  save_corpus(corpus, out);
  std::cout << "wrote " << corpus.classes.size() << " classes, " << corpus.samples.size()
            << " clips to " << out << "\n";
  return 0;
}

int cmd_train(ExperimentConfig cfg, const std::string& ablate) {
  apply_ablation(cfg, ablate);
  cfg.validate();
  RunResult run = run_experiment(cfg);
  std::cout << "configuration: " << flag_label(cfg) << "\n";
  print_run_summary(run);
  return 0;
}

int cmd_analyze(const ExperimentConfig& base) {
  ExperimentConfig causal = base;
  causal.train.sep_ada = true;
  causal.train.relation_recovery = true;
  causal.train.compensation = true;
  causal.out_dir = (fs::path(base.out_dir) / "causal").string();

  ExperimentConfig plain = base;
  plain.train.sep_ada = true;
  plain.train.relation_recovery = false;
  plain.train.compensation = false;
  plain.out_dir = (fs::path(base.out_dir) / "noncausal").string();

  for (const ExperimentConfig* cfg : {&causal, &plain}) {
    RunResult run = run_experiment(*cfg);
    std::cout << "=== " << flag_label(*cfg) << " ===\n";
    print_run_summary(run);
    for (int t = 1; t < cfg->tasks; ++t) {
      const fs::path curve =
          fs::path(cfg->out_dir) / "relation_curves" / ("task" + std::to_string(t) + ".csv");
      if (fs::exists(curve)) {
        auto points = read_curve_csv(curve.string());
        std::cout << "curve " << curve.string() << ": " << points.size() << " points";
        if (!points.empty()) {
          std::cout << ", final cos(inc_S,inc_T) " << fmt4(points.back().cosines[0]) << " ("
                    << points.back().labels[0] << ")";
        }
        std::cout << "\n";
      }
    }
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& csv_override) {
  std::vector<RunSummary> runs;
  for (const std::string& d : dirs) runs.push_back(load_run(d));

  if (runs.size() == 1) {
    const RunSummary& r = runs[0];
    const AccuracyMatrix& m = r.matrix;
    std::cout << "run directory: " << r.dir << "\nconfiguration: " << r.label << "\n";
    std::cout << "task  acc_pooled  acc_newest  trainable\n";
    for (int i = 0; i < m.tasks(); ++i) {
      std::cout << i << "     " << fmt4(m.pooled[static_cast<std::size_t>(i)]) << "      "
                << fmt4(m.acc[static_cast<std::size_t>(i)].back()) << "      "
                << r.budget.per_task[static_cast<std::size_t>(i)].trainable << "\n";
    }
    std::cout << "Acc_N: " << fmt4(m.pooled.back()) << "\n";
    std::cout << "BWF: " << (m.tasks() >= 2 ? fmt4(bwf(m)) : std::string("n/a")) << "\n";
    std::cout << "avg-Acc: " << fmt4(avg_acc(m)) << "\n";
    if (m.tasks() >= 2) {
      std::cout << "avg-Acc (previous-tasks form): " << fmt4(avg_acc(m, true)) << "\n";
    }
    std::cout << "exemplars: " << r.budget.exemplar_clips << " clips, " << r.budget.exemplar_bytes
              << " bytes\n";
    std::cout << "trainable ratio task1/task0: " << fmt4(r.budget.ratio) << "\n";

    const std::string csv_path =
        csv_override.empty() ? (fs::path(r.dir) / "report.csv").string() : csv_override;
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    csv << "# schema: report/1\nkey,value\n";
    for (int i = 0; i < m.tasks(); ++i) {
      csv << "acc_task_" << i << "," << fmt9(m.pooled[static_cast<std::size_t>(i)]) << "\n";
    }
    csv << "acc_n," << fmt9(m.pooled.back()) << "\n";
    csv << "bwf," << (m.tasks() >= 2 ? fmt9(bwf(m)) : std::string("")) << "\n";
    csv << "avg_acc," << fmt9(avg_acc(m)) << "\n";
    if (m.tasks() >= 2) csv << "avg_acc_paper," << fmt9(avg_acc(m, true)) << "\n";
    csv << "budget_ratio," << fmt9(r.budget.ratio) << "\n";
    csv << "exemplar_clips," << r.budget.exemplar_clips << "\n";
    csv << "exemplar_bytes," << r.budget.exemplar_bytes << "\n";
    std::cout << "report written to " << csv_path << "\n";
    return 0;
  }

  std::cout << "run                            label            acc_n    bwf      avg      "
               "avg_prev  ratio\n";
  std::string grid = "# schema: report-grid/1\nrun,label,acc_n,bwf,avg_acc,avg_acc_paper,ratio\n";
  for (const RunSummary& r : runs) {
    const AccuracyMatrix& m = r.matrix;
    const bool multi = m.tasks() >= 2;
    char row[256];
    std::snprintf(row, sizeof(row), "%-30s %-16s %-8s %-8s %-8s %-9s %s\n", r.dir.c_str(),
                  r.label.c_str(), fmt4(m.pooled.back()).c_str(),
                  multi ? fmt4(bwf(m)).c_str() : "n/a", fmt4(avg_acc(m)).c_str(),
                  multi ? fmt4(avg_acc(m, true)).c_str() : "n/a", fmt4(r.budget.ratio).c_str());
    std::cout << row;
    grid += r.dir + "," + r.label + "," + fmt9(m.pooled.back()) + "," +
            (multi ? fmt9(bwf(m)) : std::string("")) + "," + fmt9(avg_acc(m)) + "," +
            (multi ? fmt9(avg_acc(m, true)) : std::string("")) + "," + fmt9(r.budget.ratio) +
            "\n";
  }
  if (!csv_override.empty()) {
    std::ofstream csv(csv_override);
    if (!csv) throw std::runtime_error("cannot write " + csv_override);
    csv << grid;
    std::cout << "grid written to " << csv_override << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial-temporal causal adaptive learning laboratory"};
  app.require_subcommand(1);
  app.fallthrough();

  std::int64_t seed = 42;
  app.add_option("--seed", seed, "master seed for every stage");

  auto* datagen = app.add_subcommand("datagen", "render a synthetic video corpus to disk");
  CorpusConfig dg;
  std::string dg_out;
  datagen->add_option("--out", dg_out, "corpus directory")->required();
  datagen->add_option("--classes", dg.classes, "number of classes");
  datagen->add_option("--train-per-class", dg.train_per_class, "training clips per class");
  datagen->add_option("--test-per-class", dg.test_per_class, "test clips per class");
  datagen->add_option("--frames", dg.frames, "frames per clip");
  datagen->add_option("--frame-size", dg.frame_size, "square frame edge in pixels");

  auto* train = app.add_subcommand("train", "run a class-incremental experiment");
  std::string train_config, train_out, train_ablate, train_split, train_corpus;
  int train_tasks = 0;
  train->add_option("config", train_config, "experiment config JSON")
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "run directory override");
  train->add_option("--ablate", train_ablate, "one of: baseline, sepada-only, no-rr, no-cc, "
                                              "no-sepada, mlp-adapter, full");
  train->add_option("--tasks", train_tasks, "task count override");
  train->add_option("--split", train_split, "class split override (balanced | head_heavy)");
  train->add_option("--corpus", train_corpus, "use a pre-rendered corpus directory");

  auto* analyze = app.add_subcommand(
      "analyze", "train causal and non-causal twins and emit gradient-direction curves");
  std::string an_config, an_out;
  analyze->add_option("config", an_config, "experiment config JSON")->check(CLI::ExistingFile);
  analyze->add_option("--out", an_out, "base output directory override");

  auto* report = app.add_subcommand("report", "summarize one run or an ablation grid");
  std::vector<std::string> report_dirs;
  std::string report_csv;
  report->add_option("dirs", report_dirs, "run directories")->required()->expected(-1);
  report->add_option("--csv", report_csv, "write the table to this CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const bool seed_given = app.count("--seed") > 0;
    auto load_or_default = [&](const std::string& path) {
      ExperimentConfig cfg =
          path.empty() ? default_experiment_config() : load_experiment_config(path);
      if (seed_given) {
        cfg.seed = seed;
        cfg.corpus.seed = seed;
        cfg.train.seed = seed;
      }
      return cfg;
    };

    if (*datagen) {
      dg.seed = seed;
      return cmd_datagen(dg, dg_out);
    }
    if (*train) {
      ExperimentConfig cfg = load_or_default(train_config);
      if (!train_out.empty()) cfg.out_dir = train_out;
      if (!train_corpus.empty()) cfg.corpus_dir = train_corpus;
      if (train_tasks > 0) cfg.tasks = train_tasks;
      if (!train_split.empty()) cfg.split = train_split;
      return cmd_train(cfg, train_ablate);
    }
    if (*analyze) {
      ExperimentConfig cfg = load_or_default(an_config);
      if (!an_out.empty()) cfg.out_dir = an_out;
      return cmd_analyze(cfg);
    }
    if (*report) return cmd_report(report_dirs, report_csv);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::logic_error& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
