#include "csta/analyzer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "csta/ops.hpp"

namespace csta {
namespace {

const char* label_of(double cos) {
  if (std::abs(cos) <= 1e-6) return "neutral";
  return cos > 0 ? "cooperation" : "conflict";
}

double cos_of(const std::vector<double>& a, const std::vector<double>& b, bool* zero) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine: lengths " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " differ");
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) {
    if (zero) *zero = true;
    return 0.0;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::string ProbeConfig::name() const {
  std::string out = direction == ProbeDirection::Increment ? "inc_" : "mem_";
  out += branch == ProbeBranch::Spatial ? "S" : "T";
  return out;
}

ForwardOptions probe_source_options(const ProbeConfig& config) {
  ForwardOptions opt;
  opt.current_spatial = config.branch == ProbeBranch::Spatial;
  opt.current_temporal = config.branch == ProbeBranch::Temporal;
  return opt;
}

ForwardOptions probe_target_options(const ProbeConfig& config) {
  ForwardOptions opt;
  const bool both = config.direction == ProbeDirection::Memorization;
  opt.current_spatial = both;
  opt.current_temporal = both;
  return opt;
}

Tensor probe_objective(const Model& model, const ProbeConfig& config,
                       const std::vector<VideoClip>& batch) {
  if (model.expansions() < 1) throw std::logic_error("probe: no expansion to analyze");
  if (batch.empty()) throw std::invalid_argument("probe: empty batch");
  const ForwardOptions src_opt = probe_source_options(config);
  const ForwardOptions tgt_opt = probe_target_options(config);
  std::vector<Tensor> terms;
  for (const VideoClip& clip : batch) {
    Tensor target;
    {
      NoGradGuard ng;
      target = model.forward(clip, tgt_opt).all_logits;
    }
    Tensor source = model.forward(clip, src_opt).all_logits;
    terms.push_back(config.kl_reversed ? kl_divergence(source, target.detach())
                                       : kl_divergence(target.detach(), source));
  }
  return mean_scalars(terms);
}

GradientSnapshot probe_gradient(Model& model, const ProbeConfig& config,
                                const std::vector<VideoClip>& batch, std::int64_t step) {
  std::vector<std::string> names = model.trainable_names();
  if (names.empty()) throw std::logic_error("probe: empty trainable set");
  if (batch.empty()) throw std::invalid_argument("probe: empty batch");
  tape().clear();
  model.zero_grads();
  // one sample-sized graph at a time; leaf grads accumulate across backwards
  for (const VideoClip& clip : batch) {
    Tensor objective = probe_objective(model, config, {clip});
    backward(objective);
    tape().clear();
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  GradientSnapshot snap;
  snap.probe = config.name();
  snap.step = step;
  for (const std::string& n : names) {
    const Tensor& p = model.param(n);
    if (p.has_grad()) {
      for (double g : p.grad()) snap.grad.push_back(g * inv);
    } else {
      snap.grad.insert(snap.grad.end(), static_cast<std::size_t>(p.numel()), 0.0);
    }
  }
  double sq = 0;
  for (double v : snap.grad) sq += v * v;
  snap.norm = std::sqrt(sq);
  model.zero_grads();
  return snap;
}

std::array<GradientSnapshot, 4> run_probes(Model& model, const std::vector<VideoClip>& batch,
                                           std::int64_t step, bool kl_reversed) {
  std::array<GradientSnapshot, 4> out;
  int i = 0;
  for (ProbeDirection dir : {ProbeDirection::Increment, ProbeDirection::Memorization})
    for (ProbeBranch br : {ProbeBranch::Spatial, ProbeBranch::Temporal}) {
      ProbeConfig cfg{dir, br, kl_reversed};
      out[static_cast<std::size_t>(i++)] = probe_gradient(model, cfg, batch, step);
    }
  return out;
}

CurvePoint pairwise_cosines(const std::array<GradientSnapshot, 4>& snapshots) {
  // canonical order: inc_S, inc_T, mem_S, mem_T
  const std::vector<double>& inc_s = snapshots[0].grad;
  const std::vector<double>& inc_t = snapshots[1].grad;
  const std::vector<double>& mem_s = snapshots[2].grad;
  const std::vector<double>& mem_t = snapshots[3].grad;
  CurvePoint point;
  point.step = snapshots[0].step;
  bool zero = false;
  point.cosines[0] = cos_of(inc_s, inc_t, &zero);
  point.cosines[1] = cos_of(inc_s, mem_t, &zero);
  point.cosines[2] = cos_of(inc_t, mem_s, &zero);
  point.cosines[3] = cos_of(mem_s, mem_t, &zero);
  point.zero_warning = zero;
  for (std::size_t i = 0; i < 4; ++i) point.labels[i] = label_of(point.cosines[i]);
  return point;
}

void RelationTracker::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# schema: relation-curve/1\n";
  out << "step,cos_inc_inc,cos_incS_memT,cos_incT_memS,cos_mem_mem,"
         "label_inc_inc,label_incS_memT,label_incT_memS,label_mem_mem\n";
  char buf[40];
  for (const CurvePoint& p : points_) {
    out << p.step;
    for (double c : p.cosines) {
      std::snprintf(buf, sizeof(buf), "%.9g", c);
      out << "," << buf;
    }
    for (const std::string& l : p.labels) out << "," << l;
    out << "\n";
  }
}

std::vector<CurvePoint> read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::vector<CurvePoint> points;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("step,", 0) == 0) continue;
    std::stringstream ss(line);
    std::string cell;
    CurvePoint p;
    std::getline(ss, cell, ',');
    p.step = std::stoll(cell);
    for (std::size_t i = 0; i < 4; ++i) {
      std::getline(ss, cell, ',');
      p.cosines[i] = std::stod(cell);
    }
    for (std::size_t i = 0; i < 4; ++i) std::getline(ss, p.labels[i], ',');
    points.push_back(p);
  }
  return points;
}

}  // namespace csta
