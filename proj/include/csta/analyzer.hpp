#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "csta/clip.hpp"
#include "csta/model.hpp"
#include "csta/tensor.hpp"

namespace csta {

enum class ProbeDirection { Increment, Memorization };
enum class ProbeBranch { Spatial, Temporal };

// Increment probes align the single-branch-adapted output with the
// non-adapted one; memorization probes align it with the fully adapted one.
// The KL target is the fixed side, gradients flow through the branch forward
// only; `kl_reversed` swaps the divergence arguments (sensitivity switch).
struct ProbeConfig {
  ProbeDirection direction = ProbeDirection::Increment;
  ProbeBranch branch = ProbeBranch::Spatial;
  bool kl_reversed = false;

  std::string name() const;  // inc_S, inc_T, mem_S, mem_T
};

ForwardOptions probe_source_options(const ProbeConfig& config);
ForwardOptions probe_target_options(const ProbeConfig& config);

Tensor probe_objective(const Model& model, const ProbeConfig& config,
                       const std::vector<VideoClip>& batch);

struct GradientSnapshot {
  std::string probe;
  std::int64_t step = 0;
  std::vector<double> grad;  // flattened over trainable_names() order
  double norm = 0.0;
};

// Backward pass of the probe objective over the current trainable set;
// weights and pending gradients are left untouched.
GradientSnapshot probe_gradient(Model& model, const ProbeConfig& config,
                                const std::vector<VideoClip>& batch, std::int64_t step = 0);

// all four probes in canonical order: inc_S, inc_T, mem_S, mem_T
std::array<GradientSnapshot, 4> run_probes(Model& model, const std::vector<VideoClip>& batch,
                                           std::int64_t step = 0, bool kl_reversed = false);

// the four pairwise cosines of the gradient-direction analysis
struct CurvePoint {
  std::int64_t step = 0;
  // (inc_S, inc_T), (inc_S, mem_T), (inc_T, mem_S), (mem_S, mem_T)
  std::array<double, 4> cosines{};
  std::array<std::string, 4> labels{};  // cooperation | conflict | neutral
  bool zero_warning = false;            // some gradient had zero norm
};

CurvePoint pairwise_cosines(const std::array<GradientSnapshot, 4>& snapshots);

// accumulates curve points and serializes them deterministically
class RelationTracker {
 public:
  void record(const CurvePoint& point) { points_.push_back(point); }
  const std::vector<CurvePoint>& points() const { return points_; }
  void write_csv(const std::string& path) const;  // header-only when empty

 private:
  std::vector<CurvePoint> points_;
};

std::vector<CurvePoint> read_curve_csv(const std::string& path);

}  // namespace csta
