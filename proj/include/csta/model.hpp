#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "csta/clip.hpp"
#include "csta/tensor.hpp"

namespace csta {

struct ModelConfig {
  std::int64_t embed_dim = 64;  // d
  std::int64_t heads = 4;       // h
  std::int64_t blocks = 2;      // L
  std::int64_t frames = 8;      // T_f
  std::int64_t frame_size = 32;
  std::int64_t patch_size = 8;
  double mlp_ratio = 2.0;
  std::int64_t bottleneck = 0;        // adapter width; 0 means d/4
  std::string concat_axis = "token";  // cross-task memory axis: token | embedding
  bool mlp_adapter = false;  // ablation: one adapter after the MLP instead of two after the MSAs

  std::int64_t patches_per_frame() const;  // P
  std::int64_t tokens() const { return frames * patches_per_frame() + 1; }
  std::int64_t bneck() const { return bottleneck > 0 ? bottleneck : embed_dim / 4; }
  double attn_scale() const;  // sigma = sqrt(d/h)
  void validate() const;
};

// Per-forward switches. Adapter sets are indexed by the task that introduced
// them (1-based); `adapters_limit` caps which sets apply, and the two
// `current_*` flags mask the set at exactly that cap (probe configurations).
// `cta_tasks` is the number of per-task snapshot features the cross-task
// attention memory holds.
struct ForwardOptions {
  int adapters_limit = -1;  // -1: every expansion so far
  int cta_tasks = -1;       // -1: every expansion so far
  bool current_spatial = true;
  bool current_temporal = true;
  bool use_cta = true;
  bool collect_attn_stats = false;
};

struct AttnStats {
  double rowsum_min = 1.0;
  double rowsum_max = 1.0;
  bool any = false;
  void note(double s);
};

struct FeatureBundle {
  Tensor tokens;    // final token matrix [N, d]
  Tensor feat;      // pooled classification token of `tokens` [d]
  Tensor spatial;   // pooled spatial-branch feature of the last block [d]
  Tensor temporal;  // pooled temporal-branch feature of the last block [d]
  std::vector<Tensor> head_logits;
  Tensor all_logits;  // concatenation of head_logits
  AttnStats attn;     // filled when requested
};

struct MsaWeights {
  Tensor Wq, Wk, Wv, Wo;
};

// Divided attention primitives (free functions so tests can drive them with
// hand-set weights). Tokens are [T_f*P+1, d], classification token at row 0.
// Temporal attention groups tokens of equal patch position across frames (the
// classification token attends to itself alone); spatial attention groups
// each frame's patches with a replicated classification token whose per-frame
// outputs are averaged.
Tensor msa_temporal(const Tensor& tokens, const MsaWeights& w, std::int64_t frames,
                    std::int64_t patches, std::int64_t heads, AttnStats* stats = nullptr);
Tensor msa_spatial(const Tensor& tokens, const MsaWeights& w, std::int64_t frames,
                   std::int64_t patches, std::int64_t heads, AttnStats* stats = nullptr);

// F_n = F0 + sum_i W2_i(GeLU(W1_i(F0))); every adapter consumes F0 itself.
// Empty list returns F0 unchanged (same handle).
Tensor adapt_msa(const Tensor& F0, const std::vector<std::pair<Tensor, Tensor>>& adapters);

// Single-head cross-task attention of the query tokens over per-task snapshot
// features concatenated along the token axis.
Tensor cross_task_attend(const Tensor& query, const std::vector<Tensor>& snapshots,
                         const Tensor& Wq, const Tensor& Wk, const Tensor& Wv, double scale,
                         AttnStats* stats = nullptr);
// Embedding-axis variant: snapshots concatenated along columns, with
// correspondingly wider key/value projections.
Tensor cross_task_attend_embed(const Tensor& query, const std::vector<Tensor>& snapshots,
                               const Tensor& Wq, const Tensor& Wk, const Tensor& Wv, double scale,
                               AttnStats* stats = nullptr);

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  // --- parameter registry (registration order is the canonical order) ---
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const;
  const std::vector<std::string>& param_names() const { return order_; }
  bool is_trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);
  void freeze_all();
  std::vector<std::string> trainable_names() const;
  std::int64_t count(const std::vector<std::string>& names) const;
  std::int64_t count_all() const;
  std::int64_t count_trainable() const;
  void zero_grads();

  // --- task lifecycle ---
  int tasks() const { return static_cast<int>(head_classes_.size()); }
  int expansions() const { return expansions_; }
  std::int64_t head_classes(int task) const;
  std::int64_t class_offset(int task) const;  // first global class of this head
  std::int64_t classes_total() const;

  int add_task_head(std::int64_t classes);
  // Marks the full backbone plus the newest head trainable (task-0 regime).
  std::vector<std::string> set_task0_trainable();
  // Baseline regime (no mechanisms): every block MLP plus the newest head.
  std::vector<std::string> set_baseline_trainable();
  // Adds task-n adapters (+ head + cross-task attention), freezes everything
  // else, returns the exact trainable name list.
  std::vector<std::string> expand_for_task(std::int64_t new_classes);
  // Declares the current task's training finished (gates the next expansion).
  void complete_task();
  // Classifier-only fine-tuning regime: all heads trainable, everything else
  // frozen.
  std::vector<std::string> set_heads_only_trainable();

  // names of the adapter/cross-task-attention parameters of one task
  std::vector<std::string> expansion_param_names(int task) const;

  // --- forward ---
  Tensor tokens_from_clip(const VideoClip& clip) const;  // patchify + embed + positions + cls
  FeatureBundle forward(const VideoClip& clip, const ForwardOptions& opt = {}) const;

  Tensor classify_branch(const Tensor& feature, int task) const;  // head_task(feature)
  Tensor classify_all(const Tensor& feature) const;               // all heads, concatenated

 private:
  Tensor& add_param(const std::string& name, Shape shape, int init_kind, double limit = 0.0);
  void ensure_cta_params();
  int effective_limit(const ForwardOptions& opt) const;

  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> params_;
  std::unordered_map<std::string, bool> trainable_;
  std::vector<std::int64_t> head_classes_;
  std::map<int, std::vector<std::string>> expansion_added_;  // per task: adapter + attention names
  int expansions_ = 0;
  bool task_open_ = false;  // expansion pending training completion
};

// L_D of the expansion step: KL between the task-n head logits of the adapted
// forward and the (detached) forward without the task-n adapters, averaged
// over the batch.
Tensor distill_loss(const Model& model, const std::vector<VideoClip>& batch);

}  // namespace csta
