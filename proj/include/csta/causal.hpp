#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csta/clip.hpp"
#include "csta/model.hpp"
#include "csta/tensor.hpp"

namespace csta {

// R_S = concat(softmax(Clf(S)) / softmax(Clf(F)) with an 1e-8 floor,
//              cos<Clf(S), Clf(T)>), and R_T likewise; length = classes + 1.
struct RelationPair {
  Tensor R_S, R_T;
  bool cos_zero_warning = false;  // a branch logit vector had zero norm
};

RelationPair compute_relation(const Tensor& logits_S, const Tensor& logits_T,
                              const Tensor& logits_F);

// 1 - cos(R_prev, R_cur); zero-norm inputs give loss 1 with a warning.
Tensor naive_recovery_loss(const Tensor& R_prev, const Tensor& R_cur,
                           bool* zero_warning = nullptr);

// L_S = 1 - cos(R_S^K, R_S), L_T = 1 - cos(R_T^K, R_T); reduces to the naive
// loss for a single unit-similarity candidate.
struct HybridLoss {
  Tensor L_S, L_T;
  bool zero_warning = false;
};

HybridLoss hybrid_recovery_loss(const RelationPair& mixed, const RelationPair& current);

// One cached sample, everything evaluated under the frozen previous-task
// model and its newest head.
struct CacheEntry {
  std::int64_t sample_id = 0;
  int class_id = 0;
  std::vector<double> R_S, R_T;        // relation vectors
  std::vector<double> clf_S, clf_T;    // branch logits (mixing, Eq-8 style)
  std::vector<double> benefit_T;       // Clf(F) - Clf(T): picks temporal compensation
  std::vector<double> benefit_S;       // Clf(F) - Clf(S): picks spatial compensation
  std::vector<double> S_feat, T_feat;  // branch features, for current-head mixing
};

// Write-once pool gathered at task start, read-only afterwards.
struct RelationCache {
  int capacity_per_class = 32;
  int head_task = -1;  // head that produced the stored logits
  std::vector<CacheEntry> entries;

  int count_for_class(int class_id) const;
};

// Runs the model (in its pre-expansion state) on one sample and stores its
// relations, branch logits, benefits and features. Returns false when the
// class already holds capacity_per_class entries.
bool cache_add_sample(RelationCache& cache, const Model& model, std::int64_t sample_id,
                      int class_id, const VideoClip& clip);

struct TopkResult {
  std::vector<std::size_t> index;  // positions into cache.entries
  std::vector<double> sims;        // cosine similarity weights, same order
  bool truncated_warning = false;  // K exceeded the cache size
};

// K entries whose stored branch relation ('S' or 'T') is most cosine-similar
// to the query vector; ties prefer the lower sample id.
TopkResult topk_select(const RelationCache& cache, const std::vector<double>& query, int K,
                       char branch);

// optional softmax normalization of similarity weights (config switch)
std::vector<double> softmax_weights(const std::vector<double>& sims);

// Sum_k sim_k * stored branch logits of candidate k (unnormalized weights).
Tensor mix_branch_logits(const RelationCache& cache, const TopkResult& picks, char branch);

// alpha = (|grad_num| / |grad_den|) * cos(grad_num, grad_den); zero denominator
// norm gives 0 with a warning.
double mapping_influence_factor(const std::vector<double>& grad_num,
                                const std::vector<double>& grad_den, double eps = 1e-12,
                                bool* zero_warning = nullptr);

struct Compensation {
  Tensor effect;  // width = model.classes_total()
  TopkResult picks;
  bool empty_cache_warning = false;
};

// E = alpha * Sum_k sim_k * Clf_all(feat_k), candidates picked by cosine
// similarity between stored and query benefit vectors. branch 'T' selects by
// benefit_T and mixes temporal features; 'S' is the mirror image. Gradients
// flow into the classifier heads.
Compensation compensation_effect(const RelationCache& cache, const Model& model,
                                 const std::vector<double>& query_benefit, char branch,
                                 double alpha, int K1, bool normalize = false);

// Y = Y' + lambda1 * E_S + lambda2 * E_T
Tensor combined_prediction(const Tensor& y_prime, const Tensor& E_S, const Tensor& E_T,
                           double lambda1, double lambda2);

// L = L_CE + mu1 * L_D + mu2 * L_T + mu3 * L_S; negative factors rejected.
Tensor total_loss(const Tensor& l_ce, const Tensor& l_d, const Tensor& l_t, const Tensor& l_s,
                  double mu1, double mu2, double mu3);

// relation dump: one row per cached sample (schema relation-dump/1)
void dump_relations_csv(const RelationCache& cache, int task, const std::string& path);

}  // namespace csta
