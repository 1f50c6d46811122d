#include "csta/causal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "csta/ops.hpp"

namespace csta {
namespace {

constexpr double kRatioFloor = 1e-8;

double cosd(const std::vector<double>& a, const std::vector<double>& b) {
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
  if (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

const std::vector<double>& branch_relation(const CacheEntry& e, char branch) {
  if (branch == 'S') return e.R_S;
  if (branch == 'T') return e.R_T;
  throw std::invalid_argument(std::string("unknown branch '") + branch + "'");
}

const std::vector<double>& branch_benefit(const CacheEntry& e, char branch) {
  if (branch == 'S') return e.benefit_S;
  if (branch == 'T') return e.benefit_T;
  throw std::invalid_argument(std::string("unknown branch '") + branch + "'");
}

TopkResult topk_generic(const RelationCache& cache, const std::vector<double>& query, int K,
                        const std::function<const std::vector<double>&(const CacheEntry&)>& key) {
  if (K < 1) throw std::invalid_argument("top-k: K must be >= 1");
  if (cache.entries.empty()) throw std::invalid_argument("top-k: empty cache");
  std::vector<std::size_t> order(cache.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> sims(cache.entries.size());
  for (std::size_t i = 0; i < cache.entries.size(); ++i)
    sims[i] = cosd(key(cache.entries[i]), query);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return cache.entries[a].sample_id < cache.entries[b].sample_id;
  });
  TopkResult out;
  out.truncated_warning = static_cast<std::size_t>(K) > cache.entries.size();
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(K),
                                                 cache.entries.size());
  for (std::size_t i = 0; i < take; ++i) {
    out.index.push_back(order[i]);
    out.sims.push_back(sims[order[i]]);
  }
  return out;
}

}  // namespace

RelationPair compute_relation(const Tensor& logits_S, const Tensor& logits_T,
                              const Tensor& logits_F) {
  if (logits_S.shape() != logits_F.shape() || logits_T.shape() != logits_F.shape()) {
    throw std::invalid_argument("relation: logit shapes " + shape_str(logits_S.shape()) + ", " +
                                shape_str(logits_T.shape()) + ", " + shape_str(logits_F.shape()) +
                                " differ");
  }
  Tensor probs_F = clamp_min(softmax(logits_F), kRatioFloor);
  Tensor ratio_S = div(clamp_min(softmax(logits_S), kRatioFloor), probs_F);
  Tensor ratio_T = div(clamp_min(softmax(logits_T), kRatioFloor), probs_F);
  bool warn = false;
  Tensor cos = cosine_similarity(logits_S, logits_T, &warn);
  Tensor cos_row = reshape(cos, {1});
  RelationPair out;
  out.R_S = concat(std::vector<Tensor>{ratio_S, cos_row}, 0);
  out.R_T = concat(std::vector<Tensor>{ratio_T, cos_row}, 0);
  out.cos_zero_warning = warn;
  return out;
}

Tensor naive_recovery_loss(const Tensor& R_prev, const Tensor& R_cur, bool* zero_warning) {
  bool warn = false;
  Tensor cos = cosine_similarity(R_prev, R_cur, &warn);
  if (zero_warning) *zero_warning = warn;
  return add_scalar(neg(cos), 1.0);
}

HybridLoss hybrid_recovery_loss(const RelationPair& mixed, const RelationPair& current) {
  HybridLoss out;
  bool warn_s = false, warn_t = false;
  out.L_S = naive_recovery_loss(mixed.R_S, current.R_S, &warn_s);
  out.L_T = naive_recovery_loss(mixed.R_T, current.R_T, &warn_t);
  out.zero_warning = warn_s || warn_t;
  return out;
}

int RelationCache::count_for_class(int class_id) const {
  int c = 0;
  for (const CacheEntry& e : entries) c += (e.class_id == class_id) ? 1 : 0;
  return c;
}

bool cache_add_sample(RelationCache& cache, const Model& model, std::int64_t sample_id,
                      int class_id, const VideoClip& clip) {
  if (model.tasks() == 0) throw std::logic_error("relation cache: model has no head yet");
  if (cache.head_task < 0) cache.head_task = model.tasks() - 1;
  if (cache.count_for_class(class_id) >= cache.capacity_per_class) return false;

  NoGradGuard ng;
  FeatureBundle out = model.forward(clip);
  Tensor clf_F = model.classify_branch(out.feat, cache.head_task);
  Tensor clf_S = model.classify_branch(out.spatial, cache.head_task);
  Tensor clf_T = model.classify_branch(out.temporal, cache.head_task);
  RelationPair rel = compute_relation(clf_S, clf_T, clf_F);

  CacheEntry e;
  e.sample_id = sample_id;
  e.class_id = class_id;
  e.R_S = rel.R_S.values();
  e.R_T = rel.R_T.values();
  e.clf_S = clf_S.values();
  e.clf_T = clf_T.values();
  e.benefit_T.resize(e.clf_T.size());
  e.benefit_S.resize(e.clf_S.size());
  for (std::size_t i = 0; i < e.clf_T.size(); ++i) {
    e.benefit_T[i] = clf_F.at(static_cast<std::int64_t>(i)) - e.clf_T[i];
    e.benefit_S[i] = clf_F.at(static_cast<std::int64_t>(i)) - e.clf_S[i];
  }
  e.S_feat = out.spatial.values();
  e.T_feat = out.temporal.values();
  cache.entries.push_back(std::move(e));
  return true;
}

TopkResult topk_select(const RelationCache& cache, const std::vector<double>& query, int K,
                       char branch) {
  return topk_generic(cache, query, K,
                      [branch](const CacheEntry& e) -> const std::vector<double>& {
                        return branch_relation(e, branch);
                      });
}

std::vector<double> softmax_weights(const std::vector<double>& sims) {
  if (sims.empty()) return {};
  const double mx = *std::max_element(sims.begin(), sims.end());
  std::vector<double> out(sims.size());
  double sum = 0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    out[i] = std::exp(sims[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

Tensor mix_branch_logits(const RelationCache& cache, const TopkResult& picks, char branch) {
  if (picks.index.empty()) throw std::invalid_argument("mix: no candidates");
  const std::vector<double>& first =
      branch == 'S' ? cache.entries[picks.index[0]].clf_S : cache.entries[picks.index[0]].clf_T;
  if (branch != 'S' && branch != 'T') {
    throw std::invalid_argument(std::string("unknown branch '") + branch + "'");
  }
  const std::int64_t width = static_cast<std::int64_t>(first.size());
  std::vector<double> mixed(first.size(), 0.0);
  for (std::size_t k = 0; k < picks.index.size(); ++k) {
    const CacheEntry& e = cache.entries[picks.index[k]];
    const std::vector<double>& logits = branch == 'S' ? e.clf_S : e.clf_T;
    for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] += picks.sims[k] * logits[i];
  }
  return Tensor::from_values({width}, std::move(mixed));
}

double mapping_influence_factor(const std::vector<double>& grad_num,
                                const std::vector<double>& grad_den, double eps,
                                bool* zero_warning) {
  if (grad_num.size() != grad_den.size()) {
    throw std::invalid_argument("influence factor: gradient lengths " +
                                std::to_string(grad_num.size()) + " and " +
                                std::to_string(grad_den.size()) + " differ");
  }
  double nn = 0, nd = 0;
  for (std::size_t i = 0; i < grad_num.size(); ++i) {
    nn += grad_num[i] * grad_num[i];
    nd += grad_den[i] * grad_den[i];
  }
  nn = std::sqrt(nn);
  nd = std::sqrt(nd);
  if (zero_warning) *zero_warning = false;
  if (nd < eps) {
    if (zero_warning) *zero_warning = true;
    return 0.0;
  }
  return (nn / nd) * cosd(grad_num, grad_den);
}

Compensation compensation_effect(const RelationCache& cache, const Model& model,
                                 const std::vector<double>& query_benefit, char branch,
                                 double alpha, int K1, bool normalize) {
  Compensation comp;
  if (cache.entries.empty()) {
    comp.empty_cache_warning = true;
    comp.effect = Tensor::zeros({model.classes_total()});
    return comp;
  }
  comp.picks = topk_generic(cache, query_benefit, K1,
                            [branch](const CacheEntry& e) -> const std::vector<double>& {
                              return branch_benefit(e, branch);
                            });
  std::vector<double> weights = normalize ? softmax_weights(comp.picks.sims) : comp.picks.sims;
  const std::size_t d = (branch == 'S' ? cache.entries[comp.picks.index[0]].S_feat
                                       : cache.entries[comp.picks.index[0]].T_feat)
                            .size();
  std::vector<double> premix(d, 0.0);
  double wsum = 0;
  for (std::size_t k = 0; k < comp.picks.index.size(); ++k) {
    const CacheEntry& e = cache.entries[comp.picks.index[k]];
    const std::vector<double>& feat = branch == 'S' ? e.S_feat : e.T_feat;
    for (std::size_t i = 0; i < d; ++i) premix[i] += weights[k] * feat[i];
    wsum += weights[k];
  }
  // Sum_k w_k * (W f_k + b) = W (Sum_k w_k f_k) + (Sum_k w_k) b; route the
  // weighted sum through the live heads so gradients reach them
  Tensor premix_t = Tensor::from_values({static_cast<std::int64_t>(d)}, std::move(premix));
  Tensor logits = model.classify_all(premix_t);
  std::vector<Tensor> biases;
  for (int t = 0; t < model.tasks(); ++t)
    biases.push_back(model.param("head" + std::to_string(t) + ".b"));
  Tensor b_all = biases.size() == 1 ? biases[0] : concat(biases, 0);
  comp.effect = mul_scalar(add(logits, mul_scalar(b_all, wsum - 1.0)), alpha);
  return comp;
}

Tensor combined_prediction(const Tensor& y_prime, const Tensor& E_S, const Tensor& E_T,
                           double lambda1, double lambda2) {
  if (E_S.shape() != y_prime.shape() || E_T.shape() != y_prime.shape()) {
    throw std::invalid_argument("combined prediction: shapes " + shape_str(y_prime.shape()) +
                                ", " + shape_str(E_S.shape()) + ", " + shape_str(E_T.shape()) +
                                " differ");
  }
  return add(y_prime, add(mul_scalar(E_S, lambda1), mul_scalar(E_T, lambda2)));
}

Tensor total_loss(const Tensor& l_ce, const Tensor& l_d, const Tensor& l_t, const Tensor& l_s,
                  double mu1, double mu2, double mu3) {
  if (mu1 < 0 || mu2 < 0 || mu3 < 0) {
    throw std::invalid_argument("loss weights must be nonnegative, got mu1=" +
                                std::to_string(mu1) + " mu2=" + std::to_string(mu2) +
                                " mu3=" + std::to_string(mu3));
  }
  for (const Tensor* t : {&l_ce, &l_d, &l_t, &l_s}) {
    if (t->numel() != 1) throw std::invalid_argument("loss terms must be scalars");
  }
  return add(add(add(l_ce, mul_scalar(l_d, mu1)), mul_scalar(l_t, mu2)), mul_scalar(l_s, mu3));
}

void dump_relations_csv(const RelationCache& cache, int task, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# schema: relation-dump/1\n";
  const std::size_t width = cache.entries.empty() ? 0 : cache.entries[0].R_S.size();
  out << "sample_id,task";
  for (std::size_t i = 0; i < width; ++i) out << ",r_s_" << i;
  for (std::size_t i = 0; i < width; ++i) out << ",r_t_" << i;
  out << "\n";
  char buf[40];
  for (const CacheEntry& e : cache.entries) {
    out << e.sample_id << "," << task;
    for (double v : e.R_S) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      out << "," << buf;
    }
    for (double v : e.R_T) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      out << "," << buf;
    }
    out << "\n";
  }
}

}  // namespace csta
