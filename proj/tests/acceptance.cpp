// Acceptance suite: one check per shipped guarantee, one PASS/FAIL line each.
// Criterion 6 is informational (REPORT) and never fails the process.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csta/analyzer.hpp"
#include "csta/causal.hpp"
#include "csta/datagen.hpp"
#include "csta/fd_check.hpp"
#include "csta/harness.hpp"
#include "csta/model.hpp"
#include "csta/ops.hpp"
#include "csta/rng.hpp"

using namespace csta;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool report_only = false;
};

Tensor rnd(Shape shape, SplitMix64& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

VideoClip noise_clip(std::uint64_t seed, std::int64_t frames, std::int64_t size) {
  SplitMix64 rng(seed);
  VideoClip clip;
  clip.frames = frames;
  clip.height = clip.width = size;
  clip.pixels.resize(static_cast<std::size_t>(frames * size * size));
  for (double& v : clip.pixels) v = rng.uniform();
  return clip;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.embed_dim = 4;
  c.heads = 2;
  c.blocks = 2;
  c.frames = 2;
  c.frame_size = 4;
  c.patch_size = 2;
  c.bottleneck = 2;
  return c;
}

ModelConfig small_model() {
  ModelConfig c;
  c.embed_dim = 16;
  c.heads = 2;
  c.blocks = 1;
  c.frames = 4;
  c.frame_size = 16;
  c.patch_size = 8;
  c.bottleneck = 4;
  return c;
}

CorpusConfig small_corpus() {
  CorpusConfig c;
  c.frames = 4;
  c.frame_size = 16;
  c.classes = 4;
  c.train_per_class = 6;
  c.test_per_class = 3;
  c.seed = 11;
  return c;
}

TrainConfig small_train() {
  TrainConfig t;
  t.epochs = 1;
  t.finetune_epochs = 1;
  t.exemplars_per_class = 2;
  t.batch_size = 4;
  t.cache_capacity = 4;
  t.probe_batch = 6;
  t.k = 2;
  t.k1 = 2;
  t.seed = 5;
  return t;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------- criterion 1

struct FdHarness {
  int instances = 0;
  int failures = 0;
  std::map<std::string, int> failed_by;

  // Losses with a detached side (distillation teacher, probe target) keep
  // that side fixed by construction, so their oracle re-evaluates against
  // frozen copies of it; everywhere else both functions are the same.
  void check_split(const std::string& label, std::vector<Tensor> params,
                   const std::function<Tensor()>& taped, const std::function<Tensor()>& oracle,
                   double rtol, double atol = 1e-6) {
    tape().clear();
    for (Tensor& p : params) p.zero_grad();
    Tensor loss = taped();
    backward(loss);
    bool ok = true;
    for (Tensor& p : params) {
      std::vector<double> got =
          p.has_grad() ? p.grad() : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0);
      ok = ok && grads_close(got, fd_grad(p, oracle), rtol, atol);
    }
    ++instances;
    if (!ok) {
      ++failures;
      ++failed_by[label];
    }
    tape().clear();
  }

  void check(const std::string& label, std::vector<Tensor> params,
             const std::function<Tensor()>& fn, double rtol, double atol = 1e-6) {
    check_split(label, std::move(params), fn, fn, rtol, atol);
  }

  std::string failed_labels() const {
    std::string out;
    for (const auto& [label, count] : failed_by) {
      out += " " + label + "x" + std::to_string(count);
    }
    return out;
  }
};

Outcome criterion1() {
  const auto start = std::chrono::steady_clock::now();
  FdHarness fd;
  SplitMix64 rng(1001);

  // tensor-level coverage of every differentiable primitive, dims <= 8
  for (int s = 0; s < 4; ++s) {
    const std::int64_t n = 2 + rng.uniform_int(7);  // vector length
    const std::int64_t r = 2 + rng.uniform_int(3);  // rows
    const std::int64_t c = 2 + rng.uniform_int(3);  // cols
    {
      Tensor a = rnd({r, c}, rng), b = rnd({r, c}, rng);
      fd.check("add", {a, b}, [=] { return sum_all(add(a, b)); }, 1e-4);
      fd.check("sub", {a, b}, [=] { return sum_all(sub(a, b)); }, 1e-4);
      fd.check("mul", {a, b}, [=] { return sum_all(mul(a, b)); }, 1e-4);
    }
    {
      Tensor a = rnd({n}, rng), b = rnd({n}, rng, 0.5, 2.0);
      fd.check("div", {a, b}, [=] { return sum_all(div(a, b)); }, 1e-4);
    }
    {
      Tensor a = rnd({n}, rng);
      fd.check("add_scalar", {a}, [=] { return sum_all(add_scalar(a, 0.7)); }, 1e-4);
      fd.check("mul_scalar", {a}, [=] { return sum_all(mul_scalar(a, -1.3)); }, 1e-4);
      fd.check("neg", {a}, [=] { return sum_all(neg(a)); }, 1e-4);
      fd.check("mean_all", {a}, [=] { return mean_all(a); }, 1e-4);
      fd.check("gelu", {a}, [=] { return sum_all(gelu(a)); }, 1e-4);
      fd.check("softmax", {a}, [=] { return sum_all(softmax(a)); }, 1e-4);
    }
    {
      Tensor a = rnd({r, c}, rng), b = rnd({c, r}, rng);
      fd.check("matmul", {a, b}, [=] { return sum_all(matmul(a, b)); }, 1e-4);
      fd.check("transpose", {a}, [=] { return sum_all(transpose(a)); }, 1e-4);
      fd.check("reshape", {a}, [=] { return sum_all(reshape(a, {c, r})); }, 1e-4);
      fd.check("concat", {a, b}, [=] { return sum_all(concat({a, transpose(b)}, 0)); }, 1e-4);
      fd.check("gather_rows", {a}, [=] { return sum_all(gather_rows(a, {0, r - 1, 0})); }, 1e-4);
      fd.check("slice_cols", {a}, [=] { return sum_all(slice_cols(a, 1, c - 1)); }, 1e-4);
      fd.check("mean_axis0", {a}, [=] { return sum_all(mean_axis0(a)); }, 1e-4);
    }
    {
      Tensor p = rnd({n}, rng, 0.5, 2.0);
      fd.check("log", {p}, [=] { return sum_all(log(p)); }, 1e-4);
      fd.check("sqrt", {p}, [=] { return sum_all(sqrt(p)); }, 1e-4);
      Tensor q = rnd({n}, rng, 0.2, 2.0);  // keep clear of the clamp kink
      fd.check("clamp_min", {q}, [=] { return sum_all(clamp_min(q, 0.1)); }, 1e-4);
    }
    {
      Tensor x = rnd({r, c}, rng), g = rnd({c}, rng, 0.5, 1.5), b = rnd({c}, rng);
      fd.check("layernorm", {x, g, b}, [=] { return sum_all(layernorm(x, g, b)); }, 1e-4);
    }
    {
      Tensor logits = rnd({n}, rng);
      const std::int64_t label = rng.uniform_int(n);
      fd.check("cross_entropy", {logits}, [=] { return cross_entropy(logits, label); }, 1e-4);
      Tensor q = rnd({n}, rng);
      fd.check("kl", {logits, q}, [=] { return kl_divergence(logits, q); }, 1e-4);
      Tensor a = rnd({n}, rng), b = rnd({n}, rng);
      fd.check("cosine", {a, b}, [=] { return cosine_similarity(a, b); }, 1e-4);
      Tensor s0 = rnd({}, rng), s1 = rnd({}, rng), s2 = rnd({}, rng);
      fd.check("mean_scalars", {s0, s1, s2}, [=] { return mean_scalars({s0, s1, s2}); }, 1e-4);
    }
    {
      // attention primitives at 2 frames x 2 patches, embed 4, 2 heads
      Tensor tokens = rnd({5, 4}, rng, -0.8, 0.8);
      MsaWeights w{rnd({4, 4}, rng, -0.5, 0.5), rnd({4, 4}, rng, -0.5, 0.5),
                   rnd({4, 4}, rng, -0.5, 0.5), rnd({4, 4}, rng, -0.5, 0.5)};
      fd.check("msa_temporal", {tokens, w.Wq, w.Wk, w.Wv, w.Wo},
               [=] { return sum_all(msa_temporal(tokens, w, 2, 2, 2)); }, 1e-3);
      fd.check("msa_spatial", {tokens, w.Wq, w.Wk, w.Wv, w.Wo},
               [=] { return sum_all(msa_spatial(tokens, w, 2, 2, 2)); }, 1e-3);
      Tensor F0 = rnd({5, 4}, rng, -0.8, 0.8);
      Tensor W1 = rnd({4, 2}, rng, -0.5, 0.5), W2 = rnd({2, 4}, rng, -0.5, 0.5);
      fd.check("adapt_msa", {F0, W1, W2}, [=] { return sum_all(adapt_msa(F0, {{W1, W2}})); }, 1e-3);
      Tensor snap = rnd({5, 4}, rng, -0.8, 0.8);
      fd.check("cta", {tokens, snap, w.Wq, w.Wk, w.Wv},
               [=] { return sum_all(cross_task_attend(tokens, {snap}, w.Wq, w.Wk, w.Wv, 0.5)); },
               1e-3);
    }
  }

  // recovery losses at the tensor level (relation pipeline end to end)
  for (int s = 0; s < 6; ++s) {
    const std::int64_t n = 3 + rng.uniform_int(4);
    Tensor S = rnd({n}, rng), T = rnd({n}, rng), F = rnd({n}, rng);
    Tensor SK = rnd({n}, rng), TK = rnd({n}, rng);
    fd.check("naive_recovery", {S, T, F},
             [=] {
               RelationPair p = compute_relation(S, T, F);
               return naive_recovery_loss(p.R_S, p.R_T);
             },
             1e-3);
    fd.check("hybrid_recovery", {S, T, F, SK, TK},
             [=] {
               HybridLoss h =
                   hybrid_recovery_loss(compute_relation(SK, TK, F), compute_relation(S, T, F));
               return add(h.L_S, h.L_T);
             },
             1e-3);
  }

  // composite losses through the tiny backbone
  for (int s = 0; s < 3; ++s) {
    Model m(tiny_model(), 500 + static_cast<std::uint64_t>(s));
    m.add_task_head(3);
    m.set_task0_trainable();
    VideoClip clip = noise_clip(600 + static_cast<std::uint64_t>(s), 2, 4);
    auto ce = [&m, clip] { return cross_entropy(m.forward(clip).all_logits, 1); };
    fd.check("model_ce", {m.param("head0.W"), m.param("block0.mlp.W1"), m.param("embed.W")}, ce, 1e-3);

    m.complete_task();
    m.expand_for_task(2);
    SplitMix64 prng(700 + static_cast<std::uint64_t>(s));
    for (const std::string& name : m.expansion_param_names(1)) {
      if (name.find(".ad_") == std::string::npos) continue;
      for (double& v : m.param(name).values()) v = prng.uniform(-0.3, 0.3);
    }
    m.param("cta.gate").values()[0] = prng.uniform(-0.5, 0.5);

    std::vector<VideoClip> batch = {clip, noise_clip(800 + static_cast<std::uint64_t>(s), 2, 4)};
    auto held_logits = [&m, &batch](const ForwardOptions& opt, bool head_only) {
      NoGradGuard hold;
      std::vector<std::vector<double>> vals;
      for (const VideoClip& cl : batch) {
        FeatureBundle fb = m.forward(cl, opt);
        vals.push_back(head_only ? fb.head_logits[1].values() : fb.all_logits.values());
      }
      return vals;
    };
    auto as_tensor = [](const std::vector<double>& v) {
      return Tensor::from_values({static_cast<std::int64_t>(v.size())}, v);
    };

    ForwardOptions teacher_opt;
    teacher_opt.adapters_limit = m.expansions() - 1;
    const auto teacher_vals = held_logits(teacher_opt, true);
    auto ld = [&m, batch] { return distill_loss(m, batch); };
    auto ld_held = [&m, &batch, &teacher_vals, &as_tensor] {
      std::vector<Tensor> terms;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        terms.push_back(
            kl_divergence(m.forward(batch[i]).head_logits[1], as_tensor(teacher_vals[i])));
      }
      return mean_scalars(terms);
    };
    fd.check_split("distill",
                   {m.param("block0.ad_t.task1.W1"), m.param("block1.ad_s.task1.W2"),
                    m.param("cta.Wq"), m.param("head1.W")},
                   ld, ld_held, 1e-3);

    // probe objectives, all four directions
    for (ProbeDirection dir : {ProbeDirection::Increment, ProbeDirection::Memorization}) {
      for (ProbeBranch br : {ProbeBranch::Spatial, ProbeBranch::Temporal}) {
        ProbeConfig pc{dir, br, false};
        auto po = [&m, pc, batch] { return probe_objective(m, pc, batch); };
        const auto target_vals = held_logits(probe_target_options(pc), false);
        auto po_held = [&m, &batch, &target_vals, &as_tensor, pc] {
          std::vector<Tensor> terms;
          for (std::size_t i = 0; i < batch.size(); ++i) {
            Tensor source = m.forward(batch[i], probe_source_options(pc)).all_logits;
            terms.push_back(kl_divergence(as_tensor(target_vals[i]), source));
          }
          return mean_scalars(terms);
        };
        const char* ad =
            br == ProbeBranch::Spatial ? "block0.ad_s.task1.W1" : "block0.ad_t.task1.W1";
        fd.check_split("probe_objective", {m.param(ad), m.param("cta.gate")}, po, po_held, 1e-3);
      }
    }

    // compensation effect routes gradients into the live heads
    m.set_heads_only_trainable();
    RelationCache cache;
    SplitMix64 crng(900 + static_cast<std::uint64_t>(s));
    for (int i = 0; i < 6; ++i) {
      CacheEntry e;
      e.sample_id = i;
      e.class_id = i % 2;
      for (int j = 0; j < 3; ++j) e.benefit_T.push_back(crng.uniform(-1, 1));
      e.benefit_S = e.benefit_T;
      for (int j = 0; j < 4; ++j) {
        e.S_feat.push_back(crng.uniform(-1, 1));
        e.T_feat.push_back(crng.uniform(-1, 1));
      }
      cache.entries.push_back(e);
    }
    std::vector<double> query = {crng.uniform(-1, 1), crng.uniform(-1, 1), crng.uniform(-1, 1)};
    auto comp = [&m, &cache, query] {
      return sum_all(compensation_effect(cache, m, query, 'T', 0.8, 3).effect);
    };
    fd.check("compensation", {m.param("head0.W"), m.param("head1.b")}, comp, 1e-3);
  }

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream os;
  os << fd.instances << " instances, " << fd.failures << " failures"
     << (fd.failures ? " (" + fd.failed_labels() + " )" : "") << ", " << std::fixed
     << std::setprecision(1) << secs << "s";
  return {fd.failures == 0 && fd.instances >= 100 && secs < 120.0, os.str()};
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion2() {
  ModelConfig cfg;  // default backbone
  Model plain(cfg, 7);
  plain.add_task_head(4);
  plain.complete_task();
  Model expanded(cfg, 7);  // same seed -> identical base weights
  expanded.add_task_head(4);
  expanded.complete_task();
  expanded.expand_for_task(3);

  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    VideoClip clip = noise_clip(4000 + static_cast<std::uint64_t>(i), cfg.frames, cfg.frame_size);
    NoGradGuard ng;
    FeatureBundle a = plain.forward(clip);
    FeatureBundle b = expanded.forward(clip);
    const bool same = bits_equal(a.head_logits[0].values(), b.head_logits[0].values()) &&
                      bits_equal(a.feat.values(), b.feat.values()) &&
                      bits_equal(a.spatial.values(), b.spatial.values()) &&
                      bits_equal(a.temporal.values(), b.temporal.values());
    if (!same) ++mismatches;
  }
  std::ostringstream os;
  os << "100 clips, " << mismatches << " mismatches";
  return {mismatches == 0, os.str()};
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion3() {
  Corpus corpus = make_corpus(small_corpus());
  TaskStream stream = make_task_stream(4, 2, "balanced", 3);
  TrainConfig cfg = small_train();

  Model model(small_model(), 77);
  model.add_task_head(2);
  model.set_task0_trainable();
  run_task(model, corpus, stream, 0, cfg);
  model.complete_task();
  RelationCache cache = populate_cache(model, corpus, stream, 1, cfg);
  model.expand_for_task(2);

  std::map<std::string, std::vector<double>> before;
  for (const std::string& n : model.param_names()) before[n] = model.param(n).values();
  const std::vector<std::string> open = model.trainable_names();

  run_task(model, corpus, stream, 1, cfg, &cache);  // one full epoch

  int frozen_diffs = 0;
  for (const std::string& n : model.param_names()) {
    if (std::find(open.begin(), open.end(), n) != open.end()) continue;
    if (!bits_equal(model.param(n).values(), before[n])) ++frozen_diffs;
  }

  model.complete_task();
  std::map<std::string, std::vector<double>> pre_ft;
  for (const std::string& n : model.param_names()) pre_ft[n] = model.param(n).values();
  finetune_classifier(model, corpus, stream, 1, cfg);
  int nonhead_diffs = 0;
  for (const std::string& n : model.param_names()) {
    if (n.rfind("head", 0) == 0) continue;
    if (!bits_equal(model.param(n).values(), pre_ft[n])) ++nonhead_diffs;
  }

  std::ostringstream os;
  os << frozen_diffs << " frozen diffs after epoch, " << nonhead_diffs
     << " non-head diffs after finetune";
  return {frozen_diffs == 0 && nonhead_diffs == 0, os.str()};
}

// ---------------------------------------------------------------- criterion 4

// mirrors the library's accumulation order exactly, so sims compare bitwise
double oracle_cos(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

Outcome criterion4() {
  NoGradGuard ng_all;  // forward-only throughout; keeps the tape empty
  SplitMix64 rng(31337);
  Model m(tiny_model(), 55);
  m.add_task_head(3);
  m.complete_task();
  m.add_task_head(2);

  int bad = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    const std::int64_t entries = 1 + rng.uniform_int(64);
    const std::int64_t rel_len = 3 + rng.uniform_int(6);
    RelationCache cache;
    for (std::int64_t i = 0; i < entries; ++i) {
      CacheEntry e;
      e.sample_id = rng.uniform_int(100000);
      e.class_id = static_cast<int>(rng.uniform_int(7));
      for (std::int64_t j = 0; j < rel_len; ++j) {
        e.R_S.push_back(rng.uniform(-1, 1));
        e.R_T.push_back(rng.uniform(-1, 1));
        e.benefit_S.push_back(rng.uniform(-1, 1));
        e.benefit_T.push_back(rng.uniform(-1, 1));
      }
      for (int j = 0; j < 4; ++j) {
        e.S_feat.push_back(rng.uniform(-1, 1));
        e.T_feat.push_back(rng.uniform(-1, 1));
      }
      cache.entries.push_back(e);
    }
    std::vector<double> query(static_cast<std::size_t>(rel_len));
    for (double& v : query) v = rng.uniform(-1, 1);
    const int K = 1 + static_cast<int>(rng.uniform_int(entries + 3));
    const char branch = rng.uniform_int(2) == 0 ? 'S' : 'T';

    // exhaustive scan oracle: sort all similarities, ties by lower sample id
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < cache.entries.size(); ++i) {
      const auto& rel = branch == 'S' ? cache.entries[i].R_S : cache.entries[i].R_T;
      all.emplace_back(oracle_cos(rel, query), i);
    }
    std::sort(all.begin(), all.end(), [&](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return cache.entries[x.second].sample_id < cache.entries[y.second].sample_id;
    });
    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(K), cache.entries.size());
    TopkResult got = topk_select(cache, query, K, branch);
    bool ok = got.index.size() == take &&
              got.truncated_warning == (static_cast<std::size_t>(K) > cache.entries.size());
    for (std::size_t k = 0; ok && k < take; ++k) {
      ok = got.index[k] == all[k].second && got.sims[k] == all[k].first;
    }

    // compensation against a direct per-candidate weighted sum
    const double alpha = rng.uniform(-1, 1);
    const int K1 = 1 + static_cast<int>(rng.uniform_int(entries));
    std::vector<std::pair<double, std::size_t>> ben;
    for (std::size_t i = 0; i < cache.entries.size(); ++i) {
      const auto& bv = branch == 'S' ? cache.entries[i].benefit_S : cache.entries[i].benefit_T;
      ben.emplace_back(oracle_cos(bv, query), i);
    }
    std::sort(ben.begin(), ben.end(), [&](const auto& x, const auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return cache.entries[x.second].sample_id < cache.entries[y.second].sample_id;
    });
    Compensation comp = compensation_effect(cache, m, query, branch, alpha, K1);
    std::vector<double> expect(static_cast<std::size_t>(m.classes_total()), 0.0);
    for (int k = 0; k < K1; ++k) {
      const CacheEntry& e = cache.entries[ben[static_cast<std::size_t>(k)].second];
      Tensor logits =
          m.classify_all(Tensor::from_values({4}, branch == 'S' ? e.S_feat : e.T_feat));
      for (std::size_t i = 0; i < expect.size(); ++i) {
        expect[i] += ben[static_cast<std::size_t>(k)].first * logits.values()[i];
      }
    }
    for (std::size_t k = 0; ok && k < static_cast<std::size_t>(K1); ++k) {
      ok = comp.picks.index[k] == ben[k].second;
    }
    for (std::size_t i = 0; ok && i < expect.size(); ++i) {
      const double want = alpha * expect[i];
      const double scale = std::max(std::abs(want), std::abs(comp.effect.values()[i]));
      ok = std::abs(comp.effect.values()[i] - want) <= 1e-9 * std::max(scale, 1.0);
    }
    if (!ok) ++bad;
  }

  // metric oracles on a hand-worked accuracy matrix
  AccuracyMatrix fixed;
  for (double v : {0.9, 0.8, 0.7}) {
    fixed.acc.emplace_back(fixed.acc.size() + 1, v);
    fixed.pooled.push_back(v);
  }
  const bool metrics_ok = std::abs(bwf(fixed) - 0.15) < 1e-12 &&
                          std::abs(avg_acc(fixed) - 0.8) < 1e-12 &&
                          std::abs(avg_acc(fixed, true) - 0.85) < 1e-12;

  std::ostringstream os;
  os << "1000 caches, " << bad << " disagreements; metric oracles "
     << (metrics_ok ? "ok" : "WRONG");
  return {bad == 0 && metrics_ok, os.str()};
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion5() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path base = fs::path("acceptance_runs");
  fs::create_directories(base);

  ExperimentConfig naive;  // pinned defaults: 20 classes, 5 tasks, seed 42
  naive.out_dir = (base / "baseline").string();
  naive.train.sep_ada = false;
  naive.train.relation_recovery = false;
  naive.train.compensation = false;
  naive.train.finetune = false;
  RunResult rb = run_experiment(naive);

  ExperimentConfig adapters;
  adapters.out_dir = (base / "sepada").string();
  adapters.train.relation_recovery = false;
  adapters.train.compensation = false;
  RunResult ra = run_experiment(adapters);

  const double bwf_b = bwf(rb.matrix), bwf_a = bwf(ra.matrix);
  const double acc_b = rb.matrix.pooled.back(), acc_a = ra.matrix.pooled.back();
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const bool pass = bwf_b >= 0.30 && bwf_a <= 0.5 * bwf_b && acc_a > acc_b && secs < 1800.0;
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << "baseline BWF " << bwf_b << " AccN " << acc_b
     << "; adapters BWF " << bwf_a << " AccN " << acc_a << "; " << std::setprecision(0) << secs
     << "s";
  return {pass, os.str()};
}

// ---------------------------------------------------------------- criterion 6

Outcome criterion6() {
  ModelConfig model;
  model.embed_dim = 32;
  model.heads = 4;
  model.blocks = 2;
  model.frames = 8;
  model.frame_size = 16;
  model.patch_size = 8;
  model.bottleneck = 8;

  CorpusConfig corpus;
  corpus.frames = 8;
  corpus.frame_size = 16;
  corpus.classes = 12;
  corpus.train_per_class = 15;
  corpus.test_per_class = 5;

  const std::vector<std::pair<std::string, std::pair<bool, bool>>> variants = {
      {"full", {true, true}},
      {"rr-only", {true, false}},
      {"cc-only", {false, true}},
      {"sepada-only", {false, false}},
  };
  std::map<std::string, std::vector<double>> acc_n;
  const std::vector<std::uint64_t> seeds = {42, 43, 44};

  for (std::uint64_t seed : seeds) {
    for (const auto& [name, flags] : variants) {
      ExperimentConfig cfg;
      cfg.seed = seed;
      cfg.model = model;
      cfg.corpus = corpus;
      cfg.corpus.seed = seed;
      cfg.tasks = 3;
      cfg.train.seed = seed;
      cfg.train.epochs = 3;
      cfg.train.probe_batch = 32;
      cfg.train.relation_recovery = flags.first;
      cfg.train.compensation = flags.second;
      cfg.out_dir =
          (fs::path("acceptance_runs") / ("ablate_" + name + "_s" + std::to_string(seed)))
              .string();
      RunResult r = run_experiment(cfg);
      acc_n[name].push_back(r.matrix.pooled.back());
    }
  }

  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const double m_full = mean(acc_n["full"]), m_rr = mean(acc_n["rr-only"]),
               m_cc = mean(acc_n["cc-only"]), m_sep = mean(acc_n["sepada-only"]);
  int full_best = 0;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const double f = acc_n["full"][s];
    if (f > acc_n["rr-only"][s] && f > acc_n["cc-only"][s] && f > acc_n["sepada-only"][s]) {
      ++full_best;
    }
  }
  const bool ordering = m_full >= m_rr && m_full >= m_cc && m_rr >= m_sep && m_cc >= m_sep;

  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << "mean AccN full " << m_full << ", rr " << m_rr
     << ", cc " << m_cc << ", sepada " << m_sep << "; full strictly best on " << full_best
     << "/3 seeds; ordering " << (ordering && full_best >= 2 ? "holds" : "violated")
     << " (informational)";
  return {true, os.str(), true};
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion7() {
  ModelConfig cfg;  // default backbone
  Model m(cfg, 42);
  m.add_task_head(4);
  m.set_task0_trainable();
  const std::int64_t task0 = m.count_trainable();
  m.complete_task();
  m.expand_for_task(4);
  const std::int64_t task1 = m.count_trainable();

  // closed-form count of one expansion: two adapters per block (no biases),
  // shared single-head attention with gate, and the new head
  const std::int64_t d = cfg.embed_dim, bn = cfg.bneck();
  const std::int64_t analytic =
      cfg.blocks * 2 * (d * bn + bn * d) + (3 * d * d + 1) + (4 * d + 4);

  BudgetReport report = account(m, 0);
  const bool pass = task1 < task0 && task1 == analytic &&
                    report.per_task[1].trainable == analytic &&
                    report.ratio == static_cast<double>(analytic) / static_cast<double>(task0);
  std::ostringstream os;
  os << "task0 " << task0 << ", task1 " << task1 << ", analytic " << analytic << ", ratio "
     << std::fixed << std::setprecision(4) << report.ratio;
  return {pass, os.str()};
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion8() {
  Model m(tiny_model(), 91);
  m.add_task_head(3);
  m.complete_task();
  m.expand_for_task(2);

  std::vector<VideoClip> batch = {noise_clip(9100, 2, 4), noise_clip(9101, 2, 4)};

  // zero-initialized adapters: objectives and gradients exactly zero
  bool zeros_ok = true;
  for (ProbeDirection dir : {ProbeDirection::Increment, ProbeDirection::Memorization}) {
    for (ProbeBranch br : {ProbeBranch::Spatial, ProbeBranch::Temporal}) {
      ProbeConfig pc{dir, br, false};
      zeros_ok = zeros_ok && probe_objective(m, pc, batch).item() == 0.0;
      GradientSnapshot g = probe_gradient(m, pc, batch);
      zeros_ok = zeros_ok && g.norm == 0.0;
    }
  }

  // perturb the adapters, then check cosine ranges and FD agreement
  SplitMix64 rng(9200);
  for (const std::string& n : m.trainable_names()) {
    if (n.find(".ad_") != std::string::npos || n == "cta.gate") {
      for (double& v : m.param(n).values()) v += rng.uniform(-0.3, 0.3);
    }
  }
  auto snaps = run_probes(m, batch, 3);
  CurvePoint point = pairwise_cosines(snaps);
  bool cos_ok = true;
  for (double c : point.cosines) cos_ok = cos_ok && c >= -1.0 && c <= 1.0 && std::isfinite(c);
  for (const std::string& l : point.labels) {
    cos_ok = cos_ok && (l == "cooperation" || l == "conflict" || l == "neutral");
  }

  // The probe gradient is the partial derivative with the KL target held
  // fixed, so the oracle freezes per-clip targets before differencing.
  ProbeConfig pc{ProbeDirection::Increment, ProbeBranch::Spatial, false};
  GradientSnapshot snap = probe_gradient(m, pc, batch);
  std::vector<std::vector<double>> held_targets;
  {
    NoGradGuard hold;
    for (const VideoClip& clip : batch) {
      held_targets.push_back(m.forward(clip, probe_target_options(pc)).all_logits.values());
    }
  }
  auto held_objective = [&] {
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Tensor target = Tensor::from_values({static_cast<std::int64_t>(held_targets[i].size())},
                                          held_targets[i]);
      Tensor source = m.forward(batch[i], probe_source_options(pc)).all_logits;
      terms.push_back(kl_divergence(target, source));
    }
    return mean_scalars(terms);
  };
  bool fd_ok = true;
  std::size_t offset = 0;
  for (const std::string& n : m.trainable_names()) {
    Tensor& p = m.param(n);
    const std::size_t len = static_cast<std::size_t>(p.numel());
    if (n == "block0.ad_s.task1.W1" || n == "block1.ad_s.task1.W2" || n == "cta.gate") {
      std::vector<double> got(snap.grad.begin() + static_cast<std::ptrdiff_t>(offset),
                              snap.grad.begin() + static_cast<std::ptrdiff_t>(offset + len));
      fd_ok = fd_ok && grads_close(got, fd_grad(p, held_objective), 1e-3, 1e-6);
    }
    offset += len;
  }
  fd_ok = fd_ok && offset == snap.grad.size();

  // deterministic CSV round trip
  RelationTracker tracker;
  tracker.record(point);
  auto snaps2 = run_probes(m, batch, 4);
  tracker.record(pairwise_cosines(snaps2));
  const fs::path dir = fs::temp_directory_path() / "csta_acceptance_curve";
  fs::create_directories(dir);
  tracker.write_csv((dir / "a.csv").string());
  std::vector<CurvePoint> reread = read_curve_csv((dir / "a.csv").string());
  RelationTracker again;
  for (const CurvePoint& p : reread) again.record(p);
  again.write_csv((dir / "b.csv").string());
  std::ifstream fa(dir / "a.csv"), fb(dir / "b.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  const bool csv_ok = !sa.str().empty() && sa.str() == sb.str();

  std::ostringstream os;
  os << "zero-start " << (zeros_ok ? "exact" : "VIOLATED") << ", cosines "
     << (cos_ok ? "bounded" : "OUT OF RANGE") << ", fd " << (fd_ok ? "ok" : "MISMATCH")
     << ", csv round-trip " << (csv_ok ? "stable" : "UNSTABLE");
  return {zeros_ok && cos_ok && fd_ok && csv_ok, os.str()};
}

// ---------------------------------------------------------------- criterion 9

Outcome criterion9() {
  Corpus corpus = make_corpus(small_corpus());
  TaskStream stream = make_task_stream(4, 2, "balanced", 3);
  TrainConfig cfg = small_train();

  Model model(small_model(), 67);
  model.add_task_head(2);
  model.set_task0_trainable();
  run_task(model, corpus, stream, 0, cfg);
  model.complete_task();
  RelationCache cache = populate_cache(model, corpus, stream, 1, cfg);
  model.expand_for_task(2);
  run_task(model, corpus, stream, 1, cfg, &cache);
  model.complete_task();

  EvalResult plain = evaluate(model, corpus, stream, 1);
  EvalResult rerun = evaluate(model, corpus, stream, 1);
  const bool deterministic = std::memcmp(&plain.pooled, &rerun.pooled, sizeof(double)) == 0 &&
                             bits_equal(plain.per_task, rerun.per_task);

  // the same sweep through the combined-prediction path: with the causal
  // terms zeroed out it must reach the very same decisions and accuracy
  auto labels = stream_labels(stream);
  NoGradGuard ng;
  Tensor zero = Tensor::zeros({model.classes_total()});
  std::int64_t correct = 0, total = 0, argmax_diffs = 0;
  for (int t = 0; t <= 1; ++t) {
    for (int c : stream.tasks[static_cast<std::size_t>(t)].class_ids) {
      for (std::int64_t pos : corpus.test_indices(c)) {
        const SampleRef& ref = corpus.samples[static_cast<std::size_t>(pos)];
        FeatureBundle fb = model.forward(corpus.render(ref));
        Tensor combined = combined_prediction(fb.all_logits, zero, zero, 0.2, 0.2);
        std::size_t arg_a = 0, arg_b = 0;
        for (std::size_t i = 1; i < fb.all_logits.values().size(); ++i) {
          if (fb.all_logits.values()[i] > fb.all_logits.values()[arg_a]) arg_a = i;
          if (combined.values()[i] > combined.values()[arg_b]) arg_b = i;
        }
        if (arg_a != arg_b) ++argmax_diffs;
        correct += static_cast<std::int64_t>(arg_b) == labels.at(c) ? 1 : 0;
        ++total;
      }
    }
  }
  const double acc_causal_path = static_cast<double>(correct) / static_cast<double>(total);

  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << "plain " << plain.pooled << ", causal-path "
     << acc_causal_path << ", " << argmax_diffs << " decision diffs, "
     << (deterministic ? "repeatable" : "NON-DETERMINISTIC");
  const bool pass = deterministic && argmax_diffs == 0 &&
                    std::memcmp(&plain.pooled, &acc_causal_path, sizeof(double)) == 0;
  return {pass, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);
  }

  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> entries = {
      {1, "gradient correctness vs finite differences", criterion1},
      {2, "zero-initialized expansion is output-neutral", criterion2},
      {3, "freezing invariance through training", criterion3},
      {4, "brute-force and metric oracles", criterion4},
      {5, "forgetting demonstration, baseline vs adapters", criterion5},
      {6, "causal ablation ordering across seeds", criterion6},
      {7, "parameter accounting", criterion7},
      {8, "analyzer sanity", criterion8},
      {9, "inference purity", criterion9},
  };

  bool all_pass = true;
  for (const Entry& e : entries) {
    if (only != 0 && e.id != only) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = e.fn();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%d] %-46s %s (%s; %.1fs)\n", e.id, e.name,
                o.report_only ? "REPORT" : (o.pass ? "PASS" : "FAIL"), o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.report_only) all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
