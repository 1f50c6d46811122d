#include <cmath>
#include <cstring>
#include <map>
#include <vector>

#include "csta/model.hpp"
#include "csta/ops.hpp"
#include "csta/rng.hpp"
#include "doctest.h"
#include "test_helpers.hpp"

using namespace csta;
using csta::testing::random_tensor;

namespace {

ModelConfig tiny_config() {
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

VideoClip noise_clip(std::uint64_t seed, std::int64_t frames = 2, std::int64_t size = 4) {
  SplitMix64 rng(seed);
  VideoClip clip;
  clip.frames = frames;
  clip.height = clip.width = size;
  clip.pixels.resize(static_cast<std::size_t>(frames * size * size));
  for (double& v : clip.pixels) v = rng.uniform();
  return clip;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.values().data(), b.values().data(),
                     a.values().size() * sizeof(double)) == 0;
}

double gelu_s(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// one plain SGD step over the currently trainable parameters
void sgd_step(Model& m, double lr) {
  for (const std::string& n : m.trainable_names()) {
    Tensor& p = m.param(n);
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& v = p.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

}  // namespace

TEST_SUITE("expansion") {

TEST_CASE("adapter sums: identities and scalar oracle") {
  SplitMix64 rng(3);
  Tensor F0 = random_tensor({3, 2}, rng, -1, 1, false);
  CHECK(adapt_msa(F0, {}).d.get() == F0.d.get());  // empty set is a true no-op

  Tensor W1 = random_tensor({2, 3}, rng, -1, 1, false);
  Tensor Wz = Tensor::zeros({3, 2});
  Tensor same = adapt_msa(F0, {{W1, Wz}});
  CHECK(bitwise_equal(same, F0));

  // d=2, b=1 hand evaluation of F0 + W2(GeLU(W1 F0)) on one row
  Tensor f = Tensor::from_values({1, 2}, {0.3, -0.7});
  Tensor w1 = Tensor::from_values({2, 1}, {0.5, -0.25});
  Tensor w2 = Tensor::from_values({1, 2}, {2.0, 1.0});
  double mid = gelu_s(0.3 * 0.5 + (-0.7) * (-0.25));
  Tensor out = adapt_msa(f, {{w1, w2}});
  CHECK(out.at(0) == doctest::Approx(0.3 + 2.0 * mid).epsilon(1e-12));
  CHECK(out.at(1) == doctest::Approx(-0.7 + 1.0 * mid).epsilon(1e-12));

  Tensor bad = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  CHECK_THROWS_WITH_AS(adapt_msa(f, {{w1, bad}}), doctest::Contains("do not close over width"),
                       std::invalid_argument);
}

TEST_CASE("adapter sums are additive over disjoint sets") {
  SplitMix64 rng(9);
  Tensor F0 = random_tensor({4, 3}, rng, -1, 1, false);
  std::vector<std::pair<Tensor, Tensor>> A, B, AB;
  for (int i = 0; i < 2; ++i) {
    A.emplace_back(random_tensor({3, 2}, rng, -1, 1, false), random_tensor({2, 3}, rng, -1, 1, false));
    B.emplace_back(random_tensor({3, 2}, rng, -1, 1, false), random_tensor({2, 3}, rng, -1, 1, false));
  }
  AB.insert(AB.end(), A.begin(), A.end());
  AB.insert(AB.end(), B.begin(), B.end());
  Tensor lhs = adapt_msa(F0, AB);
  Tensor rhs = sub(add(adapt_msa(F0, A), adapt_msa(F0, B)), F0);
  for (std::int64_t i = 0; i < lhs.numel(); ++i)
    CHECK(lhs.at(i) == doctest::Approx(rhs.at(i)).epsilon(1e-12));
}

TEST_CASE("cross-task attention mixes snapshots") {
  SplitMix64 rng(11);
  const double sigma = std::sqrt(2.0);
  Tensor q = random_tensor({3, 2}, rng, -1, 1, false);
  Tensor Wq = random_tensor({2, 2}, rng, -1, 1, false);
  Tensor Wk = random_tensor({2, 2}, rng, -1, 1, false);
  Tensor Wv = random_tensor({2, 2}, rng, -1, 1, false);

  CHECK_THROWS_WITH_AS(cross_task_attend(q, {}, Wq, Wk, Wv, sigma),
                       doctest::Contains("no snapshots"), std::invalid_argument);

  // duplicated snapshot: probabilities split across identical keys, so the
  // mixture equals the single-snapshot result
  Tensor snap = random_tensor({3, 2}, rng, -1, 1, false);
  Tensor one = cross_task_attend(q, {snap}, Wq, Wk, Wv, sigma);
  Tensor two = cross_task_attend(q, {snap, snap}, Wq, Wk, Wv, sigma);
  for (std::int64_t i = 0; i < one.numel(); ++i)
    CHECK(two.at(i) == doctest::Approx(one.at(i)).epsilon(1e-12));

  // snapshot order does not matter: rows of the memory are exchangeable
  Tensor snap2 = random_tensor({3, 2}, rng, -1, 1, false);
  Tensor ab = cross_task_attend(q, {snap, snap2}, Wq, Wk, Wv, sigma);
  Tensor ba = cross_task_attend(q, {snap2, snap}, Wq, Wk, Wv, sigma);
  for (std::int64_t i = 0; i < ab.numel(); ++i)
    CHECK(ba.at(i) == doctest::Approx(ab.at(i)).epsilon(1e-12));

  // hand-computed two-key mixture for a single query token, identity Wv
  Tensor q1 = Tensor::from_values({1, 2}, {1.0, 0.0});
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor k1 = Tensor::from_values({1, 2}, {2.0, 0.0});
  Tensor k2 = Tensor::from_values({1, 2}, {0.0, 2.0});
  Tensor mix = cross_task_attend(q1, {k1, k2}, eye, eye, eye, sigma);
  const double s1 = 2.0 / sigma, s2 = 0.0;
  const double e1 = std::exp(s1 - s1), e2 = std::exp(s2 - s1);
  const double p1 = e1 / (e1 + e2), p2 = e2 / (e1 + e2);
  CHECK(mix.at(0) == doctest::Approx(p1 * 2.0).epsilon(1e-12));
  CHECK(mix.at(1) == doctest::Approx(p2 * 2.0).epsilon(1e-12));

  // row sums reach the stats collector
  AttnStats st;
  cross_task_attend(q, {snap, snap2}, Wq, Wk, Wv, sigma, &st);
  CHECK(st.any);
  CHECK(st.rowsum_min == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("embedding-axis memory widens the projections") {
  SplitMix64 rng(13);
  const double sigma = std::sqrt(2.0);
  Tensor q = random_tensor({3, 2}, rng, -1, 1, false);
  Tensor s1 = random_tensor({3, 2}, rng, -1, 1, false);
  Tensor s2 = random_tensor({3, 2}, rng, -1, 1, false);
  Tensor Wq = random_tensor({2, 2}, rng, -1, 1, false);
  Tensor Wk = random_tensor({4, 2}, rng, -1, 1, false);
  Tensor Wv = random_tensor({4, 2}, rng, -1, 1, false);
  Tensor out = cross_task_attend_embed(q, {s1, s2}, Wq, Wk, Wv, sigma);
  CHECK(out.shape() == Shape{3, 2});
  // equivalent explicit computation over the column-concatenated memory
  Tensor mem = concat(std::vector<Tensor>{s1, s2}, 1);
  Tensor probs = softmax(mul_scalar(matmul(matmul(q, Wq), transpose(matmul(mem, Wk))), 1.0 / sigma));
  Tensor want = matmul(probs, matmul(mem, Wv));
  for (std::int64_t i = 0; i < want.numel(); ++i)
    CHECK(out.at(i) == doctest::Approx(want.at(i)).epsilon(1e-12));
}

TEST_CASE("expansion freezes the past and opens exactly the new parameters") {
  Model m(tiny_config(), 51);
  m.add_task_head(3);
  m.set_task0_trainable();
  CHECK_THROWS_WITH_AS(m.expansion_param_names(1), doctest::Contains("no expansion"),
                       std::out_of_range);

  auto names = m.expand_for_task(2);
  CHECK(m.expansions() == 1);
  CHECK(m.tasks() == 2);

  // analytic count: 2 blocks x 2 branches x (d*b + b*d) adapters, plus
  // 3 d x d attention projections + scalar gate, plus the new 2-class head
  const std::int64_t d = 4, b = 2;
  const std::int64_t adapters = 2 * 2 * (d * b + b * d);
  const std::int64_t cta = 3 * d * d + 1;
  const std::int64_t head = d * 2 + 2;
  CHECK(m.count_trainable() == adapters + cta + head);
  CHECK(m.count(names) == m.count_trainable());

  for (const std::string& n : m.param_names()) {
    const bool fresh = n.find(".task1.") != std::string::npos || n.rfind("cta.", 0) == 0 ||
                       n.rfind("head1.", 0) == 0;
    CHECK(m.is_trainable(n) == fresh);
  }
  auto recorded = m.expansion_param_names(1);
  CHECK(recorded.size() == 2 * 2 * 2 + 4);  // adapter pairs + attention params

  // trainable budget shrinks strictly after task 0
  CHECK(m.count_trainable() < m.count_all() - m.count_trainable());

  // second expansion requires completing the first
  CHECK_THROWS_WITH_AS(m.expand_for_task(2), doctest::Contains("not completed"), std::logic_error);
  m.complete_task();
  auto names2 = m.expand_for_task(2);
  CHECK(m.expansions() == 2);
  // attention projections stay shared; only adapters and the head are new
  CHECK(m.has_param("block0.ad_s.task2.W1"));
  CHECK(!m.has_param("cta.task2.Wk"));
  CHECK(m.count(names2) == adapters + cta + head);
}

TEST_CASE("zero-initialized expansion is bitwise invisible") {
  Model m(tiny_config(), 53);
  m.add_task_head(3);
  std::vector<VideoClip> clips;
  for (int i = 0; i < 8; ++i) clips.push_back(noise_clip(100 + static_cast<std::uint64_t>(i)));
  std::vector<Tensor> before;
  for (const auto& cl : clips) before.push_back(m.forward(cl).all_logits);

  m.expand_for_task(2);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    FeatureBundle out = m.forward(clips[i]);
    REQUIRE(out.all_logits.shape() == Shape{5});
    Tensor old_part = slice_cols(reshape(out.all_logits, {1, 5}), 0, 3);
    CHECK(bitwise_equal(reshape(old_part, {3}), before[i]));
    CHECK(bitwise_equal(out.feat, m.forward(clips[i], ForwardOptions{0, 0}).feat));
  }
}

TEST_CASE("gate at zero silences cross-task attention even with live adapters") {
  Model m(tiny_config(), 57);
  m.add_task_head(3);
  m.expand_for_task(2);
  SplitMix64 rng(5);
  for (std::int64_t l = 0; l < 2; ++l)
    for (const char* br : {"t", "s"}) {
      std::string stem = "block" + std::to_string(l) + ".ad_" + std::string(br) + ".task1.W2";
      for (double& v : m.param(stem).values()) v = rng.uniform(-0.3, 0.3);
    }
  VideoClip clip = noise_clip(7);
  ForwardOptions with_cta, without_cta;
  without_cta.use_cta = false;
  CHECK(bitwise_equal(m.forward(clip, with_cta).all_logits,
                      m.forward(clip, without_cta).all_logits));

  m.param("cta.gate").values()[0] = 0.25;
  CHECK(!bitwise_equal(m.forward(clip, with_cta).all_logits,
                       m.forward(clip, without_cta).all_logits));
}

TEST_CASE("probe masks drop exactly the current task's branch adapters") {
  Model m(tiny_config(), 59);
  m.add_task_head(3);
  m.expand_for_task(2);
  SplitMix64 rng(15);
  for (std::int64_t l = 0; l < 2; ++l)
    for (double& v : m.param("block" + std::to_string(l) + ".ad_s.task1.W2").values())
      v = rng.uniform(-0.3, 0.3);
  // temporal adapters left at zero: masking the spatial set recovers the base
  VideoClip clip = noise_clip(9);
  ForwardOptions no_spatial;
  no_spatial.current_spatial = false;
  no_spatial.use_cta = false;
  ForwardOptions base_only{0, 0};
  base_only.use_cta = false;
  CHECK(bitwise_equal(m.forward(clip, no_spatial).all_logits,
                      m.forward(clip, base_only).all_logits));

  ForwardOptions no_temporal;
  no_temporal.current_temporal = false;
  no_temporal.use_cta = false;
  CHECK(!bitwise_equal(m.forward(clip, no_temporal).all_logits,
                       m.forward(clip, base_only).all_logits));
  CHECK(bitwise_equal(m.forward(clip, no_temporal).all_logits,
                      m.forward(clip, ForwardOptions{.use_cta = false}).all_logits));
}

TEST_CASE("training a task leaves frozen parameters bitwise unchanged") {
  Model m(tiny_config(), 61);
  m.add_task_head(3);
  m.expand_for_task(2);
  std::vector<std::string> trainables = m.trainable_names();
  std::map<std::string, std::vector<double>> frozen_before;
  for (const std::string& n : m.param_names())
    if (!m.is_trainable(n)) frozen_before[n] = m.param(n).values();

  std::vector<VideoClip> before_clips;
  for (int i = 0; i < 4; ++i) before_clips.push_back(noise_clip(40 + static_cast<std::uint64_t>(i)));
  std::vector<Tensor> base_logits;
  ForwardOptions base_opts{0, 0};
  for (const auto& cl : before_clips)
    base_logits.push_back(m.forward(cl, base_opts).head_logits[0]);

  for (int step = 0; step < 5; ++step) {
    tape().clear();
    m.zero_grads();
    FeatureBundle out = m.forward(noise_clip(200 + static_cast<std::uint64_t>(step)));
    Tensor loss = cross_entropy(out.all_logits, 3 + step % 2);  // new-task classes
    backward(loss);
    sgd_step(m, 0.05);
  }
  tape().clear();

  for (const auto& [n, vals] : frozen_before) {
    const auto& now = m.param(n).values();
    CHECK(std::memcmp(vals.data(), now.data(), vals.size() * sizeof(double)) == 0);
  }
  // adapters actually moved
  bool moved = false;
  for (const std::string& n : trainables)
    if (n.find("task1") != std::string::npos)
      for (double v : m.param(n).grad()) moved |= (v != 0.0);
  CHECK(moved);
  // the pre-expansion model is still reachable bit-for-bit
  for (std::size_t i = 0; i < before_clips.size(); ++i)
    CHECK(bitwise_equal(m.forward(before_clips[i], base_opts).head_logits[0], base_logits[i]));
}

TEST_CASE("classifier-only regime trains heads alone") {
  Model m(tiny_config(), 63);
  m.add_task_head(3);
  m.expand_for_task(2);
  m.complete_task();
  auto names = m.set_heads_only_trainable();
  CHECK(names == std::vector<std::string>{"head0.W", "head0.b", "head1.W", "head1.b"});
  CHECK(m.count_trainable() == (4 * 3 + 3) + (4 * 2 + 2));
}

TEST_CASE("distillation is zero at initialization and matches the divergence oracle") {
  Model m(tiny_config(), 65);
  m.add_task_head(3);
  CHECK_THROWS_WITH_AS(distill_loss(m, {noise_clip(1)}), doctest::Contains("no expansion"),
                       std::logic_error);
  m.expand_for_task(2);
  std::vector<VideoClip> batch = {noise_clip(21), noise_clip(22), noise_clip(23)};
  CHECK_THROWS_AS(distill_loss(m, {}), std::invalid_argument);
  tape().clear();
  Tensor zero_loss = distill_loss(m, batch);
  CHECK(zero_loss.item() == 0.0);  // teacher and student coincide exactly
  tape().clear();

  // perturb one spatial adapter so the student drifts from the teacher
  SplitMix64 rng(8);
  for (double& v : m.param("block1.ad_s.task1.W2").values()) v = rng.uniform(-0.5, 0.5);
  Tensor loss = distill_loss(m, batch);
  CHECK(loss.item() > 0.0);

  std::vector<Tensor> want_terms;
  ForwardOptions teacher_opts;
  teacher_opts.adapters_limit = 0;
  for (const auto& cl : batch) {
    Tensor student = m.forward(cl).head_logits[1];
    Tensor teacher = m.forward(cl, teacher_opts).head_logits[1];
    want_terms.push_back(kl_divergence(student, teacher.detach()));
  }
  CHECK(loss.item() == doctest::Approx(mean_scalars(want_terms).item()).epsilon(1e-12));
  tape().clear();

  // gradients flow into the trainable expansion only
  m.zero_grads();
  Tensor tl = distill_loss(m, batch);
  backward(tl);
  CHECK(m.param("block1.ad_s.task1.W1").has_grad());
  CHECK(!m.param("block1.smsa.Wq").has_grad());
  tape().clear();
}

TEST_CASE("expansion gradients match finite differences") {
  Model m(tiny_config(), 67);
  m.add_task_head(3);
  m.expand_for_task(2);
  // non-trivial expansion state: nonzero W2, gate, and snapshots in play
  SplitMix64 rng(19);
  for (const std::string& n : m.trainable_names())
    if (n.find("W2") != std::string::npos)
      for (double& v : m.param(n).values()) v = rng.uniform(-0.4, 0.4);
  m.param("cta.gate").values()[0] = 0.3;
  VideoClip clip = noise_clip(31);
  auto loss_fn = [&]() {
    FeatureBundle out = m.forward(clip);
    return cross_entropy(out.all_logits, 4);
  };
  std::vector<Tensor> checked = {
      m.param("block0.ad_t.task1.W1"), m.param("block1.ad_s.task1.W2"),
      m.param("cta.Wq"),              m.param("cta.Wv"),
      m.param("cta.gate"),            m.param("head1.W"),
  };
  csta::testing::expect_backward_matches_fd(checked, loss_fn, 1e-4, 1e-6);
}

TEST_CASE("ablation: single adapter on the mlp output") {
  ModelConfig c = tiny_config();
  c.mlp_adapter = true;
  Model m(c, 69);
  m.add_task_head(3);
  VideoClip clip = noise_clip(77);
  Tensor before = m.forward(clip).all_logits;
  auto names = m.expand_for_task(2);
  CHECK(m.has_param("block0.ad_m.task1.W1"));
  CHECK(!m.has_param("block0.ad_s.task1.W1"));
  Tensor after = m.forward(clip).all_logits;
  CHECK(bitwise_equal(reshape(slice_cols(reshape(after, {1, 5}), 0, 3), {3}), before));
  // one adapter pair per block instead of two
  bool any_mlp_adapter = false;
  for (const std::string& n : names) any_mlp_adapter |= n.find("ad_m") != std::string::npos;
  CHECK(any_mlp_adapter);
}

TEST_CASE("embedding-axis configuration expands per-task projections") {
  ModelConfig c = tiny_config();
  c.concat_axis = "embedding";
  Model m(c, 71);
  m.add_task_head(3);
  VideoClip clip = noise_clip(88);
  Tensor before = m.forward(clip).all_logits;
  m.expand_for_task(2);
  CHECK(m.param("cta.task1.Wk").shape() == Shape{4, 4});
  Tensor after = m.forward(clip).all_logits;
  CHECK(bitwise_equal(reshape(slice_cols(reshape(after, {1, 5}), 0, 3), {3}), before));
  m.complete_task();
  m.expand_for_task(2);
  CHECK(m.param("cta.task2.Wk").shape() == Shape{8, 4});
  CHECK(m.forward(clip).all_logits.shape() == Shape{7});
}

}  // TEST_SUITE
