#include "csta/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csta/ops.hpp"
#include "csta/rng.hpp"

namespace csta {
namespace {

constexpr int kInitZeros = 0;
constexpr int kInitOnes = 1;
constexpr int kInitUniform = 2;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// multi-head attention over one token group; inputs are already projected
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t heads, double scale,
              AttnStats* stats) {
  const std::int64_t d = q.shape()[1], dh = d / heads;
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (std::int64_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor probs = softmax(mul_scalar(matmul(qh, transpose(kh)), 1.0 / scale));
    if (stats) {
      const std::int64_t rows = probs.shape()[0], cols = probs.shape()[1];
      for (std::int64_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::int64_t c = 0; c < cols; ++c) s += probs.at(r * cols + c);
        stats->note(s);
      }
    }
    outs.push_back(matmul(probs, vh));
  }
  return heads == 1 ? outs[0] : concat(outs, 1);
}

void expect_tokens(const Tensor& tokens, std::int64_t frames, std::int64_t patches,
                   const char* who) {
  if (tokens.shape().size() != 2 || tokens.shape()[0] != frames * patches + 1) {
    throw std::invalid_argument(std::string(who) + ": token shape " + shape_str(tokens.shape()) +
                                " does not match " + std::to_string(frames) + " frames x " +
                                std::to_string(patches) + " patches + cls");
  }
}

// F0 plus the given adapter outputs, optionally skipping one index
Tensor chain_sum(const Tensor& F0, const std::vector<Tensor>& outs) {
  Tensor acc = F0;
  for (const Tensor& o : outs) acc = add(acc, o);
  return acc;
}

Tensor adapter_out(const Tensor& F0, const Tensor& W1, const Tensor& W2) {
  return matmul(gelu(matmul(F0, W1)), W2);
}

}  // namespace

void AttnStats::note(double s) {
  if (!any) {
    rowsum_min = rowsum_max = s;
    any = true;
  } else {
    rowsum_min = std::min(rowsum_min, s);
    rowsum_max = std::max(rowsum_max, s);
  }
}

std::int64_t ModelConfig::patches_per_frame() const {
  const std::int64_t side = frame_size / patch_size;
  return side * side;
}

double ModelConfig::attn_scale() const {
  return std::sqrt(static_cast<double>(embed_dim) / static_cast<double>(heads));
}

void ModelConfig::validate() const {
  if (embed_dim <= 0 || heads <= 0 || blocks <= 0 || frames <= 0 || frame_size <= 0 ||
      patch_size <= 0) {
    throw std::invalid_argument("model config: all dimensions must be positive");
  }
  if (embed_dim % heads != 0) {
    throw std::invalid_argument("embed dim " + std::to_string(embed_dim) +
                                " not divisible by head count " + std::to_string(heads));
  }
  if (frame_size % patch_size != 0) {
    throw std::invalid_argument("frame size " + std::to_string(frame_size) +
                                " not divisible by patch size " + std::to_string(patch_size));
  }
  if (mlp_ratio <= 0) throw std::invalid_argument("mlp ratio must be positive");
  if (bneck() < 1) throw std::invalid_argument("adapter bottleneck must be >= 1");
  if (concat_axis != "token" && concat_axis != "embedding") {
    throw std::invalid_argument("concat_axis must be 'token' or 'embedding', got '" + concat_axis +
                                "'");
  }
}

Tensor msa_temporal(const Tensor& tokens, const MsaWeights& w, std::int64_t frames,
                    std::int64_t patches, std::int64_t heads, AttnStats* stats) {
  expect_tokens(tokens, frames, patches, "msa_temporal");
  const double scale = std::sqrt(static_cast<double>(tokens.shape()[1]) /
                                 static_cast<double>(heads));
  Tensor q = matmul(tokens, w.Wq), k = matmul(tokens, w.Wk), v = matmul(tokens, w.Wv);
  std::vector<Tensor> outs;
  outs.push_back(attend(gather_rows(q, {0}), gather_rows(k, {0}), gather_rows(v, {0}), heads,
                        scale, stats));
  for (std::int64_t p = 0; p < patches; ++p) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(frames));
    for (std::int64_t f = 0; f < frames; ++f) idx[static_cast<std::size_t>(f)] = 1 + f * patches + p;
    outs.push_back(attend(gather_rows(q, idx), gather_rows(k, idx), gather_rows(v, idx), heads,
                          scale, stats));
  }
  Tensor stacked = concat(outs, 0);
  // stacked row of token (f,p) is 1 + p*frames + f; invert that layout
  std::vector<std::int64_t> inv(static_cast<std::size_t>(frames * patches + 1));
  inv[0] = 0;
  for (std::int64_t f = 0; f < frames; ++f)
    for (std::int64_t p = 0; p < patches; ++p) inv[1 + f * patches + p] = 1 + p * frames + f;
  return matmul(gather_rows(stacked, inv), w.Wo);
}

Tensor msa_spatial(const Tensor& tokens, const MsaWeights& w, std::int64_t frames,
                   std::int64_t patches, std::int64_t heads, AttnStats* stats) {
  expect_tokens(tokens, frames, patches, "msa_spatial");
  const double scale = std::sqrt(static_cast<double>(tokens.shape()[1]) /
                                 static_cast<double>(heads));
  Tensor q = matmul(tokens, w.Wq), k = matmul(tokens, w.Wk), v = matmul(tokens, w.Wv);
  std::vector<Tensor> cls_rows, patch_blocks;
  std::vector<std::int64_t> tail(static_cast<std::size_t>(patches));
  for (std::int64_t p = 0; p < patches; ++p) tail[static_cast<std::size_t>(p)] = 1 + p;
  for (std::int64_t f = 0; f < frames; ++f) {
    std::vector<std::int64_t> idx;
    idx.push_back(0);  // classification token rides along in every frame group
    for (std::int64_t p = 0; p < patches; ++p) idx.push_back(1 + f * patches + p);
    Tensor out_f = attend(gather_rows(q, idx), gather_rows(k, idx), gather_rows(v, idx), heads,
                          scale, stats);
    cls_rows.push_back(gather_rows(out_f, {0}));
    patch_blocks.push_back(gather_rows(out_f, tail));
  }
  // per-frame classification-token outputs are averaged back into one row
  Tensor cls_avg = frames == 1 ? cls_rows[0]
                               : reshape(mean_axis0(concat(cls_rows, 0)),
                                         {1, tokens.shape()[1]});
  std::vector<Tensor> parts;
  parts.push_back(cls_avg);
  for (Tensor& b : patch_blocks) parts.push_back(b);
  return matmul(concat(parts, 0), w.Wo);
}

Tensor adapt_msa(const Tensor& F0, const std::vector<std::pair<Tensor, Tensor>>& adapters) {
  if (adapters.empty()) return F0;
  const std::int64_t d = F0.shape().back();
  std::vector<Tensor> outs;
  for (const auto& [W1, W2] : adapters) {
    if (W1.shape()[0] != d || W2.shape()[1] != d || W1.shape()[1] != W2.shape()[0]) {
      throw std::invalid_argument("adapter shapes " + shape_str(W1.shape()) + " x " +
                                  shape_str(W2.shape()) + " do not close over width " +
                                  std::to_string(d));
    }
    outs.push_back(adapter_out(F0, W1, W2));
  }
  return chain_sum(F0, outs);
}

Tensor cross_task_attend(const Tensor& query, const std::vector<Tensor>& snapshots,
                         const Tensor& Wq, const Tensor& Wk, const Tensor& Wv, double scale,
                         AttnStats* stats) {
  if (snapshots.empty()) throw std::invalid_argument("cross_task_attend: no snapshots");
  Tensor mem = snapshots.size() == 1 ? snapshots[0] : concat(snapshots, 0);
  Tensor Q = matmul(query, Wq);
  Tensor K = matmul(mem, Wk);
  Tensor V = matmul(mem, Wv);
  Tensor probs = softmax(mul_scalar(matmul(Q, transpose(K)), 1.0 / scale));
  if (stats) {
    const std::int64_t rows = probs.shape()[0], cols = probs.shape()[1];
    for (std::int64_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::int64_t c = 0; c < cols; ++c) s += probs.at(r * cols + c);
      stats->note(s);
    }
  }
  return matmul(probs, V);
}

Tensor cross_task_attend_embed(const Tensor& query, const std::vector<Tensor>& snapshots,
                               const Tensor& Wq, const Tensor& Wk, const Tensor& Wv, double scale,
                               AttnStats* stats) {
  if (snapshots.empty()) throw std::invalid_argument("cross_task_attend: no snapshots");
  Tensor mem = snapshots.size() == 1 ? snapshots[0] : concat(snapshots, 1);
  Tensor Q = matmul(query, Wq);
  Tensor K = matmul(mem, Wk);
  Tensor V = matmul(mem, Wv);
  Tensor probs = softmax(mul_scalar(matmul(Q, transpose(K)), 1.0 / scale));
  if (stats) {
    const std::int64_t rows = probs.shape()[0], cols = probs.shape()[1];
    for (std::int64_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::int64_t c = 0; c < cols; ++c) s += probs.at(r * cols + c);
      stats->note(s);
    }
  }
  return matmul(probs, V);
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  config_.validate();
  const std::int64_t d = config_.embed_dim;
  const std::int64_t pd = config_.patch_size * config_.patch_size;
  const std::int64_t m = static_cast<std::int64_t>(std::llround(config_.mlp_ratio * d));
  const double wd = 1.0 / std::sqrt(static_cast<double>(d));
  add_param("embed.W", {pd, d}, kInitUniform, 1.0 / std::sqrt(static_cast<double>(pd)));
  add_param("embed.b", {d}, kInitZeros);
  add_param("cls", {1, d}, kInitUniform, 0.02);
  add_param("pos.spatial", {config_.patches_per_frame(), d}, kInitUniform, 0.02);
  add_param("pos.temporal", {config_.frames, d}, kInitUniform, 0.02);
  for (std::int64_t l = 0; l < config_.blocks; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    for (const char* br : {"ln_t.", "ln_s.", "ln_m."}) {
      add_param(b + br + "gamma", {d}, kInitOnes);
      add_param(b + br + "beta", {d}, kInitZeros);
    }
    for (const char* msa : {"tmsa.", "smsa."}) {
      for (const char* wn : {"Wq", "Wk", "Wv", "Wo"}) add_param(b + msa + wn, {d, d}, kInitUniform, wd);
    }
    add_param(b + "mlp.W1", {d, m}, kInitUniform, wd);
    add_param(b + "mlp.b1", {m}, kInitZeros);
    add_param(b + "mlp.W2", {m, d}, kInitUniform, 1.0 / std::sqrt(static_cast<double>(m)));
    add_param(b + "mlp.b2", {d}, kInitZeros);
  }
}

Tensor& Model::add_param(const std::string& name, Shape shape, int init_kind, double limit) {
  if (params_.count(name)) throw std::logic_error("parameter '" + name + "' already exists");
  Tensor t;
  switch (init_kind) {
    case kInitZeros:
      t = Tensor::zeros(std::move(shape));
      break;
    case kInitOnes:
      t = Tensor::full(std::move(shape), 1.0);
      break;
    default: {
      t = Tensor::zeros(std::move(shape));
      SplitMix64 rng(derive_seed(seed_, fnv1a(name)));
      for (double& v : t.values()) v = rng.uniform(-limit, limit);
    }
  }
  order_.push_back(name);
  params_.emplace(name, t);
  trainable_[name] = false;
  return params_.at(name);
}

Tensor& Model::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

bool Model::has_param(const std::string& name) const { return params_.count(name) > 0; }

bool Model::is_trainable(const std::string& name) const {
  auto it = trainable_.find(name);
  if (it == trainable_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

void Model::set_trainable(const std::string& name, bool trainable) {
  param(name).d->requires_grad = trainable;
  trainable_[name] = trainable;
}

void Model::freeze_all() {
  for (const std::string& n : order_) set_trainable(n, false);
}

std::vector<std::string> Model::trainable_names() const {
  std::vector<std::string> out;
  for (const std::string& n : order_)
    if (trainable_.at(n)) out.push_back(n);
  return out;
}

std::int64_t Model::count(const std::vector<std::string>& names) const {
  std::int64_t c = 0;
  for (const std::string& n : names) c += param(n).numel();
  return c;
}

std::int64_t Model::count_all() const { return count(order_); }

std::int64_t Model::count_trainable() const { return count(trainable_names()); }

void Model::zero_grads() {
  for (const std::string& n : order_) params_.at(n).zero_grad();
}

std::int64_t Model::head_classes(int task) const {
  if (task < 0 || task >= tasks()) {
    throw std::out_of_range("no head for task " + std::to_string(task) + " (have " +
                            std::to_string(tasks()) + ")");
  }
  return head_classes_[static_cast<std::size_t>(task)];
}

std::int64_t Model::class_offset(int task) const {
  std::int64_t off = 0;
  for (int i = 0; i < task; ++i) off += head_classes(i);
  return off;
}

std::int64_t Model::classes_total() const {
  std::int64_t c = 0;
  for (std::int64_t h : head_classes_) c += h;
  return c;
}

int Model::add_task_head(std::int64_t classes) {
  if (classes < 1) throw std::invalid_argument("head needs at least 1 class");
  const int task = tasks();
  const std::string base = "head" + std::to_string(task) + ".";
  add_param(base + "W", {config_.embed_dim, classes}, kInitUniform,
            1.0 / std::sqrt(static_cast<double>(config_.embed_dim)));
  add_param(base + "b", {classes}, kInitZeros);
  head_classes_.push_back(classes);
  return task;
}

std::vector<std::string> Model::set_task0_trainable() {
  for (const std::string& n : order_) set_trainable(n, true);
  return trainable_names();
}

std::vector<std::string> Model::set_baseline_trainable() {
  freeze_all();
  for (std::int64_t l = 0; l < config_.blocks; ++l) {
    const std::string b = "block" + std::to_string(l) + ".mlp.";
    for (const char* wn : {"W1", "b1", "W2", "b2"}) set_trainable(b + wn, true);
  }
  const std::string h = "head" + std::to_string(tasks() - 1) + ".";
  set_trainable(h + "W", true);
  set_trainable(h + "b", true);
  return trainable_names();
}

std::vector<std::string> Model::set_heads_only_trainable() {
  freeze_all();
  for (int t = 0; t < tasks(); ++t) {
    const std::string h = "head" + std::to_string(t) + ".";
    set_trainable(h + "W", true);
    set_trainable(h + "b", true);
  }
  return trainable_names();
}

void Model::ensure_cta_params() {
  const std::int64_t d = config_.embed_dim;
  const double wd = 1.0 / std::sqrt(static_cast<double>(d));
  if (!has_param("cta.Wq")) {
    add_param("cta.Wq", {d, d}, kInitUniform, wd);
    if (config_.concat_axis == "token") {
      add_param("cta.Wk", {d, d}, kInitUniform, wd);
      add_param("cta.Wv", {d, d}, kInitUniform, wd);
    }
    add_param("cta.gate", {1}, kInitZeros);
  }
  if (config_.concat_axis == "embedding") {
    const int n = expansions_ + 1;
    const std::string base = "cta.task" + std::to_string(n) + ".";
    add_param(base + "Wk", {n * d, d}, kInitUniform, wd);
    add_param(base + "Wv", {n * d, d}, kInitUniform, wd);
  }
}

std::vector<std::string> Model::expand_for_task(std::int64_t new_classes) {
  if (tasks() == 0) throw std::logic_error("expand: task 0 head missing");
  if (task_open_) {
    throw std::logic_error("expand: task " + std::to_string(expansions_) +
                           " training not completed");
  }
  const int n = expansions_ + 1;
  freeze_all();
  const std::int64_t d = config_.embed_dim, bn = config_.bneck();
  const double wd = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<std::string> added;
  for (std::int64_t l = 0; l < config_.blocks; ++l) {
    const std::string base = "block" + std::to_string(l) + ".ad_";
    std::vector<std::string> branches = config_.mlp_adapter ? std::vector<std::string>{"m"}
                                                            : std::vector<std::string>{"t", "s"};
    for (const std::string& br : branches) {
      const std::string stem = base + br + ".task" + std::to_string(n) + ".";
      add_param(stem + "W1", {d, bn}, kInitUniform, wd);
      add_param(stem + "W2", {bn, d}, kInitZeros);  // exact identity at start
      added.push_back(stem + "W1");
      added.push_back(stem + "W2");
    }
  }
  const std::size_t before_cta = order_.size();
  ensure_cta_params();
  for (std::size_t i = before_cta; i < order_.size(); ++i) added.push_back(order_[i]);
  expansion_added_[n] = added;

  const int head = add_task_head(new_classes);
  std::vector<std::string> trainables = added;
  std::vector<std::string> shared = config_.concat_axis == "token"
                                        ? std::vector<std::string>{"cta.Wq", "cta.Wk", "cta.Wv",
                                                                   "cta.gate"}
                                        : std::vector<std::string>{"cta.Wq", "cta.gate"};
  for (const std::string& cn : shared) {
    if (std::find(trainables.begin(), trainables.end(), cn) == trainables.end())
      trainables.push_back(cn);
  }
  trainables.push_back("head" + std::to_string(head) + ".W");
  trainables.push_back("head" + std::to_string(head) + ".b");
  for (const std::string& nme : trainables) set_trainable(nme, true);
  expansions_ = n;
  task_open_ = true;
  return trainables;
}

void Model::complete_task() { task_open_ = false; }

std::vector<std::string> Model::expansion_param_names(int task) const {
  auto it = expansion_added_.find(task);
  if (it == expansion_added_.end()) {
    throw std::out_of_range("no expansion recorded for task " + std::to_string(task));
  }
  return it->second;
}

Tensor Model::tokens_from_clip(const VideoClip& clip) const {
  const std::int64_t T = config_.frames, S = config_.frame_size, ps = config_.patch_size;
  if (clip.frames != T || clip.height != S || clip.width != S) {
    throw std::invalid_argument("clip " + std::to_string(clip.frames) + "x" +
                                std::to_string(clip.height) + "x" + std::to_string(clip.width) +
                                " does not match model input " + std::to_string(T) + "x" +
                                std::to_string(S) + "x" + std::to_string(S));
  }
  const std::int64_t side = S / ps, P = side * side, pd = ps * ps;
  std::vector<double> patch_rows(static_cast<std::size_t>(T * P * pd));
  std::size_t at = 0;
  for (std::int64_t f = 0; f < T; ++f)
    for (std::int64_t py = 0; py < side; ++py)
      for (std::int64_t px = 0; px < side; ++px)
        for (std::int64_t y = 0; y < ps; ++y)
          for (std::int64_t x = 0; x < ps; ++x)
            patch_rows[at++] = clip.at(f, py * ps + y, px * ps + x);
  Tensor patches = Tensor::from_values({T * P, pd}, std::move(patch_rows));
  Tensor x = add(matmul(patches, param("embed.W")), param("embed.b"));
  std::vector<std::int64_t> sp_idx, tm_idx;
  for (std::int64_t f = 0; f < T; ++f)
    for (std::int64_t p = 0; p < P; ++p) {
      sp_idx.push_back(p);
      tm_idx.push_back(f);
    }
  x = add(x, gather_rows(param("pos.spatial"), sp_idx));
  x = add(x, gather_rows(param("pos.temporal"), tm_idx));
  return concat({param("cls"), x}, 0);
}

int Model::effective_limit(const ForwardOptions& opt) const {
  if (opt.adapters_limit < 0) return expansions_;
  return std::min(opt.adapters_limit, expansions_);
}

FeatureBundle Model::forward(const VideoClip& clip, const ForwardOptions& opt) const {
  const std::int64_t T = config_.frames, P = config_.patches_per_frame(), h = config_.heads;
  const std::int64_t d = config_.embed_dim;
  const int EL = effective_limit(opt);
  const int CT = opt.cta_tasks < 0 ? expansions_ : std::min(opt.cta_tasks, expansions_);
  FeatureBundle bundle;
  AttnStats* st = opt.collect_attn_stats ? &bundle.attn : nullptr;

  auto adapter_pair = [&](std::int64_t l, const char* br, int i) {
    const std::string stem =
        "block" + std::to_string(l) + ".ad_" + br + ".task" + std::to_string(i) + ".";
    return std::make_pair(param(stem + "W1"), param(stem + "W2"));
  };
  auto branch_list = [&](std::int64_t l, const char* br, bool mask_current) {
    std::vector<std::pair<Tensor, Tensor>> list;
    for (int i = 1; i <= EL; ++i) {
      if (mask_current && i == EL) continue;
      list.push_back(adapter_pair(l, br, i));
    }
    return list;
  };

  Tensor x = tokens_from_clip(clip);
  Tensor s_branch, t_branch;
  for (std::int64_t l = 0; l < config_.blocks; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    const bool last = (l == config_.blocks - 1);
    MsaWeights tw{param(b + "tmsa.Wq"), param(b + "tmsa.Wk"), param(b + "tmsa.Wv"),
                  param(b + "tmsa.Wo")};
    Tensor t_out = msa_temporal(layernorm(x, param(b + "ln_t.gamma"), param(b + "ln_t.beta")), tw,
                                T, P, h, st);
    Tensor t_ad = config_.mlp_adapter
                      ? t_out
                      : adapt_msa(t_out, branch_list(l, "t", !opt.current_temporal));
    if (last) t_branch = t_ad;
    x = add(x, t_ad);

    MsaWeights sw{param(b + "smsa.Wq"), param(b + "smsa.Wk"), param(b + "smsa.Wv"),
                  param(b + "smsa.Wo")};
    Tensor s_out = msa_spatial(layernorm(x, param(b + "ln_s.gamma"), param(b + "ln_s.beta")), sw,
                               T, P, h, st);
    Tensor s_ad = s_out;
    if (!config_.mlp_adapter) {
      // adapter outputs are shared between the final sum and the per-task
      // snapshot prefix sums of the cross-task attention memory
      const int need = std::max(EL, CT > 0 ? CT - 1 : 0);
      std::vector<Tensor> outs;
      for (int i = 1; i <= need; ++i) {
        auto [W1, W2] = adapter_pair(l, "s", i);
        outs.push_back(adapter_out(s_out, W1, W2));
      }
      Tensor acc = s_out;
      for (int i = 1; i <= EL; ++i) {
        if (!opt.current_spatial && i == EL) continue;
        acc = add(acc, outs[static_cast<std::size_t>(i - 1)]);
      }
      s_ad = acc;
      if (last && opt.use_cta && CT >= 1) {
        std::vector<Tensor> snaps;
        Tensor run = s_out;
        snaps.push_back(run);
        for (int i = 1; i < CT; ++i) {
          run = add(run, outs[static_cast<std::size_t>(i - 1)]);
          snaps.push_back(run);
        }
        Tensor act;
        if (config_.concat_axis == "token") {
          act = cross_task_attend(s_ad, snaps, param("cta.Wq"), param("cta.Wk"), param("cta.Wv"),
                                  config_.attn_scale(), st);
        } else {
          const std::string base = "cta.task" + std::to_string(CT) + ".";
          act = cross_task_attend_embed(s_ad, snaps, param("cta.Wq"), param(base + "Wk"),
                                        param(base + "Wv"), config_.attn_scale(), st);
        }
        s_ad = add(s_ad, mul(act, param("cta.gate")));
      }
    }
    if (last) s_branch = s_ad;
    x = add(x, s_ad);

    Tensor m_in = layernorm(x, param(b + "ln_m.gamma"), param(b + "ln_m.beta"));
    Tensor mid = gelu(add(matmul(m_in, param(b + "mlp.W1")), param(b + "mlp.b1")));
    Tensor m = add(matmul(mid, param(b + "mlp.W2")), param(b + "mlp.b2"));
    if (config_.mlp_adapter) m = adapt_msa(m, branch_list(l, "m", false));
    x = add(x, m);
  }

  bundle.tokens = x;
  bundle.feat = reshape(gather_rows(x, {0}), {d});
  bundle.spatial = reshape(gather_rows(s_branch, {0}), {d});
  bundle.temporal = reshape(gather_rows(t_branch, {0}), {d});
  for (int t = 0; t < tasks(); ++t) bundle.head_logits.push_back(classify_branch(bundle.feat, t));
  if (!bundle.head_logits.empty()) {
    bundle.all_logits = bundle.head_logits.size() == 1 ? bundle.head_logits[0]
                                                       : concat(bundle.head_logits, 0);
  }
  return bundle;
}

Tensor Model::classify_branch(const Tensor& feature, int task) const {
  if (task < 0 || task >= tasks()) {
    throw std::out_of_range("classify: no head for task " + std::to_string(task));
  }
  const std::string base = "head" + std::to_string(task) + ".";
  Tensor row = reshape(feature, {1, config_.embed_dim});
  Tensor logits = add(matmul(row, param(base + "W")), param(base + "b"));
  return reshape(logits, {head_classes(task)});
}

Tensor Model::classify_all(const Tensor& feature) const {
  if (tasks() == 0) throw std::logic_error("classify: no heads");
  std::vector<Tensor> parts;
  for (int t = 0; t < tasks(); ++t) parts.push_back(classify_branch(feature, t));
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

Tensor distill_loss(const Model& model, const std::vector<VideoClip>& batch) {
  const int n = model.expansions();
  if (n < 1) throw std::logic_error("distill: no expansion in place");
  if (model.tasks() <= n) throw std::logic_error("distill: task head unavailable");
  if (batch.empty()) throw std::invalid_argument("distill: empty batch");
  std::vector<Tensor> terms;
  ForwardOptions student;  // full current model
  ForwardOptions teacher;
  teacher.adapters_limit = n - 1;  // same weights minus the task-n adapters
  for (const VideoClip& clip : batch) {
    Tensor student_logits = model.forward(clip, student).head_logits[static_cast<std::size_t>(n)];
    Tensor teacher_logits;
    {
      NoGradGuard ng;
      teacher_logits = model.forward(clip, teacher).head_logits[static_cast<std::size_t>(n)];
    }
    terms.push_back(kl_divergence(student_logits, teacher_logits.detach()));
  }
  return mean_scalars(terms);
}

}  // namespace csta
