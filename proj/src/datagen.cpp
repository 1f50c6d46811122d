#include "csta/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "csta/rng.hpp"

namespace csta {
namespace {

constexpr std::int64_t kStamp = 8;

// Pixels snap to a 1/4096 grid so float32 export round-trips bit-exactly.
double quantize(double v) { return std::round(v * 4096.0) / 4096.0; }

// Stamp masses stay below ~24 so that two disjoint stamp placements differ by
// a mean per-pixel L1 below 0.05 on a 32x32 frame (temporal-pair property).
void fill_stamp(int texture_id, std::int64_t n, std::vector<double>& g) {
  auto at = [&](std::int64_t y, std::int64_t x) -> double& { return g[y * n + x]; };
  switch (texture_id) {
    case 0:  // dim solid square
      for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x < n; ++x) at(y, x) = 0.34;
      break;
    case 1:  // hollow ring
      for (std::int64_t i = 0; i < n; ++i) {
        at(0, i) = at(n - 1, i) = 0.8;
        at(i, 0) = at(i, n - 1) = 0.8;
      }
      break;
    case 2:  // diagonal cross
      for (std::int64_t i = 0; i < n; ++i) {
        at(i, i) = 1.0;
        at(i, n - 1 - i) = 1.0;
      }
      break;
    case 3:  // plus sign
      for (std::int64_t i = 0; i < n; ++i) {
        at(n / 2 - 1, i) = at(n / 2, i) = 0.8;
        at(i, n / 2 - 1) = at(i, n / 2) = 0.8;
      }
      break;
    case 4:  // checkerboard of 2x2 blocks
      for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x < n; ++x)
          if (((y / 2) + (x / 2)) % 2 == 0) at(y, x) = 0.7;
      break;
    case 5:  // horizontal stripes
      for (std::int64_t y = 0; y < n; y += 3)
        for (std::int64_t x = 0; x < n; ++x) at(y, x) = 0.9;
      break;
    case 6:  // vertical stripes
      for (std::int64_t x = 0; x < n; x += 3)
        for (std::int64_t y = 0; y < n; ++y) at(y, x) = 0.9;
      break;
    case 7: {  // disk
      const double c = (n - 1) / 2.0, r2 = (n / 2.0) * (n / 2.0) * 0.8;
      for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x < n; ++x)
          if ((y - c) * (y - c) + (x - c) * (x - c) <= r2) at(y, x) = 0.55;
      break;
    }
    case 8:  // lower-left triangle
      for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x <= y; ++x) at(y, x) = 0.6;
      break;
    case 9:  // diagonal gradient
      for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x < n; ++x) at(y, x) = 0.7 * (y + x) / (2.0 * (n - 1));
      break;
    default:
      throw std::invalid_argument("texture id " + std::to_string(texture_id) + " outside [0," +
                                  std::to_string(kNumTextures) + ")");
  }
}

std::vector<double> rotate_quarter(const std::vector<double>& g, std::int64_t n, int quarters) {
  std::vector<double> out = g;
  for (int q = 0; q < (quarters % 4 + 4) % 4; ++q) {
    std::vector<double> next(out.size());
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) next[x * n + (n - 1 - y)] = out[y * n + x];
    out = std::move(next);
  }
  return out;
}

std::vector<double> scale_nn(const std::vector<double>& g, std::int64_t n, std::int64_t m) {
  std::vector<double> out(static_cast<std::size_t>(m * m), 0.0);
  for (std::int64_t y = 0; y < m; ++y)
    for (std::int64_t x = 0; x < m; ++x) {
      const std::int64_t sy = y * n / m, sx = x * n / m;
      out[y * m + x] = g[sy * n + sx];
    }
  return out;
}

std::int64_t scaled_size(std::int64_t frame, std::int64_t base) {
  switch (frame % 4) {
    case 1: case 3: return base + 2;
    case 2: return base + 4;
    default: return base;
  }
}

// Stamps fill half the frame edge so a patch-grid encoder sees texture in a
// fair share of patches; intensity shrinks with area to hold the stamp mass
// (and the paired-class L1 budget) at the 8x8 reference level.
std::int64_t stamp_side(std::int64_t frame_size) {
  return std::max<std::int64_t>(kStamp, frame_size / 2);
}

}  // namespace

std::string motion_name(Motion m) {
  switch (m) {
    case Motion::LeftToRight: return "left_to_right";
    case Motion::RightToLeft: return "right_to_left";
    case Motion::UpToDown: return "up_to_down";
    case Motion::Rotate: return "rotate";
    case Motion::ScalePulse: return "scale_pulse";
    case Motion::Static: return "static";
  }
  throw std::invalid_argument("unknown motion id " + std::to_string(static_cast<int>(m)));
}

std::vector<double> texture_stamp(int texture_id, std::int64_t size) {
  std::vector<double> g(static_cast<std::size_t>(size * size), 0.0);
  fill_stamp(texture_id, size, g);
  for (double& v : g) v = quantize(v);
  return g;
}

std::vector<std::pair<std::int64_t, std::int64_t>> motion_trace(Motion m, std::int64_t frames,
                                                                std::int64_t frame_size,
                                                                std::int64_t stamp_size,
                                                                std::uint64_t jitter_seed) {
  SplitMix64 rng(jitter_seed);
  const std::int64_t hi = frame_size - stamp_size;  // max usable top-left
  const std::int64_t jy = 1 + rng.uniform_int(hi - 1);
  const std::int64_t j0 = rng.uniform_int(3);
  const std::int64_t j1 = rng.uniform_int(3);
  std::vector<std::pair<std::int64_t, std::int64_t>> trace(static_cast<std::size_t>(frames));
  auto lerp = [&](std::int64_t a, std::int64_t b, std::int64_t t) {
    return frames == 1 ? a
                       : a + static_cast<std::int64_t>(std::llround(
                                 static_cast<double>((b - a) * t) / static_cast<double>(frames - 1)));
  };
  switch (m) {
    case Motion::LeftToRight:
      for (std::int64_t t = 0; t < frames; ++t) trace[t] = {jy, lerp(j0, hi - j1, t)};
      break;
    case Motion::RightToLeft: {
      // exactly the reversed left-to-right position sequence for this seed
      auto fwd = trace;
      for (std::int64_t t = 0; t < frames; ++t) fwd[t] = {jy, lerp(j0, hi - j1, t)};
      for (std::int64_t t = 0; t < frames; ++t) trace[t] = fwd[frames - 1 - t];
      break;
    }
    case Motion::UpToDown: {
      const std::int64_t jx = 1 + rng.uniform_int(hi - 1);
      for (std::int64_t t = 0; t < frames; ++t) trace[t] = {lerp(j0, hi - j1, t), jx};
      break;
    }
    case Motion::Rotate:
    case Motion::ScalePulse:
    case Motion::Static: {
      const std::int64_t cy = hi / 2 - 2 + rng.uniform_int(3);
      const std::int64_t cx = hi / 2 - 2 + rng.uniform_int(3);
      for (std::int64_t t = 0; t < frames; ++t) trace[t] = {cy, cx};
      break;
    }
  }
  return trace;
}

VideoClip render_clip(const ClassSpec& spec, const CorpusConfig& config, std::uint64_t seed) {
  const std::int64_t S = config.frame_size, T = config.frames;
  if (S < kStamp + 6) {
    throw std::invalid_argument("frame size " + std::to_string(S) + " too small for stamps");
  }
  VideoClip clip{T, S, S, std::vector<double>(static_cast<std::size_t>(T * S * S), 0.0)};
  const std::int64_t side = stamp_side(S);
  const double gain = static_cast<double>(kStamp * kStamp) / static_cast<double>(side * side);
  std::vector<double> base = texture_stamp(spec.texture_id, side);
  for (double& v : base) v *= gain;
  const auto trace = motion_trace(spec.motion, T, S, side, seed);
  SplitMix64 phase_rng(derive_seed(seed, 7));
  const std::int64_t phase = phase_rng.uniform_int(4);  // pulse/rotation phase jitter
  for (std::int64_t t = 0; t < T; ++t) {
    std::vector<double> stamp = base;
    std::int64_t n = side;
    auto [y0, x0] = trace[static_cast<std::size_t>(t)];
    if (spec.motion == Motion::Rotate) {
      stamp = rotate_quarter(base, side, static_cast<int>((t + phase) % 4));
    } else if (spec.motion == Motion::ScalePulse) {
      n = scaled_size(t + phase, side);
      stamp = scale_nn(base, side, n);
      y0 = std::clamp<std::int64_t>(y0 - (n - side) / 2, 0, S - n);
      x0 = std::clamp<std::int64_t>(x0 - (n - side) / 2, 0, S - n);
    }
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x)
        clip.at(t, y0 + y, x0 + x) = quantize(stamp[y * n + x]);
  }
  return clip;
}

std::vector<ClassSpec> default_class_set(int classes) {
  if (classes < 2 || classes > kNumTextures * kNumMotions) {
    throw std::invalid_argument("class count " + std::to_string(classes) + " outside [2," +
                                std::to_string(kNumTextures * kNumMotions) + "]");
  }
  std::vector<ClassSpec> out;
  // texture-paired opposite translations first (every texture lands in a
  // temporal pair, every motion in a spatial pair), then the other motions
  for (int t = 0; t < kNumTextures && static_cast<int>(out.size()) < classes; ++t) {
    out.push_back({static_cast<int>(out.size()), t, Motion::LeftToRight});
    if (static_cast<int>(out.size()) < classes)
      out.push_back({static_cast<int>(out.size()), t, Motion::RightToLeft});
  }
  for (int m = 2; m < kNumMotions; ++m)
    for (int t = 0; t < kNumTextures && static_cast<int>(out.size()) < classes; ++t)
      out.push_back({static_cast<int>(out.size()), t, static_cast<Motion>(m)});
  return out;
}

std::vector<std::pair<ClassSpec, ClassSpec>> make_confusable_pairs(int n_pairs) {
  if (n_pairs < 1) throw std::invalid_argument("n_pairs must be >= 1");
  std::vector<std::pair<ClassSpec, ClassSpec>> out;
  for (int i = 0; i < n_pairs; ++i) {
    const int t = i % kNumTextures;
    // temporal pair: shared texture, opposite motions
    out.push_back({{2 * i, t, Motion::LeftToRight}, {2 * i + 1, t, Motion::RightToLeft}});
    // spatial pair: shared motion, different textures
    out.push_back(
        {{2 * i, t, Motion::LeftToRight}, {2 * i, (t + 1) % kNumTextures, Motion::LeftToRight}});
  }
  return out;
}

Corpus make_corpus(const CorpusConfig& config) {
  Corpus corpus;
  corpus.config = config;
  corpus.classes = default_class_set(config.classes);
  std::int64_t id = 0;
  for (const ClassSpec& cls : corpus.classes) {
    for (int k = 0; k < config.train_per_class; ++k) {
      corpus.samples.push_back(
          {id++, cls.class_id, false,
           derive_seed(config.seed, static_cast<std::uint64_t>(cls.class_id) * 1000000 + k)});
    }
    for (int k = 0; k < config.test_per_class; ++k) {
      // test seeds live in a disjoint stream range from train seeds
      corpus.samples.push_back(
          {id++, cls.class_id, true,
           derive_seed(config.seed, static_cast<std::uint64_t>(cls.class_id) * 1000000 + 500000 + k)});
    }
  }
  return corpus;
}

VideoClip Corpus::render(const SampleRef& ref) const {
  return render_clip(classes[static_cast<std::size_t>(ref.class_id)], config, ref.seed);
}

std::vector<std::int64_t> Corpus::train_indices(int class_id) const {
  const std::int64_t per = config.train_per_class + config.test_per_class;
  std::vector<std::int64_t> out;
  for (int k = 0; k < config.train_per_class; ++k) out.push_back(class_id * per + k);
  return out;
}

std::vector<std::int64_t> Corpus::test_indices(int class_id) const {
  const std::int64_t per = config.train_per_class + config.test_per_class;
  std::vector<std::int64_t> out;
  for (int k = 0; k < config.test_per_class; ++k)
    out.push_back(class_id * per + config.train_per_class + k);
  return out;
}

TaskStream make_task_stream(int classes, int n_tasks, const std::string& style,
                            std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (n_tasks < 1 || n_tasks > classes) {
    throw std::invalid_argument("task count " + std::to_string(n_tasks) +
                                " unusable for " + std::to_string(classes) + " classes");
  }
  std::vector<int> order(static_cast<std::size_t>(classes));
  for (int i = 0; i < classes; ++i) order[static_cast<std::size_t>(i)] = i;
  SplitMix64 rng(derive_seed(seed, 0xA5));
  for (int i = classes - 1; i > 0; --i) {
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  }

  TaskStream stream;
  stream.style = style;
  stream.seed = seed;
  std::vector<int> sizes;
  if (style == "balanced") {
    if (classes % n_tasks != 0) {
      throw std::invalid_argument("balanced split of " + std::to_string(classes) + " classes into " +
                                  std::to_string(n_tasks) + " tasks leaves remainder " +
                                  std::to_string(classes % n_tasks));
    }
    sizes.assign(static_cast<std::size_t>(n_tasks), classes / n_tasks);
  } else if (style == "head_heavy") {
    if (n_tasks == 1) {
      sizes = {classes};
    } else {
      const int per = (classes / 2) / (n_tasks - 1);
      if (per < 1) {
        throw std::invalid_argument("head_heavy split needs at least " +
                                    std::to_string(2 * (n_tasks - 1)) + " classes for " +
                                    std::to_string(n_tasks) + " tasks");
      }
      sizes.assign(static_cast<std::size_t>(n_tasks), per);
      sizes[0] = classes - per * (n_tasks - 1);
    }
  } else {
    throw std::invalid_argument("unknown split style '" + style + "'");
  }
  std::size_t at = 0;
  for (int s : sizes) {
    Task task;
    for (int k = 0; k < s; ++k) task.class_ids.push_back(order[at++]);
    std::sort(task.class_ids.begin(), task.class_ids.end());
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
  nlohmann::ordered_json index;
  index["schema"] = "corpus/1";
  index["config"] = {{"frames", corpus.config.frames},
                     {"frame_size", corpus.config.frame_size},
                     {"classes", corpus.config.classes},
                     {"train_per_class", corpus.config.train_per_class},
                     {"test_per_class", corpus.config.test_per_class},
                     {"seed", corpus.config.seed}};
  index["classes"] = nlohmann::ordered_json::array();
  for (const ClassSpec& c : corpus.classes) {
    index["classes"].push_back({{"id", c.class_id},
                                {"texture", c.texture_id},
                                {"motion", motion_name(c.motion)},
                                {"motion_id", static_cast<int>(c.motion)}});
  }
  const std::int64_t clip_len =
      corpus.config.frames * corpus.config.frame_size * corpus.config.frame_size;
  index["samples"] = nlohmann::ordered_json::array();
  std::ofstream blob(dir + "/clips.f32", std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot write " + dir + "/clips.f32");
  for (const SampleRef& s : corpus.samples) {
    index["samples"].push_back({{"id", s.sample_id},
                                {"class", s.class_id},
                                {"split", s.test ? "test" : "train"},
                                {"seed", s.seed},
                                {"offset", s.sample_id * clip_len}});
    const VideoClip clip = corpus.render(s);
    std::vector<float> f(clip.pixels.begin(), clip.pixels.end());
    blob.write(reinterpret_cast<const char*>(f.data()),
               static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
  blob.close();
  std::ofstream out(dir + "/index.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + dir + "/index.json");
  out << index.dump(2) << "\n";
}

Corpus load_corpus(const std::string& dir) {
  std::ifstream in(dir + "/index.json");
  if (!in) throw std::runtime_error("cannot read " + dir + "/index.json");
  nlohmann::json index = nlohmann::json::parse(in);
  if (index.at("schema") != "corpus/1") {
    throw std::runtime_error("unsupported corpus schema in " + dir);
  }
  Corpus corpus;
  const auto& cfg = index.at("config");
  corpus.config.frames = cfg.at("frames").get<std::int64_t>();
  corpus.config.frame_size = cfg.at("frame_size").get<std::int64_t>();
  corpus.config.classes = cfg.at("classes").get<int>();
  corpus.config.train_per_class = cfg.at("train_per_class").get<int>();
  corpus.config.test_per_class = cfg.at("test_per_class").get<int>();
  corpus.config.seed = cfg.at("seed").get<std::uint64_t>();
  for (const auto& c : index.at("classes")) {
    corpus.classes.push_back({c.at("id").get<int>(), c.at("texture").get<int>(),
                              static_cast<Motion>(c.at("motion_id").get<int>())});
  }
  for (const auto& s : index.at("samples")) {
    corpus.samples.push_back({s.at("id").get<std::int64_t>(), s.at("class").get<int>(),
                              s.at("split").get<std::string>() == "test",
                              s.at("seed").get<std::uint64_t>()});
  }
  return corpus;
}

}  // namespace csta
