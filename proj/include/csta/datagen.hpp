#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csta/clip.hpp"

namespace csta {

// Per-frame transform programs. The left/right pair is exactly time-reversed:
// right_to_left visits the positions of left_to_right in reverse order.
enum class Motion : int {
  LeftToRight = 0,
  RightToLeft = 1,
  UpToDown = 2,
  Rotate = 3,
  ScalePulse = 4,
  Static = 5,
};

constexpr int kNumTextures = 10;
constexpr int kNumMotions = 6;

std::string motion_name(Motion m);

// Class identity is the (texture, motion) pair.
struct ClassSpec {
  int class_id = 0;
  int texture_id = 0;
  Motion motion = Motion::Static;
};

struct CorpusConfig {
  std::int64_t frames = 8;
  std::int64_t frame_size = 32;
  int classes = 20;  // default: 10 textures x {left_to_right, right_to_left}
  int train_per_class = 40;
  int test_per_class = 10;
  std::uint64_t seed = 42;
};

struct SampleRef {
  std::int64_t sample_id = 0;  // global, canonical order
  int class_id = 0;
  bool test = false;
  std::uint64_t seed = 0;  // per-sample render seed
};

struct Corpus {
  CorpusConfig config;
  std::vector<ClassSpec> classes;
  std::vector<SampleRef> samples;  // canonical order: class-major, train then test

  VideoClip render(const SampleRef& ref) const;
  std::vector<std::int64_t> train_indices(int class_id) const;
  std::vector<std::int64_t> test_indices(int class_id) const;
};

// The texture stamp a class draws per frame, as a dense grid in [0,1].
// Exposed for histogram-style tests.
std::vector<double> texture_stamp(int texture_id, std::int64_t size);

// Top-left positions of the stamp for every frame of a motion program.
std::vector<std::pair<std::int64_t, std::int64_t>> motion_trace(Motion m, std::int64_t frames,
                                                                std::int64_t frame_size,
                                                                std::int64_t stamp_size,
                                                                std::uint64_t jitter_seed);

VideoClip render_clip(const ClassSpec& spec, const CorpusConfig& config, std::uint64_t seed);

// One temporal pair (same texture, opposite motions) and one spatial pair
// (same motion, different textures) per requested unit.
std::vector<std::pair<ClassSpec, ClassSpec>> make_confusable_pairs(int n_pairs);

std::vector<ClassSpec> default_class_set(int classes);

Corpus make_corpus(const CorpusConfig& config);

struct Task {
  std::vector<int> class_ids;
};

struct TaskStream {
  std::vector<Task> tasks;
  std::string style;  // "balanced" | "head_heavy"
  std::uint64_t seed = 0;
};

// balanced: equal class counts (count must divide); head_heavy: ~half the
// classes in task 0, remainder split evenly across the rest.
TaskStream make_task_stream(int classes, int n_tasks, const std::string& style,
                            std::uint64_t seed);

// Corpus export: raw little-endian float32 clip blob + JSON index. Bit-exact
// round trip (pixel values are quantized to 1/4096 so f32 is lossless).
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace csta
