#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "countgraph/counting.hpp"
#include "countgraph/rng.hpp"
#include "countgraph/scene_io.hpp"

namespace countgraph {

/// Knobs for the synthetic counting problems. Scenes live on the unit
/// square; relevant and distractor objects share one box distribution so
/// attention is the only relevance signal.
struct SynthConfig {
  int n = 10;                    ///< proposals per scene
  int max_objects = 10;          ///< true count drawn uniformly from 0..max_objects
  double side = 0.1;             ///< object square side, in [0.05, 0.5]
  double dup_prob = 0.3;         ///< chance a relevant object emits an extra proposal
  double jitter = 0.0;           ///< per-corner uniform noise amplitude
  double attention_noise = 0.0;  ///< q: blends attention toward uniform random
  std::uint64_t seed = 0;
};

/// Side length of the placement grid. Distinct objects go into distinct
/// cells, which keeps their boxes disjoint; with zero jitter and zero
/// attention noise every generated scene is therefore ideal.
inline int placement_grid(double side) {
  return static_cast<int>(1.0 / side);
}

inline void validate(const SynthConfig& cfg) {
  if (cfg.n < 1) throw std::invalid_argument("synth: n must be >= 1");
  if (cfg.max_objects < 0 || cfg.max_objects > cfg.n) {
    throw std::invalid_argument("synth: max_objects must lie in 0..n");
  }
  if (!(cfg.side >= 0.05 && cfg.side <= 0.5)) {
    throw std::invalid_argument("synth: side must lie in [0.05, 0.5]");
  }
  if (!(cfg.dup_prob >= 0.0 && cfg.dup_prob <= 1.0)) {
    throw std::invalid_argument("synth: dup_prob must lie in [0, 1]");
  }
  if (!(cfg.jitter >= 0.0)) throw std::invalid_argument("synth: jitter must be >= 0");
  if (!(cfg.attention_noise >= 0.0 && cfg.attention_noise <= 1.0)) {
    throw std::invalid_argument("synth: attention_noise must lie in [0, 1]");
  }
  const int g = placement_grid(cfg.side);
  if (cfg.n > g * g) {
    throw std::invalid_argument(
        "synth: side too large to place n disjoint objects on the unit square");
  }
}

/// One labeled scene. true_count is the number of distinct relevant
/// objects; duplicates share a base box before jitter; attention is
/// (1-q) * ground_truth + q * uniform.
inline Scene generate_scene(const SynthConfig& cfg, std::mt19937_64& rng) {
  validate(cfg);
  const int relevant = uniform_int(rng, 0, cfg.max_objects);

  // Extra proposals for duplicated relevant objects, capped by the slots
  // left after giving every relevant object its base proposal.
  int free_slots = cfg.n - relevant;
  std::vector<char> duplicated(static_cast<std::size_t>(relevant), 0);
  for (int i = 0; i < relevant; ++i) {
    const bool want = u01(rng) < cfg.dup_prob;
    if (want && free_slots > 0) {
      duplicated[static_cast<std::size_t>(i)] = 1;
      --free_slots;
    }
  }
  const int distractors = free_slots;
  const int objects = relevant + distractors;

  // Distinct grid cells keep distinct objects disjoint.
  const int g = placement_grid(cfg.side);
  std::vector<int> cells(static_cast<std::size_t>(g) * static_cast<std::size_t>(g));
  std::iota(cells.begin(), cells.end(), 0);
  for (int i = 0; i < objects; ++i) {
    const auto j = static_cast<std::size_t>(i) +
                   uniform_below(rng, cells.size() - static_cast<std::size_t>(i));
    std::swap(cells[static_cast<std::size_t>(i)], cells[j]);
  }

  const double cell = 1.0 / g;
  const double slack = cell - cfg.side;
  std::vector<Box> bases;
  bases.reserve(static_cast<std::size_t>(objects));
  for (int i = 0; i < objects; ++i) {
    const int cx = cells[static_cast<std::size_t>(i)] % g;
    const int cy = cells[static_cast<std::size_t>(i)] / g;
    const double x = cx * cell + u01(rng) * slack;
    const double y = cy * cell + u01(rng) * slack;
    bases.push_back(Box{x, y, x + cfg.side, y + cfg.side});
  }

  Scene scene;
  scene.boxes.reserve(static_cast<std::size_t>(cfg.n));
  std::vector<char> ground_truth;
  ground_truth.reserve(static_cast<std::size_t>(cfg.n));
  for (int i = 0; i < relevant; ++i) {
    scene.boxes.push_back(bases[static_cast<std::size_t>(i)]);
    ground_truth.push_back(1);
    if (duplicated[static_cast<std::size_t>(i)]) {
      scene.boxes.push_back(bases[static_cast<std::size_t>(i)]);
      ground_truth.push_back(1);
    }
  }
  for (int i = relevant; i < objects; ++i) {
    scene.boxes.push_back(bases[static_cast<std::size_t>(i)]);
    ground_truth.push_back(0);
  }

  if (cfg.jitter > 0.0) {
    for (Box& b : scene.boxes) {
      const double x0 = b.x_min + (2.0 * u01(rng) - 1.0) * cfg.jitter;
      const double y0 = b.y_min + (2.0 * u01(rng) - 1.0) * cfg.jitter;
      const double x1 = b.x_max + (2.0 * u01(rng) - 1.0) * cfg.jitter;
      const double y1 = b.y_max + (2.0 * u01(rng) - 1.0) * cfg.jitter;
      b = Box{std::min(x0, x1), std::min(y0, y1), std::max(x0, x1), std::max(y0, y1)};
    }
  }

  scene.attention.resize(cfg.n);
  const double q = cfg.attention_noise;
  for (int i = 0; i < cfg.n; ++i) {
    const double truth = ground_truth[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    scene.attention[i] = q > 0.0 ? (1.0 - q) * truth + q * u01(rng) : truth;
  }
  scene.true_count = relevant;
  return scene;
}

/// Writes `count` scenes as JSONL. Byte-identical output for identical
/// (cfg, count).
inline void generate_dataset(const SynthConfig& cfg, int count, const std::string& path) {
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    scenes.push_back(generate_scene(cfg, rng));
  }
  write_scenes(path, scenes);
}

}  // namespace countgraph
