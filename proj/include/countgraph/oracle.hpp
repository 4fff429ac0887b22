#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "countgraph/counting.hpp"
#include "countgraph/union_find.hpp"

namespace countgraph {

/// Tolerance for classifying attention as binary and IoU as 0-or-1.
inline constexpr double kIdealTol = 1e-9;

/// An ideal scene has binary attention and pairwise IoU of exactly 0 or 1
/// (up to kIdealTol): the regime in which counting is provably exact.
inline bool is_ideal(const Scene& scene) {
  for (Eigen::Index i = 0; i < scene.attention.size(); ++i) {
    const double a = scene.attention[i];
    if (std::min(a, 1.0 - a) > kIdealTol) return false;
  }
  const auto n = scene.boxes.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double v = iou(scene.boxes[i], scene.boxes[j]);
      if (v > kIdealTol && v < 1.0 - kIdealTol) return false;
    }
  }
  return true;
}

/// Ground-truth count for an ideal scene: proposals are grouped into
/// equivalence classes by IoU = 1 (transitive for identical boxes), and
/// a class counts when any member carries attention 1. Rejects non-ideal
/// scenes.
inline int exact_count(const Scene& scene) {
  validate(scene);
  if (!is_ideal(scene)) {
    throw std::invalid_argument(
        "exact_count: scene is not ideal (fractional attention or partial overlap)");
  }
  const auto n = static_cast<int>(scene.boxes.size());
  UnionFind groups(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      if (iou(scene.boxes[i], scene.boxes[j]) >= 1.0 - kIdealTol) {
        groups.unite(i, j);
      }
    }
  }
  std::vector<char> relevant(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    if (scene.attention[i] >= 1.0 - kIdealTol) {
      relevant[static_cast<std::size_t>(groups.find(i))] = 1;
    }
  }
  int count = 0;
  for (int i = 0; i < n; ++i) {
    if (groups.find(i) == i && relevant[static_cast<std::size_t>(i)]) ++count;
  }
  return count;
}

/// Central-difference gradients of loss(gated_output) w.r.t. every Plf
/// raw weight and every attention entry. Independent of the analytic
/// backward path; this is the reference the analytic gradients are
/// checked against. Attention entries need h of headroom inside [0,1].
inline CountGrads fd_gradient(const CountParams& params, const Scene& scene,
                              const std::function<double(const Eigen::VectorXd&)>& loss,
                              double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_gradient: h must be positive");

  const auto eval_loss = [&](const CountParams& p, const Scene& s) {
    return loss(forward(p, s).gated_output);
  };

  CountGrads grads;
  for (std::size_t k = 0; k < 8; ++k) {
    const std::vector<double>& raw = params.f[k].raw_weights();
    std::vector<double>& out = grads.plf_weights[k];
    out.assign(raw.size(), 0.0);
    for (std::size_t w = 0; w < raw.size(); ++w) {
      CountParams p = params;
      std::vector<double> bumped = raw;
      bumped[w] = raw[w] + h;
      p.f[k] = Plf(bumped);
      const double up = eval_loss(p, scene);
      bumped[w] = raw[w] - h;
      p.f[k] = Plf(bumped);
      const double down = eval_loss(p, scene);
      out[w] = (up - down) / (2.0 * h);
    }
  }

  const auto n = scene.attention.size();
  grads.attention = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scene s = scene;
    s.attention[i] = scene.attention[i] + h;
    const double up = eval_loss(params, s);
    s.attention[i] = scene.attention[i] - h;
    const double down = eval_loss(params, s);
    grads.attention[i] = (up - down) / (2.0 * h);
  }
  return grads;
}

}  // namespace countgraph
